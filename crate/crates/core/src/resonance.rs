//! Resonance geometry: the sets O_m and ω⁽¹⁾, the Step-II classification of
//! resonant indices, pole detection for blocks and the block projector P.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{hermitian_eigenvalues, FiberMatrix, DEFAULT_DIM_CAP};
use crate::lattice::{dual_vector, enumerate_box, LatticeIndex, QPParams};
use crate::potential::PotentialSpec;
use crate::profile::ParameterProfile;

const TAU: f64 = 2.0 * PI;

/// Finite union of disjoint closed arcs, stored as sorted sub-intervals of [0, 2π).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AngleSet {
    pub intervals: Vec<(f64, f64)>,
}

impl AngleSet {
    pub fn empty() -> Self {
        AngleSet { intervals: Vec::new() }
    }

    pub fn full() -> Self {
        AngleSet { intervals: vec![(0.0, TAU)] }
    }

    /// Union of arbitrary arcs [a, b] (b ≥ a, any real offset).
    pub fn from_arcs(arcs: &[(f64, f64)]) -> Self {
        let mut pieces = Vec::new();
        for &(a, b) in arcs {
            if b < a {
                continue;
            }
            if b - a >= TAU {
                return Self::full();
            }
            let s = a.rem_euclid(TAU);
            let e = s + (b - a);
            if e > TAU {
                pieces.push((s, TAU));
                pieces.push((0.0, e - TAU));
            } else {
                pieces.push((s, e));
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (a, b) in pieces {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        AngleSet { intervals: out }
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, phi: f64) -> bool {
        let x = phi.rem_euclid(TAU);
        let i = self.intervals.partition_point(|iv| iv.1 < x);
        i < self.intervals.len() && self.intervals[i].0 <= x
    }

    pub fn complement(&self) -> Self {
        let mut out = Vec::new();
        let mut start = 0.0;
        for &(a, b) in &self.intervals {
            if a > start {
                out.push((start, a));
            }
            start = b;
        }
        if start < TAU {
            out.push((start, TAU));
        }
        AngleSet { intervals: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        let arcs: Vec<(f64, f64)> =
            self.intervals.iter().chain(other.intervals.iter()).copied().collect();
        Self::from_arcs(&arcs)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a, b) = self.intervals[i];
            let (c, d) = other.intervals[j];
            let lo = a.max(c);
            let hi = b.min(d);
            if lo <= hi {
                out.push((lo, hi));
            }
            if b < d {
                i += 1;
            } else {
                j += 1;
            }
        }
        AngleSet { intervals: out }
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.intersect(&other.complement())
    }

    /// The image under φ ↦ φ + π.
    pub fn shifted_by_pi(&self) -> Self {
        let arcs: Vec<(f64, f64)> = self.intervals.iter().map(|(a, b)| (a + PI, b + PI)).collect();
        Self::from_arcs(&arcs)
    }
}

/// |k(φ) + p_m|² − k² for k(φ) = k(cos φ, sin φ).
pub fn energy_offset(phi: f64, k: f64, m: &LatticeIndex, params: &QPParams) -> f64 {
    let p = dual_vector(m, params).p;
    p[0] * p[0] + p[1] * p[1] + 2.0 * k * (phi.cos() * p[0] + phi.sin() * p[1])
}

pub fn step1_resonant(
    phi: f64,
    k: f64,
    m: &LatticeIndex,
    tau: f64,
    profile: &ParameterProfile,
    params: &QPParams,
) -> bool {
    energy_offset(phi, k, m, params).abs() <= tau / profile.tau * profile.t1
}

/// Arcs of φ with |p² + 2kp cos(φ − φ_m)| ≤ t.
pub fn resonance_arcs(m: &LatticeIndex, k: f64, t: f64, params: &QPParams) -> Vec<(f64, f64)> {
    let d = dual_vector(m, params);
    let p = d.len();
    if p == 0.0 {
        return if t >= 0.0 { vec![(0.0, TAU)] } else { Vec::new() };
    }
    let lo = (-t - p * p) / (2.0 * k * p);
    let hi = (t - p * p) / (2.0 * k * p);
    if lo > 1.0 || hi < -1.0 {
        return Vec::new();
    }
    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
    let a = hi.acos();
    let b = lo.acos();
    let phm = d.angle();
    if a == 0.0 && b == PI {
        return vec![(0.0, TAU)];
    }
    if a == 0.0 {
        return vec![(phm - b, phm + b)];
    }
    if b == PI {
        return vec![(phm + a, phm + TAU - a)];
    }
    vec![(phm + a, phm + b), (phm - b, phm - a)]
}

/// O_m(k, τ) with the Step-I threshold scaled by τ.
pub fn o_m(m: &LatticeIndex, k: f64, tau: f64, profile: &ParameterProfile, params: &QPParams) -> AngleSet {
    AngleSet::from_arcs(&resonance_arcs(m, k, tau / profile.tau * profile.t1, params))
}

pub fn step1_indices(profile: &ParameterProfile) -> Vec<LatticeIndex> {
    enumerate_box(profile.r0_tilde).into_iter().filter(|m| !m.is_zero()).collect()
}

/// O⁽¹⁾(k, factor·τ) ∩ [0, 2π).
pub fn build_o1(k: f64, factor: f64, profile: &ParameterProfile, params: &QPParams) -> AngleSet {
    let t = factor * profile.t1 * (k / profile.k).powf(1.0 - 40.0 * profile.mu * profile.delta);
    let arcs: Vec<(f64, f64)> = step1_indices(profile)
        .iter()
        .flat_map(|m| resonance_arcs(m, k, t, params))
        .collect();
    AngleSet::from_arcs(&arcs)
}

pub fn build_omega1(k: f64, profile: &ParameterProfile, params: &QPParams) -> AngleSet {
    build_o1(k, 1.0, profile, params).complement()
}

/// φ_m^±: the two zeros of p² + 2kp cos(φ − φ_m), if real.
pub fn phi_pm(m: &LatticeIndex, k: f64, params: &QPParams) -> Option<(f64, f64)> {
    let d = dual_vector(m, params);
    let p = d.len();
    let c = -p / (2.0 * k);
    if p == 0.0 || c < -1.0 {
        return None;
    }
    let a = c.acos();
    Some(((d.angle() + a).rem_euclid(TAU), (d.angle() - a).rem_euclid(TAU)))
}

/// Disc radius around φ_m^± containing O_m at threshold t.
/// `None` means O_m is empty (p > 4k).
pub fn lemma31_radius(p: f64, k: f64, t: f64, tau: f64) -> Option<f64> {
    if p > 4.0 * k {
        return None;
    }
    if (4.0 * k * k - p * p).abs() <= 4.0 * t {
        return Some(32.0 * (tau * t).sqrt() / k);
    }
    let s = (1.0 - p * p / (4.0 * k * k)).max(0.0).sqrt();
    Some(t / (k * p * s))
}

fn arc_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Number of O_m arcs (m ∈ Ω̃\{0}) not contained in a Φ_m^± disc.
pub fn omega1_disc_violations(k: f64, profile: &ParameterProfile, params: &QPParams) -> usize {
    let t = profile.t1 * (k / profile.k).powf(1.0 - 40.0 * profile.mu * profile.delta);
    let mut bad = 0;
    for m in step1_indices(profile) {
        let arcs = resonance_arcs(&m, k, t, params);
        let p = dual_vector(&m, params).len();
        let Some(r) = lemma31_radius(p, k, t, profile.tau) else {
            bad += arcs.len();
            continue;
        };
        let Some((pp, pm)) = phi_pm(&m, k, params) else {
            // p > 2k: the arc is centered at φ_m + π
            let c = dual_vector(&m, params).angle() + PI;
            bad += arcs
                .iter()
                .filter(|(a, b)| arc_dist(*a, c).max(arc_dist(*b, c)) > r)
                .count();
            continue;
        };
        for (a, b) in arcs {
            let inside = |c: f64| arc_dist(a, c) <= r && arc_dist(b, c) <= r && (b - a) <= 2.0 * r;
            if !(inside(pp) || inside(pm)) {
                bad += 1;
            }
        }
    }
    bad
}

/// Dual vectors on a box, precomputed once per α.
#[derive(Clone, Debug)]
pub struct DualTable {
    pub radius: i64,
    pub indices: Vec<LatticeIndex>,
    pub p: Vec<[f64; 2]>,
}

impl DualTable {
    pub fn new(radius: i64, params: &QPParams) -> Self {
        let indices = enumerate_box(radius);
        let p = indices.iter().map(|m| dual_vector(m, params).p).collect();
        DualTable { radius, indices, p }
    }

    fn offsets(&self, phi: f64, k: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (c, s) = (phi.cos(), phi.sin());
        self.p.iter().enumerate().map(move |(i, p)| {
            (i, p[0] * p[0] + p[1] * p[1] + 2.0 * k * (c * p[0] + s * p[1]))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Strength {
    Unlabeled,
    Weak,
    Strong,
}

#[derive(Clone, Debug, Serialize)]
pub struct Subset {
    /// m_{j,s}
    pub center: LatticeIndex,
    pub n_minus: i64,
    pub n_plus: i64,
    pub t_q: f64,
    pub members: Vec<LatticeIndex>,
    pub strength: Strength,
    pub poles: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterClass {
    pub points: Vec<LatticeIndex>,
    pub colinear: bool,
    pub direction: Option<LatticeIndex>,
    pub p_q: f64,
    pub t_perp: f64,
    pub trivial: bool,
    pub subsets: Vec<Subset>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterDecomposition {
    pub phi0: f64,
    pub k: f64,
    pub m: Vec<LatticeIndex>,
    pub m_prime: Vec<LatticeIndex>,
    pub m1: Vec<LatticeIndex>,
    pub classes: Vec<ClusterClass>,
    /// Poles of each M₁ point in the strength window.
    pub m1_poles: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    M1(usize),
    Subset(usize, usize),
}

impl ClusterDecomposition {
    /// Where each m ∈ M ended up; `Err` lists points claimed twice or never.
    pub fn assignment(&self) -> std::result::Result<BTreeMap<LatticeIndex, Slot>, Vec<LatticeIndex>> {
        let mset: BTreeSet<LatticeIndex> = self.m.iter().copied().collect();
        let mut out = BTreeMap::new();
        let mut bad = Vec::new();
        for (i, m) in self.m1.iter().enumerate() {
            if out.insert(*m, Slot::M1(i)).is_some() {
                bad.push(*m);
            }
        }
        for (j, c) in self.classes.iter().enumerate() {
            for (s, sub) in c.subsets.iter().enumerate() {
                for m in sub.members.iter().filter(|m| mset.contains(m)) {
                    if out.insert(*m, Slot::Subset(j, s)).is_some() {
                        bad.push(*m);
                    }
                }
            }
        }
        bad.extend(mset.iter().filter(|m| !out.contains_key(m)));
        if bad.is_empty() {
            Ok(out)
        } else {
            Err(bad)
        }
    }

    pub fn subsets(&self) -> impl Iterator<Item = (usize, &ClusterClass, &Subset)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(j, c)| c.subsets.iter().map(move |s| (j, c, s)))
    }
}

fn union_find_groups(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if edge(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn unit(p: [f64; 2]) -> [f64; 2] {
    let l = p[0].hypot(p[1]);
    [p[0] / l, p[1] / l]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Step-II classification at the base angle φ₀.
pub fn classify(
    phi0: f64,
    k: f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
    table: &DualTable,
) -> Result<ClusterDecomposition> {
    let base_t = profile.base_factor * profile.t1;
    let r1 = profile.r1;
    if table.radius < 2 * r1 {
        return Err(Error::Config(format!("dual table radius {} < 2 r1", table.radius)));
    }
    for m in step1_indices(profile) {
        if energy_offset(phi0, k, &m, params).abs() <= base_t {
            return Err(Error::ResonantBase(phi0));
        }
    }
    let mut m_set = Vec::new();
    let mut m_prime = Vec::new();
    for (i, e) in table.offsets(phi0, k) {
        let idx = table.indices[i];
        if idx.is_zero() || e.abs() > profile.t_star {
            continue;
        }
        let n = idx.triple_norm();
        if n <= profile.r0_tilde {
            // Step-I indices are handled by ω⁽¹⁾
            continue;
        }
        m_prime.push(idx);
        if n <= r1 {
            m_set.push(idx);
        }
    }
    let dist = |a: &LatticeIndex, b: &LatticeIndex| (*a - *b).triple_norm() as f64;
    let c = profile.c_delta;
    let mut m1 = Vec::new();
    let mut m2 = BTreeSet::new();
    for m in &m_set {
        let near = m_prime.iter().any(|o| o != m && dist(m, o) <= c);
        if near {
            m2.insert(*m);
        } else {
            m1.push(*m);
        }
    }
    let groups = union_find_groups(m_prime.len(), |i, j| dist(&m_prime[i], &m_prime[j]) <= 3.0 * c);
    let kvec = [k * phi0.cos(), k * phi0.sin()];
    let mut classes = Vec::new();
    let mut claimed: BTreeSet<LatticeIndex> = BTreeSet::new();
    for g in groups {
        let points: Vec<LatticeIndex> = g.iter().map(|&i| m_prime[i]).collect();
        let seeds: Vec<LatticeIndex> = points.iter().filter(|m| m2.contains(m)).copied().collect();
        if seeds.is_empty() {
            continue;
        }
        let base = points[0];
        let diffs: Vec<LatticeIndex> = points[1..].iter().map(|m| *m - base).collect();
        let dir = diffs.first().copied();
        let colinear = match dir {
            None => true,
            Some(d) => diffs.iter().all(|x| params.colinear(x, &d).is_some()),
        };
        let direction = if colinear {
            dir.and_then(|d| spec.direction_of(&d, params)).filter(|dd| {
                diffs.iter().all(|x| params.colinear(x, &dd.generator) == Some(true))
            })
        } else {
            None
        };
        let (dir_idx, p_q, t_perp) = match direction {
            Some(d) => {
                let nu = unit(dual_vector(&d.generator, params).p);
                let perp = [-nu[1], nu[0]];
                let pm = dual_vector(&seeds[0], params).p;
                (Some(d.generator), d.p_q, dot([kvec[0] + pm[0], kvec[1] + pm[1]], perp))
            }
            None => (None, 0.0, 0.0),
        };
        let a = k * k - t_perp * t_perp;
        let trivial = direction.is_none() || a.abs() > profile.trivial_cut;
        let mut subsets = Vec::new();
        if trivial {
            for m in seeds {
                if claimed.insert(m) {
                    subsets.push(Subset {
                        center: m,
                        n_minus: 0,
                        n_plus: 0,
                        t_q: 0.0,
                        members: vec![m],
                        strength: Strength::Unlabeled,
                        poles: Vec::new(),
                    });
                }
            }
        } else {
            let g = dir_idx.unwrap();
            let nu = unit(dual_vector(&g, params).p);
            let reach = (a + profile.t_star).max(0.0).sqrt();
            let mut centers: BTreeSet<LatticeIndex> = BTreeSet::new();
            for m in seeds {
                if claimed.contains(&m) {
                    continue;
                }
                let pm = dual_vector(&m, params).p;
                let t_m = dot([kvec[0] + pm[0], kvec[1] + pm[1]], nu);
                let n0 = (t_m / p_q).floor() as i64;
                let center = m - n0 * g;
                if !centers.insert(center) {
                    continue;
                }
                let t_q = t_m - n0 as f64 * p_q;
                let n_plus = (((reach - t_q) / p_q).floor() as i64).max(1);
                let n_minus = (((-reach - t_q) / p_q).ceil() as i64).min(-1);
                let members: Vec<LatticeIndex> =
                    (n_minus..=n_plus).map(|n| center + n * g).collect();
                for x in &members {
                    if m_set.contains(x) {
                        claimed.insert(*x);
                    }
                }
                subsets.push(Subset {
                    center,
                    n_minus,
                    n_plus,
                    t_q,
                    members,
                    strength: Strength::Unlabeled,
                    poles: Vec::new(),
                });
            }
        }
        subsets.sort_by_key(|s| s.center);
        classes.push(ClusterClass {
            points,
            colinear,
            direction: dir_idx,
            p_q,
            t_perp,
            trivial,
            subsets,
        });
    }
    m1.retain(|m| !claimed.contains(m));
    Ok(ClusterDecomposition {
        phi0,
        k,
        m: m_set,
        m_prime,
        m1,
        classes,
        m1_poles: Vec::new(),
    })
}

/// Block matrix H restricted to `members` at quasimomentum κ(φ)(cos φ, sin φ).
fn block_at(
    members: &[LatticeIndex],
    phi: f64,
    kappa: f64,
    spec: &PotentialSpec,
    params: &QPParams,
) -> Result<FiberMatrix> {
    FiberMatrix::assemble([kappa * phi.cos(), kappa * phi.sin()], members, spec, params)
}

fn block_shifted_eigs(
    members: &[LatticeIndex],
    phi: f64,
    kappa: f64,
    k: f64,
    spec: &PotentialSpec,
    params: &QPParams,
) -> Result<Vec<f64>> {
    let m = block_at(members, phi, kappa, spec, params)?;
    Ok(hermitian_eigenvalues(&m.entries, DEFAULT_DIM_CAP)?.into_iter().map(|l| l - k * k).collect())
}

/// A zero of one eigenvalue branch of the block, with the local slope dλ/dφ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Pole {
    pub phi: f64,
    pub branch: usize,
    pub slope: f64,
}

/// Real zeros of λ_n(block at κ(φ)) − k² in [a, b], found by scan and bisection.
pub fn block_poles(
    members: &[LatticeIndex],
    k: f64,
    interval: (f64, f64),
    kappa: &dyn Fn(f64) -> f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> Result<Vec<Pole>> {
    let (a, b) = interval;
    let npts = profile.scan_points.max(2);
    let f = |phi: f64| block_shifted_eigs(members, phi, kappa(phi), k, spec, params);
    let mut prev_phi = a;
    let mut prev = f(a)?;
    let mut out = Vec::new();
    for i in 1..npts {
        let phi = a + (b - a) * i as f64 / (npts - 1) as f64;
        let cur = f(phi)?;
        for n in 0..cur.len() {
            let (u, v) = (prev[n], cur[n]);
            if u == 0.0 {
                push_pole(&mut out, prev_phi, n, &f)?;
                continue;
            }
            if (u < 0.0) != (v < 0.0) && v != 0.0 {
                let (mut lo, mut hi, mut flo) = (prev_phi, phi, u);
                while hi - lo > profile.bisect_tol {
                    let mid = 0.5 * (lo + hi);
                    let fm = f(mid)?[n];
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if (fm < 0.0) == (flo < 0.0) {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                push_pole(&mut out, 0.5 * (lo + hi), n, &f)?;
            }
        }
        if i == npts - 1 {
            for (n, v) in cur.iter().enumerate() {
                if *v == 0.0 {
                    push_pole(&mut out, phi, n, &f)?;
                }
            }
        }
        prev = cur;
        prev_phi = phi;
    }
    out.sort_by(|x, y| x.phi.total_cmp(&y.phi).then(x.branch.cmp(&y.branch)));
    out.dedup_by(|x, y| x.branch == y.branch && (x.phi - y.phi).abs() < 1e-9);
    Ok(out)
}

fn push_pole(
    out: &mut Vec<Pole>,
    phi: f64,
    branch: usize,
    f: &dyn Fn(f64) -> Result<Vec<f64>>,
) -> Result<()> {
    let h = 1e-6;
    let slope = (f(phi + h)?[branch] - f(phi - h)?[branch]) / (2.0 * h);
    out.push(Pole { phi, branch, slope });
    Ok(())
}

/// Closed-form zeros of |κ(φ) + p_m|² − k² for constant radial κ, restricted to [a, b].
pub fn singleton_poles(m: &LatticeIndex, k: f64, kappa: f64, interval: (f64, f64), params: &QPParams) -> Vec<f64> {
    let d = dual_vector(m, params);
    let p = d.len();
    if p == 0.0 {
        return Vec::new();
    }
    let c = (k * k - kappa * kappa - p * p) / (2.0 * kappa * p);
    if c.abs() > 1.0 {
        return Vec::new();
    }
    let a = c.acos();
    let mut out = Vec::new();
    for base in [d.angle() + a, d.angle() - a] {
        for shift in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let phi = base + shift * TAU;
            if phi >= interval.0 && phi <= interval.1 {
                out.push(phi);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    out
}

/// Labels every subset strong iff its block has a pole within 2W of φ₀ (at κ = k),
/// and records the M₁ pole lists.
pub fn strength(
    decomp: &mut ClusterDecomposition,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> Result<()> {
    let k = decomp.k;
    let w = 2.0 * profile.window;
    let iv = (decomp.phi0 - w, decomp.phi0 + w);
    let konst = move |_: f64| k;
    for class in decomp.classes.iter_mut() {
        for sub in class.subsets.iter_mut() {
            let poles = if sub.members.len() == 1 && spec.is_zero() {
                singleton_poles(&sub.members[0], k, k, iv, params)
            } else {
                block_poles(&sub.members, k, iv, &konst, spec, profile, params)?
                    .into_iter()
                    .map(|p| p.phi)
                    .collect()
            };
            sub.strength = if poles.is_empty() { Strength::Weak } else { Strength::Strong };
            sub.poles = poles;
        }
    }
    decomp.m1_poles = decomp
        .m1
        .iter()
        .map(|m| singleton_poles(m, k, k, iv, params))
        .collect();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BlockKind {
    M1Box,
    NontrivialWeak,
    TrivialStrong,
    NontrivialStrong,
}

#[derive(Clone, Debug, Serialize)]
pub struct Block {
    pub kind: BlockKind,
    pub members: Vec<LatticeIndex>,
    /// Number of strong subsets (or strong trivial points) that seeded the block.
    pub strong_subsets: usize,
    pub merged_from: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockProjector {
    pub core: Vec<LatticeIndex>,
    pub blocks: Vec<Block>,
    /// Ω(r₁) minus the core and the blocks.
    pub complement: Vec<LatticeIndex>,
    /// Largest number of strong subsets found in one strong cluster.
    pub max_strong_per_cluster: usize,
}

impl BlockProjector {
    /// Index sets in block order: core first.
    pub fn parts(&self) -> Vec<&[LatticeIndex]> {
        std::iter::once(self.core.as_slice())
            .chain(self.blocks.iter().map(|b| b.members.as_slice()))
            .collect()
    }

    /// Exact check of P_iVP_j = 0 (i ≠ j, core included) and disjointness.
    pub fn orthogonality_violations(&self, spec: &PotentialSpec) -> usize {
        let support: Vec<LatticeIndex> = spec.support();
        let mut owner: HashMap<LatticeIndex, usize> = HashMap::new();
        let mut bad = 0;
        for (i, part) in self.parts().iter().enumerate() {
            for m in *part {
                if owner.insert(*m, i).is_some() {
                    bad += 1;
                }
            }
        }
        for (i, part) in self.parts().iter().enumerate() {
            for m in *part {
                for q in &support {
                    if let Some(&j) = owner.get(&(*m + *q)) {
                        if j != i {
                            bad += 1;
                        }
                    }
                }
            }
        }
        bad
    }
}

fn v_adjacent(a: &[LatticeIndex], b: &HashSet<LatticeIndex>, support: &[LatticeIndex]) -> bool {
    a.iter().any(|m| b.contains(m) || support.iter().any(|q| b.contains(&(*m + *q))))
}

/// Builds P: the core Ω(δ), M₁ boxes, strong clusters with their weak branches and
/// standalone weak non-trivial subsets, all inside Ω(r₁).
pub fn assemble_projector(
    decomp: &ClusterDecomposition,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
) -> Result<BlockProjector> {
    let r1 = profile.r1;
    let c = profile.c_delta;
    let support = spec.support();
    let core: Vec<LatticeIndex> = enumerate_box(profile.r0);
    let mut raw: Vec<Block> = Vec::new();
    let box_radius = (c / 3.0).ceil() as i64 - 1;
    for m in &decomp.m1 {
        let members: Vec<LatticeIndex> = enumerate_box(box_radius.max(0)).into_iter().map(|d| *m + d).collect();
        raw.push(Block { kind: BlockKind::M1Box, members, strong_subsets: 0, merged_from: 1 });
    }
    let close = |a: &[LatticeIndex], b: &[LatticeIndex], r: f64| {
        a.iter().any(|x| b.iter().any(|y| ((*x - *y).triple_norm() as f64) <= r))
    };
    let mut max_strong = 0;
    for class in &decomp.classes {
        let strong: Vec<&Subset> =
            class.subsets.iter().filter(|s| s.strength == Strength::Strong).collect();
        let weak: Vec<&Subset> =
            class.subsets.iter().filter(|s| s.strength != Strength::Strong).collect();
        let groups = union_find_groups(strong.len(), |i, j| {
            close(&strong[i].members, &strong[j].members, 3.0 * c)
        });
        let mut used_weak = vec![false; weak.len()];
        for g in &groups {
            max_strong = max_strong.max(g.len());
            let mut members: BTreeSet<LatticeIndex> = BTreeSet::new();
            for &i in g {
                members.extend(strong[i].members.iter().copied());
            }
            if !class.trivial {
                let body: Vec<LatticeIndex> = members.iter().copied().collect();
                for (w, sub) in weak.iter().enumerate() {
                    if close(&sub.members, &body, profile.branch_radius as f64) {
                        members.extend(sub.members.iter().copied());
                        used_weak[w] = true;
                    }
                }
            }
            let kind = if class.trivial { BlockKind::TrivialStrong } else { BlockKind::NontrivialStrong };
            raw.push(Block { kind, members: members.into_iter().collect(), strong_subsets: g.len(), merged_from: 1 });
        }
        if !class.trivial {
            for (w, sub) in weak.iter().enumerate() {
                if !used_weak[w] {
                    raw.push(Block {
                        kind: BlockKind::NontrivialWeak,
                        members: sub.members.clone(),
                        strong_subsets: 0,
                        merged_from: 1,
                    });
                }
            }
        }
    }
    for b in raw.iter_mut() {
        b.members.retain(|m| m.triple_norm() <= r1);
    }
    raw.retain(|b| !b.members.is_empty());
    let core_set: HashSet<LatticeIndex> = core.iter().copied().collect();
    for b in &raw {
        if v_adjacent(&b.members, &core_set, &support) {
            return Err(Error::OverlapDetected(format!("{:?} block touches the core", b.kind)));
        }
    }
    let sets: Vec<HashSet<LatticeIndex>> =
        raw.iter().map(|b| b.members.iter().copied().collect()).collect();
    let groups = union_find_groups(raw.len(), |i, j| v_adjacent(&raw[i].members, &sets[j], &support));
    if !profile.merge_adjacent {
        if let Some(g) = groups.iter().find(|g| g.len() > 1) {
            return Err(Error::OverlapDetected(raw[g[0]].members[0].to_string()));
        }
    }
    let mut blocks = Vec::new();
    for g in groups {
        let mut members: BTreeSet<LatticeIndex> = BTreeSet::new();
        let mut kind = BlockKind::M1Box;
        let mut strong_subsets = 0;
        for &i in &g {
            members.extend(raw[i].members.iter().copied());
            kind = kind.max(raw[i].kind);
            strong_subsets += raw[i].strong_subsets;
        }
        blocks.push(Block { kind, members: members.into_iter().collect(), strong_subsets, merged_from: g.len() });
    }
    blocks.sort_by_key(|b| b.members[0]);
    let taken: HashSet<LatticeIndex> = blocks
        .iter()
        .flat_map(|b| b.members.iter().copied())
        .chain(core.iter().copied())
        .collect();
    let complement = enumerate_box(r1).into_iter().filter(|m| !taken.contains(m)).collect();
    Ok(BlockProjector { core, blocks, complement, max_strong_per_cluster: max_strong })
}

/// Classification, labeling and projector at one base angle.
pub fn projector_at(
    phi0: f64,
    k: f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
    table: &DualTable,
) -> Result<(ClusterDecomposition, BlockProjector)> {
    let mut d = classify(phi0, k, spec, profile, params, table)?;
    strength(&mut d, spec, profile, params)?;
    let p = assemble_projector(&d, spec, profile)?;
    Ok((d, p))
}

/// Solutions φ of λ⁽¹⁾(κ⁽¹⁾(φ)ν + p_m) = k² + ε₀ on the admissible part of O_m(k, ½)
/// near φ_m^±, found by dense scan and bisection.
pub fn appendix4_count(
    m: &LatticeIndex,
    k: f64,
    eps0: f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> Result<Vec<f64>> {
    let Some((pp, pm)) = phi_pm(m, k, params) else {
        return Ok(Vec::new());
    };
    let omega1 = build_omega1(k, profile, params);
    let half = 4.0 * k.powf(-1.0 + 2.0 * profile.delta);
    let p = dual_vector(m, params).p;
    let f = |phi: f64| -> Result<f64> {
        let kap = crate::isoenergetic::solve_radius(1, k * k, phi, spec, profile, params)?;
        let y = [kap * phi.cos() + p[0], kap * phi.sin() + p[1]];
        Ok(crate::perturb::shifted_level1(y, spec, profile, params)? - k * k - eps0)
    };
    let mut roots = Vec::new();
    for c in [pp, pm] {
        let (a, b) = (c - 2.0 * half, c + 2.0 * half);
        let n = 400;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=n {
            let phi = a + (b - a) * i as f64 / n as f64;
            if !omega1.contains(phi) {
                prev = None;
                continue;
            }
            let Ok(v) = f(phi) else {
                prev = None;
                continue;
            };
            if let Some((x0, v0)) = prev {
                if (v0 < 0.0) != (v < 0.0) {
                    let (mut lo, mut hi, mut flo) = (x0, phi, v0);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let fm = f(mid)?;
                        if (fm < 0.0) == (flo < 0.0) {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                        if hi - lo < 1e-13 {
                            break;
                        }
                    }
                    roots.push((0.5 * (lo + hi)).rem_euclid(TAU));
                }
            }
            prev = Some((phi, v));
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| arc_dist(*x, *y) < 1e-9);
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::default_potential;
    use proptest::prelude::*;

    fn params() -> QPParams {
        QPParams::default_alpha()
    }

    #[test]
    fn angle_set_algebra() {
        let s = AngleSet::from_arcs(&[(-0.5, 0.5), (1.0, 2.0), (1.5, 2.5)]);
        assert_eq!(s.intervals.len(), 3);
        assert!((s.measure() - 2.5).abs() < 1e-12);
        assert!(s.contains(0.2) && s.contains(TAU - 0.2) && !s.contains(0.7));
        let c = s.complement();
        assert!((c.measure() + s.measure() - TAU).abs() < 1e-12);
        assert!(s.intersect(&c).measure() < 1e-12);
        assert!((s.union(&c).measure() - TAU).abs() < 1e-12);
        assert_eq!(AngleSet::from_arcs(&[(0.0, 7.0)]), AngleSet::full());
    }

    #[test]
    fn step1_examples() {
        let p = params();
        let prof = ParameterProfile::desk(15.0);
        let far = LatticeIndex::new([10, 0], [0, 0]);
        assert!(dual_vector(&far, &p).len() > 4.0 * 15.0);
        for i in 0..360 {
            assert!(!step1_resonant(i as f64 * PI / 180.0, 15.0, &far, 1.0, &prof, &p));
        }
        let m = LatticeIndex::new([0, 0], [1, 0]);
        let (pp, pm) = phi_pm(&m, 15.0, &p).unwrap();
        assert!(step1_resonant(pp, 15.0, &m, 1.0, &prof, &p));
        assert!(step1_resonant(pm, 15.0, &m, 1e-9, &prof, &p));
        assert!(energy_offset(pp, 15.0, &m, &p).abs() < 1e-12);
    }

    #[test]
    fn arcs_match_pointwise_test() {
        let p = params();
        let prof = ParameterProfile::desk(25.0);
        for m in step1_indices(&prof) {
            let s = o_m(&m, 25.0, 1.0, &prof, &p);
            for i in 0..2000 {
                let phi = i as f64 * TAU / 2000.0 + 1e-4;
                let off = energy_offset(phi, 25.0, &m, &p).abs();
                if (off - prof.t1).abs() > 1e-9 {
                    assert_eq!(s.contains(phi), off <= prof.t1, "m={m} phi={phi}");
                }
            }
        }
    }

    #[test]
    fn omega1_is_symmetric_and_shrinks() {
        let p = params();
        let prof = ParameterProfile::desk(15.0);
        let mut last = f64::INFINITY;
        for k in [15.0, 25.0, 40.0, 60.0] {
            let pr = prof.with_k(k);
            let o1 = build_o1(k, 1.0, &pr, &p);
            let sh = o1.shifted_by_pi();
            assert!((o1.measure() - sh.measure()).abs() < 1e-12);
            assert!(o1.difference(&sh).measure() < 1e-9);
            assert!(o1.measure() <= last);
            last = o1.measure();
            assert_eq!(omega1_disc_violations(k, &pr, &p), 0);
            assert!(!build_omega1(k, &pr, &p).is_empty());
        }
    }

    #[test]
    fn singleton_poles_closed_form() {
        let p = params();
        let prof = ParameterProfile::desk(15.0);
        let v0 = PotentialSpec::zero(4);
        let m = LatticeIndex::new([1, 0], [-1, 1]);
        let (pp, _) = phi_pm(&m, 15.0, &p).unwrap();
        let iv = (pp - 0.01, pp + 0.01);
        let k = 15.0;
        let num = block_poles(&[m], k, iv, &|_| k, &v0, &prof, &p).unwrap();
        let exact = singleton_poles(&m, k, k, iv, &p);
        assert_eq!(num.len(), 1);
        assert_eq!(exact.len(), 1);
        assert!((num[0].phi - exact[0]).abs() < 1e-10);
        assert!((exact[0] - pp).abs() < 1e-12);
    }

    fn admissible_angles(k: f64, n: usize) -> Vec<f64> {
        let p = params();
        let prof = ParameterProfile::desk(k);
        let om = build_omega1(k, &prof, &p);
        (0..n).map(|i| 0.1 + i as f64 * TAU / n as f64).filter(|x| om.contains(*x)).collect()
    }

    #[test]
    fn classification_is_partition_consistent() {
        let p = params();
        let spec = default_potential(&p);
        for k in [15.0, 40.0] {
            let prof = ParameterProfile::desk(k);
            let table = DualTable::new(2 * prof.r1, &p);
            for phi in admissible_angles(k, 60) {
                let (d, proj) = projector_at(phi, k, &spec, &prof, &p, &table)
                    .or_else(|e| match e {
                        Error::OverlapDetected(_) => {
                            let mut d = classify(phi, k, &spec, &prof, &p, &table)?;
                            strength(&mut d, &spec, &prof, &p)?;
                            Ok((d, BlockProjector { core: vec![], blocks: vec![], complement: vec![], max_strong_per_cluster: 0 }))
                        }
                        e => Err(e),
                    })
                    .unwrap();
                assert!(d.assignment().is_ok(), "phi={phi}");
                for c in &d.classes {
                    if let Some(g) = c.direction {
                        for x in &c.points {
                            assert_eq!(p.colinear(&(*x - c.points[0]), &g).unwrap_or(true), true);
                        }
                    }
                    for s in &c.subsets {
                        assert!(c.trivial || (s.n_minus < 0 && s.n_plus > 0));
                        assert!(c.trivial || (0.0..c.p_q).contains(&s.t_q));
                    }
                    for (a, b) in c.subsets.iter().zip(c.subsets.iter().skip(1)) {
                        if !c.trivial {
                            assert!((a.n_plus - b.n_plus).abs() <= 1);
                            assert!((a.n_minus - b.n_minus).abs() <= 1);
                        }
                    }
                }
                assert_eq!(proj.orthogonality_violations(&spec), 0);
            }
        }
    }

    #[test]
    fn resonant_base_is_rejected() {
        let p = params();
        let prof = ParameterProfile::desk(15.0);
        let table = DualTable::new(8, &p);
        let m = LatticeIndex::new([0, 0], [1, 0]);
        let (pp, _) = phi_pm(&m, 15.0, &p).unwrap();
        let spec = default_potential(&p);
        assert!(matches!(classify(pp, 15.0, &spec, &prof, &p, &table), Err(Error::ResonantBase(_))));
    }

    #[test]
    fn empty_decomposition_gives_core_only() {
        let p = params();
        let spec = default_potential(&p);
        let prof = ParameterProfile::desk(15.0);
        let d = ClusterDecomposition {
            phi0: 0.0,
            k: 15.0,
            m: vec![],
            m_prime: vec![],
            m1: vec![],
            classes: vec![],
            m1_poles: vec![],
        };
        let proj = assemble_projector(&d, &spec, &prof).unwrap();
        assert!(proj.blocks.is_empty());
        assert_eq!(proj.core.len(), 17);
        assert_eq!(proj.complement.len() + 17, enumerate_box(4).len());
        assert_eq!(proj.orthogonality_violations(&spec), 0);
    }

    #[test]
    fn weak_and_strong_labels_match_rescan() {
        let p = params();
        let spec = default_potential(&p);
        let k = 25.0;
        let prof = ParameterProfile::desk(k);
        let table = DualTable::new(8, &p);
        for phi in admissible_angles(k, 40) {
            let mut d = classify(phi, k, &spec, &prof, &p, &table).unwrap();
            strength(&mut d, &spec, &prof, &p).unwrap();
            for (_, _, s) in d.subsets() {
                let w = 2.0 * prof.window;
                let fine = ParameterProfile { scan_points: 1600, ..prof.clone() };
                let n = block_poles(&s.members, k, (phi - w, phi + w), &|_| k, &spec, &fine, &p)
                    .unwrap()
                    .len();
                assert_eq!(n > 0, s.strength == Strength::Strong);
                // diagonal entries share a derivative sign over the window
                let signs: BTreeSet<bool> = s
                    .members
                    .iter()
                    .map(|m| {
                        let pm = dual_vector(m, &p).p;
                        (-pm[0] * phi.sin() + pm[1] * phi.cos()) > 0.0
                    })
                    .collect();
                assert_eq!(signs.len(), 1);
            }
        }
    }

    proptest! {
        #[test]
        fn step1_monotone_in_tau(phi in 0.0..TAU, a in 0.1f64..2.0, b in 0.0f64..2.0, s1 in -3i64..=3, s2 in -3i64..=3) {
            let p = params();
            let prof = ParameterProfile::desk(20.0);
            let m = LatticeIndex::new([s1, 0], [s2, 1]);
            if step1_resonant(phi, 20.0, &m, a, &prof, &p) {
                prop_assert!(step1_resonant(phi, 20.0, &m, a + b, &prof, &p));
            }
        }

        #[test]
        fn omega1_v_independent_membership(phi in 0.0..TAU) {
            let p = params();
            let prof = ParameterProfile::desk(15.0);
            let om = build_omega1(15.0, &prof, &p);
            let direct = step1_indices(&prof).iter().all(|m| energy_offset(phi, 15.0, m, &p).abs() > prof.t1);
            prop_assert_eq!(om.contains(phi), direct);
        }
    }
}
