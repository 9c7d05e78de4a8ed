//! Step-III structures: the second resonant set, the set M⁽²⁾ and the
//! simple/black/grey/white/non-resonant region map.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fiber::{hermitian_eigenvalues, FiberMatrix, DEFAULT_DIM_CAP};
use crate::inputs::Inputs;
use crate::isoenergetic::solve_radius_level1;
use crate::lattice::{dual_vector, enumerate_box, LatticeIndex, QPParams};
use crate::potential::PotentialSpec;
use crate::profile::{DiscRadius, ParameterProfile};
use crate::resonance::{
    block_poles, build_omega1, projector_at, AngleSet, DualTable, Pole,
};

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CapKind {
    /// M₁ point with p_m > 4k^δ and |2k − p_m| ≥ 1.
    M1Generic,
    /// M₁ point with |2k − p_m| < 1.
    M1Diameter,
    /// M₁ point with p_m < 4k^δ.
    M1Small,
    /// One chain subset M₂^{j,s}.
    Subset,
    /// Strong subsets in one strong cluster.
    StrongCluster,
}

impl CapKind {
    pub fn cap(&self) -> usize {
        match self {
            CapKind::M1Generic | CapKind::M1Small => 1,
            CapKind::M1Diameter | CapKind::Subset | CapKind::StrongCluster => 2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CapRecord {
    pub kind: CapKind,
    pub size: usize,
    pub count: usize,
}

impl CapRecord {
    pub fn ok(&self) -> bool {
        self.count <= self.kind.cap()
    }
}

/// Pole scan of one interval Δ around an admissible grid angle.
#[derive(Clone, Debug, Serialize)]
pub struct CellScan {
    pub phi0: f64,
    pub cell: (f64, f64),
    pub kappa0: f64,
    pub kappa_slope: f64,
    pub poles: Vec<Pole>,
    pub discs: Vec<(f64, f64)>,
    pub caps: Vec<CapRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SecondResonant {
    pub o2: AngleSet,
    pub omega2: AngleSet,
    pub cells: Vec<CellScan>,
    /// Admissible grid angles where the projector could not be built.
    pub failed: Vec<f64>,
}

impl SecondResonant {
    /// For every connected component of O⁽²⁾: (length, number of discs × 2 × largest radius).
    pub fn component_sizes(&self) -> Vec<(f64, f64)> {
        let discs: Vec<(f64, f64)> = self.cells.iter().flat_map(|c| c.discs.iter().copied()).collect();
        self.o2
            .intervals
            .iter()
            .map(|&(a, b)| {
                let inside: Vec<&(f64, f64)> =
                    discs.iter().filter(|(x, y)| wrap_overlaps((*x, *y), (a, b))).collect();
                let rmax = inside.iter().map(|(x, y)| 0.5 * (y - x)).fold(0.0, f64::max);
                (b - a, inside.len() as f64 * 2.0 * rmax)
            })
            .collect()
    }

    pub fn cap_violations(&self) -> Vec<&CapRecord> {
        self.cells.iter().flat_map(|c| c.caps.iter()).filter(|r| !r.ok()).collect()
    }
}

fn wrap_overlaps(d: (f64, f64), iv: (f64, f64)) -> bool {
    [-TAU, 0.0, TAU].iter().any(|s| d.0 + s <= iv.1 && d.1 + s >= iv.0)
}

/// κ⁽¹⁾ near φ₀ as a linear function, from a centred difference.
fn kappa1_linear(k: f64, phi0: f64, inputs: &Inputs, profile: &ParameterProfile) -> Result<(f64, f64)> {
    let lam = k * k;
    let k0 = solve_radius_level1(lam, phi0, &inputs.spec, profile, &inputs.params)?;
    let h = 1e-4;
    let s = match (
        solve_radius_level1(lam, phi0 + h, &inputs.spec, profile, &inputs.params),
        solve_radius_level1(lam, phi0 - h, &inputs.spec, profile, &inputs.params),
    ) {
        (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
        _ => 0.0,
    };
    Ok((k0, s))
}

fn cap_kind(m: &LatticeIndex, k: f64, profile: &ParameterProfile, params: &QPParams) -> CapKind {
    let p = dual_vector(m, params).len();
    if p < 4.0 * profile.c_delta {
        CapKind::M1Small
    } else if (2.0 * k - p).abs() < 1.0 {
        CapKind::M1Diameter
    } else {
        CapKind::M1Generic
    }
}

/// Scans the blocks of P(φ₀) for poles over the cell and the ±2W window.
pub fn scan_cell(
    phi0: f64,
    cell: (f64, f64),
    k: f64,
    inputs: &Inputs,
    profile: &ParameterProfile,
) -> Result<CellScan> {
    let (spec, params) = (&inputs.spec, &inputs.params);
    let (decomp, proj) = projector_at(phi0, k, spec, profile, params, &inputs.table)?;
    let (k0, s) = kappa1_linear(k, phi0, inputs, profile)?;
    let kap = move |phi: f64| k0 + s * (phi - phi0);
    let w2 = 2.0 * profile.window;
    let iv = (cell.0.min(phi0 - w2), cell.1.max(phi0 + w2));
    let mut poles = Vec::new();
    for b in &proj.blocks {
        poles.extend(block_poles(&b.members, k, iv, &kap, spec, profile, params)?);
    }
    poles.sort_by(|a, b| a.phi.total_cmp(&b.phi));
    let discs = poles
        .iter()
        .map(|p| {
            let r = profile.o2_radius.radius(p.slope);
            (p.phi - r, p.phi + r)
        })
        .collect();
    let win = (phi0 - w2, phi0 + w2);
    let mut caps = Vec::new();
    for m in &decomp.m1 {
        let n = block_poles(&[*m], k, win, &kap, spec, profile, params)?.len();
        caps.push(CapRecord { kind: cap_kind(m, k, profile, params), size: 1, count: n });
    }
    for (_, _, sub) in decomp.subsets() {
        let n = block_poles(&sub.members, k, win, &kap, spec, profile, params)?.len();
        caps.push(CapRecord { kind: CapKind::Subset, size: sub.members.len(), count: n });
    }
    caps.push(CapRecord {
        kind: CapKind::StrongCluster,
        size: 0,
        count: proj.max_strong_per_cluster,
    });
    Ok(CellScan {
        phi0,
        cell,
        kappa0: k0,
        kappa_slope: s,
        poles,
        discs,
        caps,
    })
}

/// O⁽²⁾ and ω⁽²⁾ over the cells of a uniform grid; each cell meeting ω⁽¹⁾ is scanned from an
/// admissible φ₀ inside it.
pub fn second_resonant_detail(
    k: f64,
    phi0_grid: &[f64],
    inputs: &Inputs,
    profile: &ParameterProfile,
) -> SecondResonant {
    let omega1 = build_omega1(k, profile, &inputs.params);
    let step = if phi0_grid.len() > 1 { phi0_grid[1] - phi0_grid[0] } else { TAU };
    let half = 0.5 * step;
    let mut cells = Vec::new();
    let mut failed = Vec::new();
    let mut covered = Vec::new();
    let mut disc_arcs = Vec::new();
    for &centre in phi0_grid {
        let cell = (centre - half, centre + half);
        let phi0 = if omega1.contains(centre) {
            centre
        } else {
            let inside = omega1.intersect(&AngleSet::from_arcs(&[cell]));
            match inside.intervals.iter().max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0))) {
                Some(&(a, b)) => {
                    // back to the branch of the cell
                    let m = 0.5 * (a + b);
                    m + TAU * ((centre - m) / TAU).round()
                }
                None => continue,
            }
        };
        match scan_cell(phi0, cell, k, inputs, profile) {
            Ok(c) => {
                covered.push(c.cell);
                for &(a, b) in &c.discs {
                    let (lo, hi) = (a.max(c.cell.0), b.min(c.cell.1));
                    if lo <= hi {
                        disc_arcs.push((lo, hi));
                    }
                }
                cells.push(c);
            }
            Err(_) => failed.push(phi0),
        }
    }
    let o2 = AngleSet::from_arcs(&disc_arcs);
    let omega2 = omega1.intersect(&AngleSet::from_arcs(&covered)).difference(&o2);
    SecondResonant { o2, omega2, cells, failed }
}

pub fn second_resonant_set(k: f64, phi0_grid: &[f64], inputs: &Inputs, profile: &ParameterProfile) -> (AngleSet, AngleSet) {
    let d = second_resonant_detail(k, phi0_grid, inputs, profile);
    (d.o2, d.omega2)
}

fn union_find(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
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

fn dist(a: &LatticeIndex, b: &LatticeIndex) -> i64 {
    (*a - *b).triple_norm()
}

/// k^δ-components (edges of length ≤ c_δ) of a point set.
pub fn kdelta_components(points: &[LatticeIndex], c_delta: f64) -> Vec<Vec<LatticeIndex>> {
    union_find(points.len(), |i, j| dist(&points[i], &points[j]) as f64 <= c_delta)
        .into_iter()
        .map(|g| g.into_iter().map(|i| points[i]).collect())
        .collect()
}

/// The Step-II resonant set M(φ₀, r) = {m ∈ Ω(r) \ Ω̃ : |(|k(φ₀) + p_m|² − k²)| ≤ T*}.
pub fn resonant_points(phi0: f64, k: f64, radius: i64, profile: &ParameterProfile, params: &QPParams, table: &DualTable) -> Vec<LatticeIndex> {
    let fresh;
    let t = if table.radius >= radius {
        table
    } else {
        fresh = DualTable::new(radius, params);
        &fresh
    };
    let (c, s) = (phi0.cos(), phi0.sin());
    t.indices
        .iter()
        .zip(&t.p)
        .filter(|(m, p)| {
            let n = m.triple_norm();
            let e = p[0] * p[0] + p[1] * p[1] + 2.0 * k * (c * p[0] + s * p[1]);
            n <= radius && n > profile.r0_tilde && e.abs() <= profile.t_star
        })
        .map(|(m, _)| *m)
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct M2Set {
    pub phi0: f64,
    pub k: f64,
    pub r2: i64,
    pub kappa1: f64,
    /// M(φ₀, r₂).
    pub resonant: Vec<LatticeIndex>,
    pub components: Vec<Vec<LatticeIndex>>,
    pub points: Vec<LatticeIndex>,
    /// Points of M⁽²⁾ inside Ω(r₁); zero when φ₀ lies in ω⁽²⁾.
    pub inner_hits: usize,
}

/// Whether a block at κ⁽¹⁾(φ₀) has a pole within the disc of φ₀.
fn component_resonant(
    members: &[LatticeIndex],
    phi0: f64,
    k: f64,
    kappa1: f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> Result<bool> {
    match profile.o2_radius {
        DiscRadius::EnergyGap(d) => {
            let m = FiberMatrix::assemble([kappa1 * phi0.cos(), kappa1 * phi0.sin()], members, spec, params)?;
            let ev = hermitian_eigenvalues(&m.entries, DEFAULT_DIM_CAP)?;
            Ok(ev.iter().any(|l| (l - k * k).abs() < d))
        }
        DiscRadius::Fixed(r) => {
            let iv = (phi0 - r, phi0 + r);
            Ok(!block_poles(members, k, iv, &|_| kappa1, spec, profile, params)?.is_empty())
        }
    }
}

pub fn build_m2set(phi0: f64, k: f64, r2: i64, inputs: &Inputs, profile: &ParameterProfile) -> Result<M2Set> {
    let (spec, params) = (&inputs.spec, &inputs.params);
    let kappa1 = solve_radius_level1(k * k, phi0, spec, profile, params)?;
    let resonant = resonant_points(phi0, k, r2, profile, params, &inputs.table);
    let mut components = Vec::new();
    for comp in kdelta_components(&resonant, profile.c_delta) {
        if component_resonant(&comp, phi0, k, kappa1, spec, profile, params)? {
            components.push(comp);
        }
    }
    let mut points: Vec<LatticeIndex> = components.iter().flatten().copied().collect();
    points.sort();
    let inner_hits = points.iter().filter(|m| m.triple_norm() <= profile.r1).count();
    Ok(M2Set { phi0, k, r2, kappa1, resonant, components, points, inner_hits })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Color {
    NonResonant,
    Simple,
    White,
    Grey,
    Black,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Component {
    pub color: Color,
    pub indices: Vec<LatticeIndex>,
    pub boundary: Vec<LatticeIndex>,
    pub n_resonant_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionMap {
    pub components: Vec<Component>,
    pub k: f64,
    pub gamma: f64,
    pub delta0: f64,
    pub r1: i64,
    pub r2: i64,
    pub seps: [i64; 5],
}

impl RegionMap {
    pub fn sep(&self, c: Color) -> i64 {
        self.seps[c as usize]
    }

    pub fn union(&self) -> HashSet<LatticeIndex> {
        self.components.iter().flat_map(|c| c.indices.iter().copied()).collect()
    }
}

fn seps(profile: &ParameterProfile) -> [i64; 5] {
    let ms = &profile.multiscale;
    let kd = profile.c_delta.ceil() as i64;
    [kd, ms.simple_radius.max(1), ms.white_sep, ms.grey_sep, ms.black_sep]
}

fn cell_of(m: &LatticeIndex, side: i64) -> [i64; 4] {
    let f = |x: i64| x.div_euclid(side);
    [f(m.s1[0]), f(m.s1[1]), f(m.s2[0]), f(m.s2[1])]
}

fn neighbor_cells(c: [i64; 4]) -> impl Iterator<Item = [i64; 4]> {
    (0..81).map(move |i| {
        let mut d = [0i64; 4];
        let mut x = i;
        for v in d.iter_mut() {
            *v = x % 3 - 1;
            x /= 3;
        }
        [c[0] + d[0], c[1] + d[1], c[2] + d[2], c[3] + d[3]]
    })
}

fn cell_points(c: [i64; 4], side: i64) -> Vec<LatticeIndex> {
    let mut out = Vec::with_capacity((side * side * side * side) as usize);
    for a in 0..side {
        for b in 0..side {
            for e in 0..side {
                for f in 0..side {
                    out.push(LatticeIndex::new(
                        [c[0] * side + a, c[1] * side + b],
                        [c[2] * side + e, c[3] * side + f],
                    ));
                }
            }
        }
    }
    out
}

/// Cells whose count together with their 80 neighbors exceeds `threshold`.
fn dense_cells(points: &[LatticeIndex], side: i64, threshold: usize, allowed: &dyn Fn([i64; 4]) -> bool) -> BTreeSet<[i64; 4]> {
    let mut counts: HashMap<[i64; 4], usize> = HashMap::new();
    for m in points {
        *counts.entry(cell_of(m, side)).or_default() += 1;
    }
    let mut candidates: BTreeSet<[i64; 4]> = BTreeSet::new();
    for c in counts.keys() {
        candidates.extend(neighbor_cells(*c));
    }
    candidates
        .into_iter()
        .filter(|c| allowed(*c))
        .filter(|c| {
            let total: usize = neighbor_cells(*c).filter_map(|n| counts.get(&n)).sum();
            total > threshold && counts.get(c).copied().unwrap_or(0) > 0
        })
        .collect()
}

fn min_dist(a: &[LatticeIndex], b: &[LatticeIndex], limit: i64) -> i64 {
    let mut best = i64::MAX;
    for x in a {
        for y in b {
            let d = dist(x, y);
            if d < best {
                best = d;
                if best < limit {
                    return best;
                }
            }
        }
    }
    best
}

fn v_adjacent(a: &[LatticeIndex], b: &HashSet<LatticeIndex>, support: &[LatticeIndex]) -> bool {
    a.iter().any(|m| support.iter().any(|q| b.contains(&(*m + *q))))
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Raw {
    color: Color,
    indices: BTreeSet<LatticeIndex>,
}

/// Fixpoint of the merging rules on colored pieces; deterministic and idempotent.
fn merge_pieces(mut pieces: Vec<Raw>, seps: &[i64; 5], c_delta: f64, support: &[LatticeIndex]) -> Vec<Raw> {
    loop {
        let before = pieces.clone();
        // darkest color claims overlapping indices
        pieces.sort_by(|a, b| b.color.cmp(&a.color).then(a.indices.iter().next().cmp(&b.indices.iter().next())));
        let mut taken: HashSet<LatticeIndex> = HashSet::new();
        for p in pieces.iter_mut() {
            p.indices.retain(|m| !taken.contains(m));
            taken.extend(p.indices.iter().copied());
        }
        pieces.retain(|p| !p.indices.is_empty());
        // same-color grouping below the color separation
        let vecs: Vec<Vec<LatticeIndex>> = pieces.iter().map(|p| p.indices.iter().copied().collect()).collect();
        let groups = union_find(pieces.len(), |i, j| {
            pieces[i].color == pieces[j].color && min_dist(&vecs[i], &vecs[j], seps[pieces[i].color as usize]) < seps[pieces[i].color as usize]
        });
        pieces = groups
            .into_iter()
            .map(|g| Raw {
                color: pieces[g[0]].color,
                indices: g.iter().flat_map(|&i| pieces[i].indices.iter().copied()).collect(),
            })
            .collect();
        // lighter pieces absorbed by nearby darker ones
        let vecs: Vec<Vec<LatticeIndex>> = pieces.iter().map(|p| p.indices.iter().copied().collect()).collect();
        let sets: Vec<HashSet<LatticeIndex>> = pieces.iter().map(|p| p.indices.iter().copied().collect()).collect();
        let mut target: Vec<Option<usize>> = vec![None; pieces.len()];
        let mut order: Vec<usize> = (0..pieces.len()).collect();
        order.sort_by_key(|&i| (pieces[i].color, vecs[i][0]));
        for &i in &order {
            let ci = pieces[i].color;
            let reach = match ci {
                Color::NonResonant => c_delta.floor() as i64 + 1,
                Color::White => seps[Color::White as usize],
                Color::Grey => seps[Color::Grey as usize],
                Color::Simple | Color::Black => 0,
            };
            let mut best: Option<(Color, usize)> = None;
            for j in 0..pieces.len() {
                let cj = pieces[j].color;
                if cj <= ci || target[j].is_some() {
                    continue;
                }
                let near = (reach > 0 && min_dist(&vecs[i], &vecs[j], reach) < reach)
                    || v_adjacent(&vecs[i], &sets[j], support);
                if near {
                    let cand = (cj, j);
                    // the lightest darker neighbor wins
                    if best.map_or(true, |b| cand < b) {
                        best = Some(cand);
                    }
                }
            }
            if let Some((_, j)) = best {
                target[i] = Some(j);
            }
        }
        let mut merged: Vec<Raw> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let root = |mut i: usize| {
            while let Some(j) = target[i] {
                i = j;
            }
            i
        };
        for i in 0..pieces.len() {
            let r = root(i);
            let s = *slot.entry(r).or_insert_with(|| {
                merged.push(Raw { color: pieces[r].color, indices: BTreeSet::new() });
                merged.len() - 1
            });
            merged[s].indices.extend(pieces[i].indices.iter().copied());
        }
        merged.sort_by(|a, b| a.indices.iter().next().cmp(&b.indices.iter().next()));
        pieces = merged;
        if pieces == before {
            return pieces;
        }
    }
}

fn finish(pieces: Vec<Raw>, m2: &BTreeSet<LatticeIndex>, support: &[LatticeIndex], k: f64, profile: &ParameterProfile, r2: i64) -> RegionMap {
    let all: HashSet<LatticeIndex> = pieces.iter().flat_map(|p| p.indices.iter().copied()).collect();
    let components = pieces
        .into_iter()
        .map(|p| {
            let boundary = p
                .indices
                .iter()
                .filter(|m| support.iter().any(|q| !all.contains(&(**m + *q))))
                .copied()
                .collect();
            let n = p.indices.iter().filter(|m| m2.contains(m)).count();
            Component { color: p.color, indices: p.indices.into_iter().collect(), boundary, n_resonant_points: n }
        })
        .collect();
    RegionMap {
        components,
        k,
        gamma: profile.multiscale.gamma,
        delta0: profile.multiscale.delta0,
        r1: profile.r1,
        r2,
        seps: seps(profile),
    }
}

/// Colors the neighborhood of M⁽²⁾ and merges the pieces. `others` are the
/// non-resonant points of M(φ₀, r₂) whose k^δ-clusters get attached.
pub fn region_map(
    m2: &[LatticeIndex],
    others: &[LatticeIndex],
    k: f64,
    r2: i64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> RegionMap {
    let ms = &profile.multiscale;
    let support = spec.support();
    let m2set: BTreeSet<LatticeIndex> = m2.iter().copied().collect();
    let mut pieces = Vec::new();
    let (simple, rest): (Vec<LatticeIndex>, Vec<LatticeIndex>) =
        m2set.iter().partition(|m| dual_vector(m, params).len() <= ms.simple_threshold);
    for m in &simple {
        let b = enumerate_box(ms.simple_radius).into_iter().map(|d| *m + d).collect();
        pieces.push(Raw { color: Color::Simple, indices: b });
    }
    let black = dense_cells(&rest, ms.black_box, ms.black_count, &|_| true);
    for c in &black {
        pieces.push(Raw { color: Color::Black, indices: cell_points(*c, ms.black_box).into_iter().collect() });
    }
    let in_black = |m: &LatticeIndex| black.contains(&cell_of(m, ms.black_box));
    let outside: Vec<LatticeIndex> = rest.iter().filter(|m| !in_black(m)).copied().collect();
    let bb = ms.black_box;
    let gb = ms.grey_box;
    let grey = dense_cells(&outside, gb, ms.grey_count, &|c| {
        let corner = LatticeIndex::new([c[0] * gb, c[1] * gb], [c[2] * gb, c[3] * gb]);
        !black.contains(&cell_of(&corner, bb))
    });
    for c in &grey {
        pieces.push(Raw { color: Color::Grey, indices: cell_points(*c, gb).into_iter().collect() });
    }
    for m in outside.iter().filter(|m| !grey.contains(&cell_of(m, gb))) {
        let b = enumerate_box(ms.white_radius).into_iter().map(|d| *m + d).collect();
        pieces.push(Raw { color: Color::White, indices: b });
    }
    let nr: Vec<LatticeIndex> = if m2set.is_empty() {
        Vec::new()
    } else {
        others.iter().filter(|m| !m2set.contains(m)).copied().collect()
    };
    for comp in kdelta_components(&nr, profile.c_delta) {
        pieces.push(Raw { color: Color::NonResonant, indices: comp.into_iter().collect() });
    }
    let merged = merge_pieces(pieces, &seps(profile), profile.c_delta, &support);
    finish(merged, &m2set, &support, k, profile, r2)
}

/// Re-applies the merging rules to an existing map.
pub fn remerge(map: &RegionMap, m2: &[LatticeIndex], spec: &PotentialSpec, profile: &ParameterProfile) -> RegionMap {
    let support = spec.support();
    let pieces = map
        .components
        .iter()
        .map(|c| Raw { color: c.color, indices: c.indices.iter().copied().collect() })
        .collect();
    let merged = merge_pieces(pieces, &map.seps, profile.c_delta, &support);
    let m2set = m2.iter().copied().collect();
    finish(merged, &m2set, &support, map.k, profile, map.r2)
}

/// Smallest same-color separation minus the color threshold (≥ 0 when honored), and
/// the number of indices claimed by two components.
pub fn separation_report(map: &RegionMap) -> (i64, usize) {
    let mut worst = i64::MAX;
    let n = map.components.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&map.components[i], &map.components[j]);
            if a.color == b.color {
                let s = map.sep(a.color);
                worst = worst.min(min_dist(&a.indices, &b.indices, i64::MIN) - s);
            }
        }
    }
    let mut seen = HashSet::new();
    let dup = map.components.iter().flat_map(|c| c.indices.iter()).filter(|m| !seen.insert(**m)).count();
    (worst, dup)
}

/// Largest |entry| violating P_iVP_j = 0 (i ≠ j) or (I − P⁽²⁾)VP_i = (I − P⁽²⁾)VP_i^∂.
pub fn boundary_check(map: &RegionMap, spec: &PotentialSpec) -> f64 {
    let mut owner: HashMap<LatticeIndex, usize> = HashMap::new();
    for (i, c) in map.components.iter().enumerate() {
        for m in &c.indices {
            owner.insert(*m, i);
        }
    }
    let mut worst: f64 = 0.0;
    for (i, c) in map.components.iter().enumerate() {
        let rim: HashSet<&LatticeIndex> = c.boundary.iter().collect();
        for m in &c.indices {
            for q in spec.support() {
                let v = spec.coefficient(&q).norm();
                match owner.get(&(*m + q)) {
                    Some(&j) if j != i => worst = worst.max(v),
                    None if !rim.contains(m) => worst = worst.max(v),
                    _ => {}
                }
            }
        }
        for b in &c.boundary {
            if !support_reaches_outside(b, &owner, spec) {
                worst = worst.max(f64::INFINITY);
            }
        }
    }
    worst
}

fn support_reaches_outside(m: &LatticeIndex, owner: &HashMap<LatticeIndex, usize>, spec: &PotentialSpec) -> bool {
    spec.support().iter().any(|q| !owner.contains_key(&(*m + *q)))
}

/// max |(P⁽²⁾HP⁽²⁾ − Σ P_iHP_i)_{ab}| at κ.
pub fn block_structure_defect(map: &RegionMap, kappa: [f64; 2], spec: &PotentialSpec, params: &QPParams) -> Result<f64> {
    let mut all: Vec<LatticeIndex> = map.union().into_iter().collect();
    all.sort();
    let h = FiberMatrix::assemble(kappa, &all, spec, params)?;
    let mut comp = HashMap::new();
    for (i, c) in map.components.iter().enumerate() {
        for m in &c.indices {
            comp.insert(*m, i);
        }
    }
    let mut worst: f64 = 0.0;
    for (a, ma) in all.iter().enumerate() {
        for (b, mb) in all.iter().enumerate() {
            if comp[ma] != comp[mb] {
                worst = worst.max(h.entries[(a, b)].norm());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentStats {
    pub color: Color,
    pub size: usize,
    pub diameter: i64,
    pub n_points: usize,
    pub boxes: usize,
    pub bbox: [[i64; 2]; 4],
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionStats {
    pub components: Vec<ComponentStats>,
    /// count / k^{2γ′r₁/3+1} for each sampled neighborhood.
    pub counting_ratios: Vec<f64>,
    pub max_ratio: f64,
    pub neighborhood_radius: i64,
    pub black_boxes_ok: bool,
    pub grey_points_ok: bool,
    pub white_size_cap: i64,
    pub white_size_ok: bool,
}

fn diameter(ix: &[LatticeIndex]) -> i64 {
    let mut lo = [i64::MAX; 4];
    let mut hi = [i64::MIN; 4];
    for m in ix {
        for (d, v) in [m.s1[0], m.s1[1], m.s2[0], m.s2[1]].into_iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    if ix.is_empty() {
        return 0;
    }
    (hi[0] - lo[0]).max(hi[1] - lo[1]) + (hi[2] - lo[2]).max(hi[3] - lo[3])
}

fn bbox(ix: &[LatticeIndex]) -> [[i64; 2]; 4] {
    let mut out = [[i64::MAX, i64::MIN]; 4];
    for m in ix {
        for (d, v) in [m.s1[0], m.s1[1], m.s2[0], m.s2[1]].into_iter().enumerate() {
            out[d][0] = out[d][0].min(v);
            out[d][1] = out[d][1].max(v);
        }
    }
    out
}

/// Per-component statistics and the counting-lemma ratio over `samples` random
/// neighborhoods of radius black_box centred in Ω(r₂).
pub fn region_stats(map: &RegionMap, points: &[LatticeIndex], profile: &ParameterProfile, samples: usize, seed: u64) -> RegionStats {
    let ms = &profile.multiscale;
    let components: Vec<ComponentStats> = map
        .components
        .iter()
        .map(|c| {
            let boxes = match c.color {
                Color::Black => c.indices.iter().map(|m| cell_of(m, ms.black_box)).collect::<BTreeSet<_>>().len(),
                Color::Grey => c.indices.iter().map(|m| cell_of(m, ms.grey_box)).collect::<BTreeSet<_>>().len(),
                _ => 0,
            };
            ComponentStats {
                color: c.color,
                size: c.indices.len(),
                diameter: diameter(&c.indices),
                n_points: c.n_resonant_points,
                boxes,
                bbox: bbox(&c.indices),
            }
        })
        .collect();
    let radius = ms.black_box;
    let gexp = (radius as f64).ln() / map.k.ln();
    let norm = map.k.powf(2.0 * gexp / 3.0 + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(samples);
    let r2 = map.r2.max(1);
    for _ in 0..samples {
        let c = loop {
            let m = LatticeIndex::new(
                [rng.gen_range(-r2..=r2), rng.gen_range(-r2..=r2)],
                [rng.gen_range(-r2..=r2), rng.gen_range(-r2..=r2)],
            );
            if m.triple_norm() <= r2 {
                break m;
            }
        };
        let n = points.iter().filter(|m| dist(m, &c) <= radius).count();
        ratios.push(n as f64 / norm);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let white_cap = (2 * ms.white_radius + ms.white_sep) * (ms.grey_count as i64 + 1);
    RegionStats {
        black_boxes_ok: components.iter().filter(|c| c.color == Color::Black).all(|c| c.boxes <= ms.black_max_boxes),
        grey_points_ok: components.iter().filter(|c| c.color == Color::Grey).all(|c| c.n_points <= ms.black_count),
        white_size_ok: components.iter().filter(|c| c.color == Color::White).all(|c| c.diameter < white_cap),
        white_size_cap: white_cap,
        components,
        counting_ratios: ratios,
        max_ratio,
        neighborhood_radius: radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    fn setup(k: f64) -> (ParameterProfile, Inputs) {
        let p = ParameterProfile::desk(k);
        (p.clone(), Inputs::default_for(&p))
    }

    #[test]
    fn empty_m2_gives_empty_map() {
        let (prof, inp) = setup(15.0);
        let map = region_map(&[], &[], 15.0, 8, &inp.spec, &prof, &inp.params);
        assert!(map.components.is_empty());
        let lone = [LatticeIndex::new([3, 1], [1, 0])];
        assert!(region_map(&[], &lone, 15.0, 8, &inp.spec, &prof, &inp.params).components.is_empty());
        assert_eq!(boundary_check(&map, &inp.spec), 0.0);
        let st = region_stats(&map, &[], &prof, 20, 1);
        assert_eq!(st.max_ratio, 0.0);
    }

    #[test]
    fn free_potential_without_clusters_has_empty_o2() {
        let (prof, inp) = setup(15.0);
        let prof = ParameterProfile { t_star: 1e-9, ..prof };
        let inp = inp.with_spec(PotentialSpec::zero(4));
        let grid: Vec<f64> = (0..48).map(|i| i as f64 * TAU / 48.0).collect();
        let d = second_resonant_detail(15.0, &grid, &inp, &prof);
        assert!(d.o2.is_empty());
        assert!(d.failed.is_empty());
        assert!(!d.cells.is_empty());
        let om1 = build_omega1(15.0, &prof, &inp.params);
        assert!(d.omega2.difference(&om1).measure() < 1e-15);
    }

    fn synthetic(seed: u64, n: usize) -> Vec<LatticeIndex> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = BTreeSet::new();
        while out.len() < n {
            let m = LatticeIndex::new(
                [rng.gen_range(-6..=6), rng.gen_range(-6..=6)],
                [rng.gen_range(-3..=3), rng.gen_range(-3..=3)],
            );
            if m.triple_norm() > 4 && m.triple_norm() <= 8 {
                out.insert(m);
            }
        }
        out.into_iter().collect()
    }

    #[test]
    fn synthetic_maps_satisfy_invariants() {
        let (prof, inp) = setup(25.0);
        for seed in 0..4 {
            let m2 = synthetic(seed, 12 + 6 * seed as usize);
            let others = synthetic(100 + seed, 10);
            let map = region_map(&m2, &others, 25.0, 8, &inp.spec, &prof, &inp.params);
            let again = region_map(&m2, &others, 25.0, 8, &inp.spec, &prof, &inp.params);
            assert_eq!(map, again);
            assert_eq!(remerge(&map, &m2, &inp.spec, &prof), map);
            let (worst, dup) = separation_report(&map);
            assert_eq!(dup, 0);
            assert!(worst >= 0 || map.components.len() < 2);
            assert_eq!(boundary_check(&map, &inp.spec), 0.0);
            let u = map.union();
            for m in &m2 {
                assert!(u.contains(m));
            }
            assert_eq!(block_structure_defect(&map, [25.0, 0.0], &inp.spec, &inp.params).unwrap(), 0.0);
        }
    }

    #[test]
    fn boundary_is_the_v_rim() {
        let (prof, inp) = setup(15.0);
        let m2 = vec![LatticeIndex::new([5, 0], [0, 0]), LatticeIndex::new([-5, 2], [1, 0])];
        let map = region_map(&m2, &[], 15.0, 8, &inp.spec, &prof, &inp.params);
        let support = inp.spec.support();
        let u = map.union();
        for c in &map.components {
            let expect: Vec<LatticeIndex> = c
                .indices
                .iter()
                .filter(|m| support.iter().any(|q| !u.contains(&(**m + *q))))
                .copied()
                .collect();
            assert_eq!(c.boundary, expect);
        }
    }

    #[test]
    fn m2set_is_component_invariant() {
        let (prof, inp) = setup(15.0);
        let om = build_omega1(15.0, &prof, &inp.params);
        let mut checked = 0;
        for i in 0..12 {
            let phi = 0.13 + i as f64 * TAU / 12.0;
            if !om.contains(phi) {
                continue;
            }
            let s = build_m2set(phi, 15.0, 8, &inp, &prof).unwrap();
            let set: BTreeSet<LatticeIndex> = s.points.iter().copied().collect();
            for comp in kdelta_components(&s.resonant, prof.c_delta) {
                let n = comp.iter().filter(|m| set.contains(m)).count();
                assert!(n == 0 || n == comp.len());
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn counting_ratio_matches_bruteforce() {
        let (prof, _) = setup(15.0);
        let pts = synthetic(7, 30);
        let map = RegionMap { components: vec![], k: 15.0, gamma: 0.2, delta0: 0.002, r1: 4, r2: 8, seps: seps(&prof) };
        let st = region_stats(&map, &pts, &prof, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = 15f64.powf(2.0 * (4f64.ln() / 15f64.ln()) / 3.0 + 1.0);
        for r in &st.counting_ratios {
            let c = loop {
                let m = LatticeIndex::new(
                    [rng.gen_range(-8..=8), rng.gen_range(-8..=8)],
                    [rng.gen_range(-8..=8), rng.gen_range(-8..=8)],
                );
                if m.triple_norm() <= 8 {
                    break m;
                }
            };
            let mut n = 0;
            for m in &pts {
                let d = *m - c;
                if d.s1[0].abs().max(d.s1[1].abs()) + d.s2[0].abs().max(d.s2[1].abs()) <= 4 {
                    n += 1;
                }
            }
            assert_eq!(*r, n as f64 / norm);
        }
    }

    #[test]
    fn default_potential_cells_scan() {
        let (prof, inp) = setup(15.0);
        let om = build_omega1(15.0, &prof, &inp.params);
        let phi = (0..100).map(|i| 0.02 + i as f64 * 0.06).find(|p| om.contains(*p)).unwrap();
        let c = scan_cell(phi, (phi - 0.01, phi + 0.01), 15.0, &inp, &prof).unwrap();
        assert!(c.kappa0 > 14.0 && c.kappa0 < 16.0);
        for d in &c.discs {
            assert!(d.1 > d.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn remerge_is_idempotent(seed in 0u64..1000, n in 2usize..20) {
            let (prof, inp) = setup(15.0);
            let m2 = synthetic(seed, n);
            let map = region_map(&m2, &[], 15.0, 8, &inp.spec, &prof, &inp.params);
            let once = remerge(&map, &m2, &inp.spec, &prof);
            prop_assert_eq!(&once, &map);
            prop_assert_eq!(boundary_check(&map, &inp.spec), 0.0);
        }
    }
}
