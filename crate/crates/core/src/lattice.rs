//! Index arithmetic on Z^4 and geometry of the dual image p_m = 2π(s1 + α s2).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point m = (s1, s2) of Z^4. Ordering is lexicographic on (s1, s2).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct LatticeIndex {
    pub s1: [i64; 2],
    pub s2: [i64; 2],
}

impl LatticeIndex {
    pub const ZERO: LatticeIndex = LatticeIndex { s1: [0, 0], s2: [0, 0] };

    pub fn new(s1: [i64; 2], s2: [i64; 2]) -> Self {
        LatticeIndex { s1, s2 }
    }

    pub fn from_array(v: [i64; 4]) -> Self {
        LatticeIndex { s1: [v[0], v[1]], s2: [v[2], v[3]] }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn triple_norm(&self) -> i64 {
        triple_norm(self)
    }

    /// Largest integer g with self = g * m' for an integer m'.
    pub fn content(&self) -> i64 {
        let mut g = 0;
        for v in [self.s1[0], self.s1[1], self.s2[0], self.s2[1]] {
            g = gcd(g, v.abs());
        }
        g
    }
}

impl fmt::Display for LatticeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(({},{}),({},{}))", self.s1[0], self.s1[1], self.s2[0], self.s2[1])
    }
}

impl Add for LatticeIndex {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        LatticeIndex {
            s1: [self.s1[0] + o.s1[0], self.s1[1] + o.s1[1]],
            s2: [self.s2[0] + o.s2[0], self.s2[1] + o.s2[1]],
        }
    }
}

impl Sub for LatticeIndex {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for LatticeIndex {
    type Output = Self;
    fn neg(self) -> Self {
        LatticeIndex { s1: [-self.s1[0], -self.s1[1]], s2: [-self.s2[0], -self.s2[1]] }
    }
}

impl Mul<LatticeIndex> for i64 {
    type Output = LatticeIndex;
    fn mul(self, m: LatticeIndex) -> LatticeIndex {
        LatticeIndex {
            s1: [self * m.s1[0], self * m.s1[1]],
            s2: [self * m.s2[0], self * m.s2[1]],
        }
    }
}

pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn gcd128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn isqrt(n: i128) -> i128 {
    if n < 2 {
        return n.max(0);
    }
    let mut x = (n as f64).sqrt() as i128;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// Evaluates x + y·√d without cancellation.
fn surd_f64(x: i128, y: i128, d: i128) -> f64 {
    let sd = (d as f64).sqrt();
    if x == 0 || y == 0 || (x > 0) == (y > 0) {
        return x as f64 + y as f64 * sd;
    }
    match x.checked_mul(x).zip(y.checked_mul(y).and_then(|yy| yy.checked_mul(d))) {
        Some((xx, yyd)) => (xx - yyd) as f64 / (x as f64 - y as f64 * sd),
        None => x as f64 + y as f64 * sd,
    }
}

/// α = (a + b√d)/c, exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadIrr {
    pub a: i128,
    pub b: i128,
    pub d: i128,
    pub c: i128,
}

impl QuadIrr {
    pub fn new(a: i128, b: i128, d: i128, c: i128) -> Result<Self> {
        if c == 0 {
            return Err(Error::InvalidAlpha("zero denominator".into()));
        }
        if d < 2 || isqrt(d).pow(2) == d {
            return Err(Error::InvalidAlpha(format!("d = {d} gives a rational alpha")));
        }
        if b == 0 {
            return Err(Error::InvalidAlpha("b = 0 gives a rational alpha".into()));
        }
        let s = if c < 0 { -1 } else { 1 };
        let g = gcd128(gcd128(a, b), c);
        Ok(QuadIrr { a: s * a / g, b: s * b / g, d, c: s * c / g })
    }

    pub fn value(&self) -> f64 {
        surd_f64(self.a, self.b, self.d) / self.c as f64
    }

    /// Integer triple (n1, n2, n3), n1 + α n2 + α² n3 = 0, primitive.
    pub fn minimal_triple(&self) -> [i128; 3] {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let t = [a * a - b * b * d, -2 * a * c, c * c];
        let g = gcd128(gcd128(t[0], t[1]), t[2]);
        [t[0] / g, t[1] / g, t[2] / g]
    }

    /// Numerator of n + α·m over the common denominator c, as (x, y) with value (x + y√d)/c.
    pub fn affine(&self, n: i64, m: i64) -> (i128, i128) {
        (self.c * n as i128 + self.a * m as i128, self.b * m as i128)
    }

    /// n + α·m evaluated without cancellation.
    pub fn affine_f64(&self, n: i64, m: i64) -> f64 {
        let (x, y) = self.affine(n, m);
        surd_f64(x, y, self.d) / self.c as f64
    }

    /// Partial quotients, exact. Stops after `max_terms`.
    pub fn continued_fraction(&self, max_terms: usize) -> Vec<i128> {
        let (mut a, mut b, mut c) = (self.a, self.b, self.c);
        if b < 0 {
            a = -a;
            b = -b;
            c = -c;
        }
        let mut big_d = b * b * self.d;
        let (mut p, mut q) = (a, c);
        if (big_d - p * p) % q != 0 {
            p *= q.abs();
            big_d *= q * q;
            q *= q.abs();
        }
        let r = isqrt(big_d);
        let mut out = Vec::with_capacity(max_terms);
        for _ in 0..max_terms {
            let t = if q > 0 { (p + r).div_euclid(q) } else { -((p + r).div_euclid(-q) + 1) };
            out.push(t);
            p = t * q - p;
            q = (big_d - p * p) / q;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaSource {
    Quadratic,
    ContinuedFraction(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPParams {
    pub alpha: QuadIrr,
    pub source: AlphaSource,
    pub mu: f64,
    pub n0: Option<f64>,
    pub n1: Option<f64>,
    alpha_value: f64,
}

impl QPParams {
    pub fn quadratic(a: i64, b: i64, d: i64, c: i64, mu: f64) -> Result<Self> {
        let alpha = QuadIrr::new(a as i128, b as i128, d as i128, c as i128)?;
        Self::from_quad(alpha, AlphaSource::Quadratic, mu)
    }

    /// [a0; a1, ..., an] followed by an all-ones tail, which keeps α in Q(√5).
    pub fn continued_fraction(terms: &[i64], mu: f64) -> Result<Self> {
        if terms.first() != Some(&0) {
            return Err(Error::InvalidAlpha("cf must start with a0 = 0 for 0 < alpha < 1".into()));
        }
        if terms[1..].iter().any(|&t| t < 1) {
            return Err(Error::InvalidAlpha("partial quotients must be positive".into()));
        }
        let (mut h0, mut h1, mut k0, mut k1) = (0i128, 1i128, 1i128, 0i128);
        for &t in terms {
            let t = t as i128;
            (h0, h1) = (h1, t.checked_mul(h1).and_then(|v| v.checked_add(h0)).ok_or_else(overflow)?);
            (k0, k1) = (k1, t.checked_mul(k1).and_then(|v| v.checked_add(k0)).ok_or_else(overflow)?);
        }
        // α = (h1 φ + h0)/(k1 φ + k0) with φ = (1+√5)/2
        let (na, nb) = (h1 + 2 * h0, h1);
        let (da, db) = (k1 + 2 * k0, k1);
        let a = na * da - 5 * nb * db;
        let b = nb * da - na * db;
        let c = da * da - 5 * db * db;
        let alpha = QuadIrr::new(a, b, 5, c)?;
        Self::from_quad(alpha, AlphaSource::ContinuedFraction(terms.to_vec()), mu)
    }

    fn from_quad(alpha: QuadIrr, source: AlphaSource, mu: f64) -> Result<Self> {
        let v = alpha.value();
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidAlpha(format!("alpha = {v} outside (0,1)")));
        }
        if !(mu >= 2.0) {
            return Err(Error::InvalidAlpha(format!("mu = {mu} < 2")));
        }
        Ok(QPParams { alpha, source, mu, n0: None, n1: None, alpha_value: v })
    }

    /// √2 − 1 with μ = 2.
    pub fn default_alpha() -> Self {
        Self::quadratic(-1, 1, 2, 1, 2.0).unwrap()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_value
    }

    pub fn condition4_checked(&self) -> bool {
        matches!(self.source, AlphaSource::Quadratic)
    }

    /// p_m / 2π, accurate even when s1 + α s2 nearly cancels.
    pub fn dual_unscaled(&self, m: &LatticeIndex) -> [f64; 2] {
        [self.alpha.affine_f64(m.s1[0], m.s2[0]), self.alpha.affine_f64(m.s1[1], m.s2[1])]
    }

    /// Exact test: are p_m and p_n colinear? Returns None if not, Some(rational?) if so.
    pub fn colinear(&self, m: &LatticeIndex, n: &LatticeIndex) -> Option<bool> {
        let d = self.alpha.d;
        let u = [self.alpha.affine(m.s1[0], m.s2[0]), self.alpha.affine(m.s1[1], m.s2[1])];
        let v = [self.alpha.affine(n.s1[0], n.s2[0]), self.alpha.affine(n.s1[1], n.s2[1])];
        // u0 v1 − u1 v0 in Z[√d]
        let (a0, b0) = u[0];
        let (a1, b1) = u[1];
        let (c0, e0) = v[0];
        let (c1, e1) = v[1];
        let rat = a0 * c1 + b0 * e1 * d - a1 * c0 - b1 * e0 * d;
        let irr = a0 * e1 + b0 * c1 - a1 * e0 - b1 * c0;
        if rat != 0 || irr != 0 {
            return None;
        }
        let j = if v[0] != (0, 0) { 0 } else { 1 };
        if v[j] == (0, 0) || u[j] == (0, 0) {
            return Some(true);
        }
        let (a, b) = u[j];
        let (c, e) = v[j];
        Some(b * c - a * e == 0)
    }
}

fn overflow() -> Error {
    Error::InvalidAlpha("continued fraction too long for exact arithmetic".into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVector {
    pub p: [f64; 2],
    pub norm3: i64,
}

impl DualVector {
    pub fn len(&self) -> f64 {
        self.p[0].hypot(self.p[1])
    }

    pub fn angle(&self) -> f64 {
        self.p[1].atan2(self.p[0]).rem_euclid(2.0 * PI)
    }
}

pub fn dual_vector(m: &LatticeIndex, params: &QPParams) -> DualVector {
    let x = params.dual_unscaled(m);
    DualVector { p: [2.0 * PI * x[0], 2.0 * PI * x[1]], norm3: triple_norm(m) }
}

pub fn triple_norm(m: &LatticeIndex) -> i64 {
    m.s1[0].abs().max(m.s1[1].abs()) + m.s2[0].abs().max(m.s2[1].abs())
}

/// All m with |||m||| <= radius, lexicographic.
pub fn enumerate_box(radius: i64) -> Vec<LatticeIndex> {
    let mut out = Vec::new();
    if radius < 0 {
        return out;
    }
    let r = radius;
    for a in -r..=r {
        for b in -r..=r {
            let n1 = a.abs().max(b.abs());
            let rest = r - n1;
            for c in -rest..=rest {
                for d in -rest..=rest {
                    out.push(LatticeIndex { s1: [a, b], s2: [c, d] });
                }
            }
        }
    }
    out
}

/// Position lookup for an ordered index list.
pub fn index_map(indices: &[LatticeIndex]) -> HashMap<LatticeIndex, usize> {
    indices.iter().enumerate().map(|(i, m)| (*m, i)).collect()
}

/// Diophantine bound check: smallest p_m·norm3^μ/2π over m ≠ 0.
pub fn psnorms_constant(indices: &[LatticeIndex], params: &QPParams) -> f64 {
    indices
        .iter()
        .filter(|m| !m.is_zero())
        .map(|m| {
            let d = dual_vector(m, params);
            d.len() / (2.0 * PI) * (d.norm3 as f64).powf(params.mu)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxPair {
    pub q: i64,
    pub p: i64,
    pub eps_q: f64,
    /// |αq + p|
    pub defect: f64,
}

/// Convergents (h, q) of α with q <= qmax.
pub fn convergents(params: &QPParams, qmax: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut h0, mut h1, mut k0, mut k1) = (0i128, 1i128, 1i128, 0i128);
    for t in params.alpha.continued_fraction(120) {
        let h = t * h1 + h0;
        let k = t * k1 + k0;
        if k > qmax as i128 {
            break;
        }
        if k >= 1 {
            out.push((h as i64, k as i64));
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
    }
    out
}

pub fn best_rational(params: &QPParams, k: f64, r: f64) -> Result<ApproxPair> {
    let bound = 0.25 * k.powf(-r);
    let qmax = (4.0 * k.powf(r)).floor() as i64;
    let best = convergents(params, qmax)
        .into_iter()
        .map(|(h, q)| (q, -h, params.alpha.affine_f64(-h, q).abs()))
        .min_by(|x, y| x.2.total_cmp(&y.2));
    match best {
        Some((q, p, defect)) if defect <= bound => {
            Ok(ApproxPair { q, p, eps_q: params.alpha.affine_f64(p, q) / q as f64, defect })
        }
        _ => Err(Error::NoApproximant { qmax, bound }),
    }
}

/// Cluster label: s = s1 − p s2' and the residue s2''.
pub type ClusterKey = ([i64; 2], [i64; 2]);

#[derive(Clone, Debug)]
pub struct ClusterGrid {
    pub clusters: HashMap<ClusterKey, Vec<LatticeIndex>>,
    pub step: f64,
    pub cluster_diameter: f64,
    pub min_separation: f64,
    pub q: i64,
}

impl ClusterGrid {
    /// s̃ = −(p/q)s2'' + ε_q s2''.
    pub fn s_tilde(key: &ClusterKey, approx: &ApproxPair) -> [f64; 2] {
        let f = -(approx.p as f64) / approx.q as f64 + approx.eps_q;
        [f * key.1[0] as f64, f * key.1[1] as f64]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

fn split_s2(s2: i64, q: i64) -> (i64, i64) {
    (s2.div_euclid(q), s2.rem_euclid(q))
}

pub fn cluster_key(m: &LatticeIndex, approx: &ApproxPair) -> (ClusterKey, [i64; 2]) {
    let (a0, b0) = split_s2(m.s2[0], approx.q);
    let (a1, b1) = split_s2(m.s2[1], approx.q);
    let s = [m.s1[0] - approx.p * a0, m.s1[1] - approx.p * a1];
    ((s, [b0, b1]), [a0, a1])
}

/// Horizontal runs of s2' within one cluster: (row y, x from, x to).
fn runs(pts: &mut [[i64; 2]]) -> Vec<(i64, i64, i64)> {
    pts.sort_by_key(|p| (p[1], p[0]));
    let mut out: Vec<(i64, i64, i64)> = Vec::new();
    for p in pts.iter() {
        match out.last_mut() {
            Some(r) if r.0 == p[1] && r.2 + 1 == p[0] => r.2 = p[0],
            _ => out.push((p[1], p[0], p[0])),
        }
    }
    out
}

/// min over integer w in [lo, hi] of |x + h w|.
fn clamp_min(x: f64, h: f64, lo: i64, hi: i64) -> f64 {
    let w = (-x / h).round().clamp(lo as f64, hi as f64);
    let mut best = (x + h * w).abs();
    for c in [w - 1.0, w + 1.0] {
        if c >= lo as f64 && c <= hi as f64 {
            best = best.min((x + h * c).abs());
        }
    }
    best
}

struct ClusterShape {
    anchor: [f64; 2],
    runs: Vec<(i64, i64, i64)>,
    lo: [f64; 2],
    hi: [f64; 2],
}

/// Minimum distance between two clusters; both are subsets of anchor + h·Z².
fn shape_distance(a: &ClusterShape, b: &ClusterShape, h: f64) -> f64 {
    let dx = a.anchor[0] - b.anchor[0];
    let dy = a.anchor[1] - b.anchor[1];
    let mut best = f64::INFINITY;
    for ra in &a.runs {
        for rb in &b.runs {
            let y = (dy + h * (ra.0 - rb.0) as f64).abs();
            if y >= best {
                continue;
            }
            let x = clamp_min(dx, h, ra.1 - rb.2, ra.2 - rb.1);
            best = best.min(x.hypot(y));
        }
    }
    best
}

/// Groups the dual images into clusters and measures diameters and inter-cluster distances.
///
/// Distances are computed in units of p/2π.
pub fn cluster_decompose(
    indices: &[LatticeIndex],
    approx: &ApproxPair,
    params: &QPParams,
) -> ClusterGrid {
    let mut clusters: HashMap<ClusterKey, Vec<LatticeIndex>> = HashMap::new();
    let mut offsets: HashMap<ClusterKey, Vec<[i64; 2]>> = HashMap::new();
    for m in indices {
        let (key, s2p) = cluster_key(m, approx);
        clusters.entry(key).or_default().push(*m);
        offsets.entry(key).or_default().push(s2p);
    }
    let h = approx.eps_q * approx.q as f64;
    let mut keys: Vec<ClusterKey> = offsets.keys().copied().collect();
    keys.sort();
    let mut shapes = Vec::with_capacity(keys.len());
    let mut diameter: f64 = 0.0;
    for key in &keys {
        let pts = offsets.get_mut(key).unwrap();
        let runs = runs(pts);
        // farthest pairs sit on run endpoints
        let ends: Vec<[i64; 2]> = runs.iter().flat_map(|r| [[r.1, r.0], [r.2, r.0]]).collect();
        let mut span: f64 = 0.0;
        for (i, u) in ends.iter().enumerate() {
            for v in &ends[i..] {
                span = span.max((((u[0] - v[0]).pow(2) + (u[1] - v[1]).pow(2)) as f64).sqrt());
            }
        }
        diameter = diameter.max(span * h.abs());
        let origin = LatticeIndex { s1: key.0, s2: key.1 };
        let anchor = params.dual_unscaled(&origin);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for e in &ends {
            for j in 0..2 {
                let x = anchor[j] + h * e[j] as f64;
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
        shapes.push(ClusterShape { anchor, runs, lo, hi });
    }
    let mut order: Vec<usize> = (0..shapes.len()).collect();
    order.sort_by(|&i, &j| shapes[i].lo[0].total_cmp(&shapes[j].lo[0]));
    let mut sep = f64::INFINITY;
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            let (a, b) = (&shapes[i], &shapes[j]);
            let gx = b.lo[0] - a.hi[0];
            if gx >= sep {
                break;
            }
            let gy = (b.lo[1] - a.hi[1]).max(a.lo[1] - b.hi[1]).max(0.0);
            if gx.max(0.0).hypot(gy) >= sep {
                continue;
            }
            sep = sep.min(shape_distance(a, b, h));
        }
    }
    ClusterGrid { clusters, step: h, cluster_diameter: diameter, min_separation: sep, q: approx.q }
}

/// All m with |s2|∞ <= r2 and |s1 + α s2|∞ <= 3/2: a window of the lattice near the origin.
pub fn window_box(r2: i64, params: &QPParams) -> Vec<LatticeIndex> {
    let a = params.alpha();
    let mut out = Vec::new();
    for x in -r2..=r2 {
        for y in -r2..=r2 {
            let c = [(-a * x as f64).round() as i64, (-a * y as f64).round() as i64];
            for dx in -1..=1 {
                for dy in -1..=1 {
                    out.push(LatticeIndex { s1: [c[0] + dx, c[1] + dy], s2: [x, y] });
                }
            }
        }
    }
    out.sort();
    out
}

/// Number of m with |||m||| <= radius and p_m < threshold.
pub fn count_short_vectors(radius: i64, threshold: f64, params: &QPParams) -> usize {
    let a = params.alpha();
    let w = threshold / (2.0 * PI);
    let mut count = 0;
    for x in -radius..=radius {
        for y in -radius..=radius {
            let n2 = x.abs().max(y.abs());
            let rest = radius - n2;
            let lo0 = ((-a * x as f64) - w).floor() as i64;
            let lo1 = ((-a * y as f64) - w).floor() as i64;
            for u in lo0..=lo0 + (2.0 * w).ceil() as i64 + 1 {
                for v in lo1..=lo1 + (2.0 * w).ceil() as i64 + 1 {
                    if u.abs().max(v.abs()) > rest {
                        continue;
                    }
                    let m = LatticeIndex { s1: [u, v], s2: [x, y] };
                    if dual_vector(&m, params).len() < threshold {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golden() -> QPParams {
        QPParams::quadratic(-1, 1, 5, 2, 2.0).unwrap()
    }

    #[test]
    fn dual_vector_examples() {
        let p = QPParams::default_alpha();
        let d = dual_vector(&LatticeIndex::ZERO, &p);
        assert_eq!(d.p, [0.0, 0.0]);
        assert_eq!(d.norm3, 0);
        let d = dual_vector(&LatticeIndex::new([1, 0], [0, 0]), &p);
        assert!((d.p[0] - 2.0 * PI).abs() < 1e-15 && d.norm3 == 1);
        let d = dual_vector(&LatticeIndex::new([-1, 0], [1, 0]), &p);
        // 2π(√2 − 2) from the series of √2
        let sqrt2 = 1.414_213_562_373_095_048_8_f64;
        assert!((d.p[0] - 2.0 * PI * (sqrt2 - 2.0)).abs() < 1e-14);
        assert!((d.p[0] + 3.6806).abs() < 1e-4);
    }

    #[test]
    fn triple_norm_examples() {
        assert_eq!(triple_norm(&LatticeIndex::ZERO), 0);
        assert_eq!(triple_norm(&LatticeIndex::new([1, 0], [0, 0])), 1);
        assert_eq!(triple_norm(&LatticeIndex::new([2, -1], [0, 3])), 5);
    }

    fn brute_count(r: i64) -> usize {
        let mut n = 0;
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    for d in -r..=r {
                        if a.abs().max(b.abs()) + c.abs().max(d.abs()) <= r {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn box_counts() {
        assert_eq!(enumerate_box(0), vec![LatticeIndex::ZERO]);
        for r in 1..=4 {
            assert_eq!(enumerate_box(r).len(), brute_count(r));
        }
        assert_eq!(enumerate_box(1).len(), 17);
        let b = enumerate_box(3);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn alpha_validation() {
        assert!(QPParams::quadratic(1, 1, 4, 3, 2.0).is_err());
        assert!(QPParams::quadratic(1, 0, 2, 3, 2.0).is_err());
        assert!(QPParams::quadratic(0, 1, 2, 1, 2.0).is_err());
        let p = QPParams::continued_fraction(&[0], 2.0).unwrap();
        assert!((p.alpha() - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let p = QPParams::continued_fraction(&[0, 2], 2.0).unwrap();
        // [0; 2, 1, 1, ...] = 1/(2 + 1/φ)
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p.alpha() - 1.0 / (2.0 + 1.0 / phi)).abs() < 1e-15);
        assert!(!p.condition4_checked());
    }

    #[test]
    fn minimal_triple_annihilates_alpha() {
        let p = QPParams::default_alpha();
        let t = p.alpha.minimal_triple();
        let a = p.alpha();
        assert!((t[0] as f64 + a * t[1] as f64 + a * a * t[2] as f64).abs() < 1e-14);
    }

    #[test]
    fn cf_expansion_is_exact() {
        assert_eq!(QPParams::default_alpha().alpha.continued_fraction(6), vec![0, 2, 2, 2, 2, 2]);
        assert_eq!(golden().alpha.continued_fraction(5), vec![0, 1, 1, 1, 1]);
        let p = QPParams::continued_fraction(&[0, 3, 10000], 2.0).unwrap();
        assert_eq!(p.alpha.continued_fraction(6), vec![0, 3, 10000, 1, 1, 1]);
    }

    #[test]
    fn golden_best_rational_is_fibonacci() {
        let fib = [1i64, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377];
        let p = golden();
        for k in [15.0, 25.0, 40.0, 60.0] {
            let a = best_rational(&p, k, 1.0).unwrap();
            let n = fib.iter().position(|&f| f == a.q).unwrap();
            assert_eq!(a.p, -fib[n - 1]);
            assert!(a.q as f64 <= 4.0 * k);
        }
    }

    #[test]
    fn colinearity_is_exact() {
        let p = QPParams::default_alpha();
        let q = LatticeIndex::new([1, 0], [0, 0]);
        let q2 = LatticeIndex::new([0, 0], [1, 0]);
        assert_eq!(p.colinear(&q, &q2), Some(false));
        assert_eq!(p.colinear(&q, &(3 * q)), Some(true));
        assert_eq!(p.colinear(&q, &LatticeIndex::new([0, 1], [0, 0])), None);
        let r = LatticeIndex::new([1, 2], [1, 2]);
        assert_eq!(p.colinear(&r, &(-2 * r)), Some(true));
        // both components scaled by α: colinear with irrational ratio
        assert_eq!(p.colinear(&LatticeIndex::new([1, 2], [0, 0]), &LatticeIndex::new([0, 0], [1, 2])), Some(false));
    }

    #[test]
    fn cluster_partition_and_q1() {
        let p = QPParams::default_alpha();
        let b = enumerate_box(2);
        let a = ApproxPair { q: 1, p: 0, eps_q: p.alpha(), defect: p.alpha() };
        let g = cluster_decompose(&b, &a, &p);
        assert!(g.clusters.keys().all(|k| k.1 == [0, 0]));
        let mut all: Vec<LatticeIndex> = g.clusters.values().flatten().copied().collect();
        all.sort();
        assert_eq!(all, b);
    }

    fn brute_separation(g: &ClusterGrid, p: &QPParams) -> f64 {
        let mut pts = Vec::new();
        for (i, v) in g.clusters.values().enumerate() {
            for m in v {
                pts.push((i, p.dual_unscaled(m)));
            }
        }
        let mut best = f64::INFINITY;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                if a.0 != b.0 {
                    best = best.min((a.1[0] - b.1[0]).hypot(a.1[1] - b.1[1]));
                }
            }
        }
        best
    }

    #[test]
    fn separation_matches_brute_force() {
        let p = QPParams::continued_fraction(&[0, 3, 10000], 2.0).unwrap();
        let a = best_rational(&p, 4.0, 1.0).unwrap();
        assert_eq!(a.q, 3);
        let b = window_box(16, &p);
        let g = cluster_decompose(&b, &a, &p);
        let brute = brute_separation(&g, &p);
        assert!((g.min_separation - brute).abs() < 1e-12, "{} vs {brute}", g.min_separation);
        let p = QPParams::default_alpha();
        let a = best_rational(&p, 3.0, 1.0).unwrap();
        let b = enumerate_box(3);
        let g = cluster_decompose(&b, &a, &p);
        assert!((g.min_separation - brute_separation(&g, &p)).abs() < 1e-12);
    }

    #[test]
    fn short_vector_count_matches_scan() {
        let p = QPParams::default_alpha();
        for &t in &[0.05, 0.3, 1.0, 4.0] {
            let brute = enumerate_box(4)
                .iter()
                .filter(|m| dual_vector(m, &p).len() < t)
                .count();
            assert_eq!(count_short_vectors(4, t, &p), brute);
        }
        assert_eq!(count_short_vectors(4, 0.0, &p), 0);
    }

    proptest! {
        #[test]
        fn psnorms_bounds(s in prop::array::uniform4(-30i64..30)) {
            let p = QPParams::default_alpha();
            let m = LatticeIndex::from_array(s);
            prop_assume!(!m.is_zero());
            let d = dual_vector(&m, &p);
            let n = d.norm3 as f64;
            // the sup-norm of p_m obeys the bound; its Euclidean length only up to √2
            prop_assert!(d.p[0].abs().max(d.p[1].abs()) <= 2.0 * PI * n * (1.0 + 1e-12));
            prop_assert!(d.len() <= 2.0 * PI * n * 2f64.sqrt());
            // measured once on the radius-8 box: C ≈ 0.35 for √2 − 1
            prop_assert!(d.len() >= 2.0 * PI * 0.3 * n.powf(-p.mu));
        }

        #[test]
        fn box_nesting(r in 0i64..3, extra in 0i64..2) {
            let small = enumerate_box(r);
            let big = enumerate_box(r + extra);
            prop_assert_eq!(&small, &enumerate_box(r));
            prop_assert!(small.iter().all(|m| big.binary_search(m).is_ok()));
        }

        #[test]
        fn approx_pair_bounds(k in 15.0f64..60.0, r in 0.8f64..1.0) {
            let p = QPParams::default_alpha();
            let a = best_rational(&p, k, r).unwrap();
            prop_assert!(a.defect <= 0.25 * k.powf(-r));
            prop_assert!(a.eps_q.abs() <= 0.25 / a.q as f64 * k.powf(-r));
            prop_assert!(a.eps_q.abs() >= k.powf(-2.0 * r * p.mu));
            prop_assert_eq!(gcd(a.p, a.q), 1);
        }
    }

    #[test]
    fn psnorms_constant_measured() {
        let p = QPParams::default_alpha();
        let c = psnorms_constant(&enumerate_box(8), &p);
        assert!(c > 0.3 && c < 1.0, "{c}");
    }
}
