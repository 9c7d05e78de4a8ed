//! Contour-integral perturbation series for the level eigenvalues λ⁽ⁿ⁾ and projectors E⁽ⁿ⁾.
//!
//! The model operator H̃ is block diagonal; W = H − H̃ carries every coupling between
//! different blocks. Resolvents are applied through the block eigendecompositions.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{couplings, hermitian_eigen, kinetic, spectral_window, FiberMatrix, DEFAULT_DIM_CAP};
use crate::inputs::Inputs;
use crate::lattice::{enumerate_box, LatticeIndex, QPParams};
use crate::potential::PotentialSpec;
use crate::profile::ParameterProfile;
use crate::resonance::{projector_at, BlockProjector};

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Contour {
    pub center: f64,
    pub radius: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug)]
pub struct ModelBlock {
    pub positions: Vec<usize>,
    pub evals: Vec<f64>,
    pub evecs: DMatrix<C>,
}

#[derive(Clone, Debug)]
pub struct LevelState {
    pub level: usize,
    pub kappa: [f64; 2],
    pub indices: Vec<LatticeIndex>,
    pub blocks: Vec<ModelBlock>,
    /// Sparse rows of W: (column, value).
    pub w: Vec<Vec<(usize, C)>>,
    /// (block, eigenvalue index) of the unperturbed level.
    pub target: (usize, usize),
    pub contour: Contour,
}

/// A point of the fiber parameter space: κ = kappa·(cos φ, sin φ), built at energy k².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Point {
    pub k: f64,
    pub phi: f64,
    pub kappa: f64,
}

impl Point {
    pub fn new(k: f64, phi: f64, kappa: f64) -> Self {
        Point { k, phi, kappa }
    }

    pub fn vector(&self) -> [f64; 2] {
        [self.kappa * self.phi.cos(), self.kappa * self.phi.sin()]
    }
}

impl LevelState {
    /// Model = H restricted to each part (positions into `indices`), W = the rest of H.
    /// The target is the eigenvalue of `target_part` nearest to `hint`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        level: usize,
        kappa: [f64; 2],
        indices: Vec<LatticeIndex>,
        parts: &[Vec<usize>],
        target_part: usize,
        hint: f64,
        spec: &PotentialSpec,
        params: &QPParams,
        nodes: usize,
    ) -> Result<Self> {
        crate::fiber::check_distinct(&indices)?;
        let n = indices.len();
        let mut owner = vec![usize::MAX; n];
        for (b, part) in parts.iter().enumerate() {
            for &i in part {
                if owner[i] != usize::MAX {
                    return Err(Error::OverlapDetected(indices[i].to_string()));
                }
                owner[i] = b;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Config(format!("index {} not covered by a model block", indices[i])));
        }
        let rows = couplings(&indices, spec);
        let diag: Vec<f64> = indices.iter().map(|m| kinetic(kappa, m, params)).collect();
        let mut local = vec![0usize; n];
        for part in parts {
            for (a, &i) in part.iter().enumerate() {
                local[i] = a;
            }
        }
        let mut blocks = Vec::with_capacity(parts.len());
        for (b, part) in parts.iter().enumerate() {
            if part.len() == 1 {
                blocks.push(ModelBlock {
                    positions: part.clone(),
                    evals: vec![diag[part[0]]],
                    evecs: DMatrix::from_element(1, 1, C::new(1.0, 0.0)),
                });
                continue;
            }
            let s = part.len();
            let mut h = DMatrix::<C>::zeros(s, s);
            for (a, &i) in part.iter().enumerate() {
                h[(a, a)] = C::new(diag[i], 0.0);
                for &(j, v) in &rows[i] {
                    if owner[j] == b && j > i {
                        h[(a, local[j])] = v;
                        h[(local[j], a)] = v.conj();
                    }
                }
            }
            let (evals, evecs) = hermitian_eigen(&h, DEFAULT_DIM_CAP)?;
            blocks.push(ModelBlock { positions: part.clone(), evals, evecs });
        }
        let w: Vec<Vec<(usize, C)>> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_iter().filter(|(j, _)| owner[*j] != owner[i]).collect())
            .collect();
        let tb = &blocks[target_part];
        let e = (0..tb.evals.len())
            .min_by(|&a, &b| (tb.evals[a] - hint).abs().total_cmp(&(tb.evals[b] - hint).abs()))
            .ok_or_else(|| Error::Config("empty target block".into()))?;
        let center = tb.evals[e];
        let mut gap = f64::INFINITY;
        for (b, blk) in blocks.iter().enumerate() {
            for (i, ev) in blk.evals.iter().enumerate() {
                if (b, i) != (target_part, e) {
                    gap = gap.min((ev - center).abs());
                }
            }
        }
        let radius = if gap.is_finite() { 0.5 * gap } else { 1.0 };
        Ok(LevelState {
            level,
            kappa,
            indices,
            blocks,
            w,
            target: (target_part, e),
            contour: Contour { center, radius, nodes },
        })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn unperturbed(&self) -> f64 {
        self.blocks[self.target.0].evals[self.target.1]
    }

    /// Every model eigenvalue other than the target.
    pub fn model_eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (b, blk) in self.blocks.iter().enumerate() {
            for (i, e) in blk.evals.iter().enumerate() {
                if (b, i) != self.target {
                    out.push(*e);
                }
            }
        }
        out
    }

    /// Unit vector of the unperturbed level in the full basis.
    pub fn target_vector(&self) -> Vec<C> {
        let mut u = vec![ZERO; self.dim()];
        let blk = &self.blocks[self.target.0];
        for (a, &i) in blk.positions.iter().enumerate() {
            u[i] = blk.evecs[(a, self.target.1)];
        }
        u
    }

    pub fn apply_w(&self, x: &[C]) -> Vec<C> {
        self.w.iter().map(|row| row.iter().map(|(j, v)| v * x[*j]).sum()).collect()
    }

    /// (H̃ − z)⁻¹x, with the target level removed when `reduced`.
    pub fn apply_resolvent(&self, x: &[C], z: C, reduced: bool) -> Vec<C> {
        let mut out = vec![ZERO; x.len()];
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.positions.len() == 1 {
                let i = blk.positions[0];
                if !(reduced && self.target.0 == b) {
                    out[i] = x[i] / (blk.evals[0] - z);
                }
                continue;
            }
            let s = blk.positions.len();
            let xb: Vec<C> = blk.positions.iter().map(|&i| x[i]).collect();
            let mut c = vec![ZERO; s];
            for (e, ce) in c.iter_mut().enumerate() {
                if reduced && (b, e) == self.target {
                    continue;
                }
                let mut acc = ZERO;
                for a in 0..s {
                    acc += blk.evecs[(a, e)].conj() * xb[a];
                }
                *ce = acc / (blk.evals[e] - z);
            }
            for (a, &i) in blk.positions.iter().enumerate() {
                let mut acc = ZERO;
                for (e, ce) in c.iter().enumerate() {
                    acc += blk.evecs[(a, e)] * ce;
                }
                out[i] = acc;
            }
        }
        out
    }

    /// H̃ + W assembled densely; equals the truncated fiber matrix.
    pub fn full_matrix(&self) -> DMatrix<C> {
        let n = self.dim();
        let mut h = DMatrix::<C>::zeros(n, n);
        for blk in &self.blocks {
            let s = blk.positions.len();
            for a in 0..s {
                for b in 0..s {
                    let mut acc = ZERO;
                    for (e, ev) in blk.evals.iter().enumerate() {
                        acc += blk.evecs[(a, e)] * blk.evecs[(b, e)].conj() * *ev;
                    }
                    h[(blk.positions[a], blk.positions[b])] = acc;
                }
            }
        }
        for (i, row) in self.w.iter().enumerate() {
            for (j, v) in row {
                h[(i, *j)] += v;
            }
        }
        h
    }

    /// The blocks connected to the target through W; the coefficient series lives there.
    pub fn target_component(&self) -> LevelState {
        let n = self.dim();
        let mut owner = vec![0usize; n];
        for (b, blk) in self.blocks.iter().enumerate() {
            for &i in &blk.positions {
                owner[i] = b;
            }
        }
        let mut seen = vec![false; self.blocks.len()];
        let mut order = vec![self.target.0];
        seen[self.target.0] = true;
        let mut head = 0;
        while head < order.len() {
            let b = order[head];
            head += 1;
            for &i in &self.blocks[b].positions {
                for &(j, _) in &self.w[i] {
                    if !seen[owner[j]] {
                        seen[owner[j]] = true;
                        order.push(owner[j]);
                    }
                }
            }
        }
        if order.len() == self.blocks.len() {
            return self.clone();
        }
        let mut map = vec![usize::MAX; n];
        let mut indices = Vec::new();
        for &b in &order {
            for &i in &self.blocks[b].positions {
                map[i] = indices.len();
                indices.push(self.indices[i]);
            }
        }
        let mut w = vec![Vec::new(); indices.len()];
        for (i, row) in self.w.iter().enumerate() {
            if map[i] != usize::MAX {
                w[map[i]] = row.iter().map(|&(j, v)| (map[j], v)).collect();
            }
        }
        let blocks = order
            .iter()
            .map(|&b| {
                let blk = &self.blocks[b];
                ModelBlock { positions: blk.positions.iter().map(|&i| map[i]).collect(), evals: blk.evals.clone(), evecs: blk.evecs.clone() }
            })
            .collect();
        LevelState { level: self.level, kappa: self.kappa, indices, blocks, w, target: (0, self.target.1), contour: self.contour }
    }

    fn check_contour(&self) -> Result<()> {
        let Contour { center, radius, .. } = self.contour;
        if !(radius > 0.0) {
            return Err(Error::ContourHit { dist: 0.0 });
        }
        for e in self.model_eigenvalues() {
            let d = ((e - center).abs() - radius).abs();
            if d <= 1e-8 * radius || (e - center).abs() < radius {
                return Err(Error::ContourHit { dist: d });
            }
        }
        Ok(())
    }

    fn node(&self, j: usize, n: usize) -> (C, C) {
        let th = 2.0 * PI * j as f64 / n as f64;
        let e = C::from_polar(1.0, th);
        let z = C::new(self.contour.center, 0.0) + e * self.contour.radius;
        // dz / (2πi) for the trapezoid rule
        (z, e * self.contour.radius / n as f64)
    }

    fn coeff_integrand(&self, u0: &[C], z: C, r_max: usize) -> Vec<C> {
        let d = C::new(1.0, 0.0) / (C::new(self.unperturbed(), 0.0) - z);
        let mut b = vec![ZERO; r_max];
        let mut y = self.apply_w(u0);
        let dot = |a: &[C], v: &[C]| a.iter().zip(v).map(|(x, y)| x.conj() * y).sum::<C>();
        b[0] = dot(u0, &y);
        let floor = 1e-24 * (1.0 + self.unperturbed().abs());
        for bl in b.iter_mut().skip(1) {
            if y.iter().all(|a| a.norm() <= floor) {
                break;
            }
            let x = self.apply_resolvent(&y, z, true);
            y = self.apply_w(&x);
            *bl = dot(u0, &y);
        }
        // c[j][r]: sum over compositions of r into j parts (l_i + 1) of Π b_{l_i}
        let mut c = vec![vec![ZERO; r_max + 1]; r_max + 1];
        c[0][0] = C::new(1.0, 0.0);
        for j in 1..=r_max {
            for r in j..=r_max {
                let mut s = ZERO;
                for l in 0..=(r - j) {
                    s += b[l] * c[j - 1][r - l - 1];
                }
                c[j][r] = s;
            }
        }
        let mut out = vec![ZERO; r_max];
        for r in 1..=r_max {
            let mut s = ZERO;
            let mut dj = C::new(1.0, 0.0);
            for (j, cj) in c.iter().enumerate().take(r + 1).skip(1) {
                dj *= d;
                s += dj * cj[r] / j as f64;
            }
            out[r - 1] = s;
        }
        out
    }

    /// Terms −R x, R(WR)x, −R(WR)²x, … of the projector integrand (with sign (−1)^{r+1}).
    fn projector_integrand(&self, x: &[C], z: C, r_max: usize) -> Vec<Vec<C>> {
        let mut terms = Vec::with_capacity(r_max + 1);
        let mut v = self.apply_resolvent(x, z, false);
        terms.push(v.iter().map(|a| -a).collect::<Vec<C>>());
        for r in 1..=r_max {
            v = self.apply_resolvent(&self.apply_w(&v), z, false);
            let s = if r % 2 == 1 { 1.0 } else { -1.0 };
            terms.push(v.iter().map(|a| a * s).collect());
        }
        terms
    }
}

fn sub_norm(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// g_r, r = 1..=r_max, by trapezoidal quadrature with node doubling.
pub fn contour_coeff_series(state: &LevelState, r_max: usize, max_nodes: usize) -> Result<(Vec<C>, usize)> {
    state.check_contour()?;
    series_on(&state.target_component(), r_max, max_nodes)
}

fn series_on(state: &LevelState, r_max: usize, max_nodes: usize) -> Result<(Vec<C>, usize)> {
    let u0 = state.target_vector();
    let mut n = state.contour.nodes.max(8);
    let mut sum = vec![ZERO; r_max];
    let add = |sum: &mut Vec<C>, j: usize, n: usize| {
        let (z, w) = state.node(j, n);
        for (s, v) in sum.iter_mut().zip(state.coeff_integrand(&u0, z, r_max)) {
            *s += v * w * n as f64;
        }
    };
    for j in 0..n {
        add(&mut sum, j, n);
    }
    let finish = |sum: &Vec<C>, n: usize| -> Vec<C> {
        sum.iter()
            .enumerate()
            .map(|(i, s)| {
                let sign = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
                s * sign / n as f64
            })
            .collect()
    };
    let mut g = finish(&sum, n);
    let center = state.contour.center.abs();
    loop {
        if 2 * n > max_nodes {
            return Ok((g, n));
        }
        for j in 0..n {
            add(&mut sum, 2 * j + 1, 2 * n);
        }
        n *= 2;
        let g2 = finish(&sum, n);
        let scale: f64 = g2.iter().map(|x| x.norm()).sum::<f64>();
        let diff = sub_norm(&g, &g2);
        g = g2;
        if diff <= 1e-12 * scale + 1e-16 * center {
            return Ok((g, n));
        }
    }
}

/// Σ_r G_r x for r = 0..=r_max, each term returned separately.
pub fn projector_terms(state: &LevelState, x: &[C], r_max: usize, max_nodes: usize) -> Result<Vec<Vec<C>>> {
    state.check_contour()?;
    let dim = state.dim();
    let mut n = state.contour.nodes.max(8);
    let mut sum = vec![vec![ZERO; dim]; r_max + 1];
    let add = |sum: &mut Vec<Vec<C>>, j: usize, n: usize| {
        let (z, w) = state.node(j, n);
        for (s, t) in sum.iter_mut().zip(state.projector_integrand(x, z, r_max)) {
            for (a, b) in s.iter_mut().zip(t) {
                *a += b * w * n as f64;
            }
        }
    };
    for j in 0..n {
        add(&mut sum, j, n);
    }
    let scaled = |sum: &Vec<Vec<C>>, n: usize| -> Vec<Vec<C>> {
        sum.iter().map(|t| t.iter().map(|a| a / n as f64).collect()).collect()
    };
    let mut terms = scaled(&sum, n);
    loop {
        if 2 * n > max_nodes {
            return Ok(terms);
        }
        for j in 0..n {
            add(&mut sum, 2 * j + 1, 2 * n);
        }
        n *= 2;
        let t2 = scaled(&sum, n);
        let diff = terms.iter().zip(&t2).map(|(a, b)| sub_norm(a, b)).fold(0.0, f64::max);
        terms = t2;
        if diff <= 1e-13 {
            return Ok(terms);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesResult {
    pub level: usize,
    pub kappa: [f64; 2],
    pub lambda: f64,
    /// Unperturbed eigenvalue (|κ|² at level 1, λ⁽¹⁾ at level 2).
    pub e0: f64,
    /// g_r for r = 1, 2, …
    pub g: Vec<f64>,
    pub g_imag_max: f64,
    pub tail_estimate: f64,
    pub ratio: f64,
    pub converged: bool,
    pub contour: Contour,
    pub nodes_used: usize,
    #[serde(skip)]
    pub indices: Vec<LatticeIndex>,
    /// Unit eigenvector E u₀/‖E u₀‖, phase-fixed so the m = 0 entry is real positive.
    #[serde(skip)]
    pub vector: Vec<C>,
    /// Dense E (level 1 only).
    #[serde(skip)]
    pub e_dense: Option<DMatrix<C>>,
    /// ‖G_r‖_F (dense) or ‖G_r u₀‖ (vector mode), r = 0, 1, …
    pub g_norms: Vec<f64>,
    pub oracle_lambda: Option<f64>,
}

/// Decay factor per order, measured over two orders so that series with vanishing
/// odd terms are handled.
fn decay_ratio(g: &[f64], r: usize) -> Option<f64> {
    if r < 4 {
        return None;
    }
    let a = g[r - 1].abs() + g[r - 2].abs();
    let b = g[r - 3].abs() + g[r - 4].abs();
    if b == 0.0 {
        return None;
    }
    Some((a / b).sqrt())
}

/// Convergence bookkeeping: (orders kept, ratio, tail).
fn assess(g: &[f64], scale: f64) -> Result<(usize, f64, f64)> {
    let floor = 1e-17 * scale.max(1.0);
    let mut streak = 0;
    let mut ratio = 0.0;
    for r in 1..=g.len() {
        if r >= 2 && g[r - 1].abs() <= floor && g[r - 2].abs() <= floor {
            return Ok((r, ratio, 0.0));
        }
        if let Some(q) = decay_ratio(g, r) {
            ratio = q;
            if q >= 0.75 {
                streak += 1;
                if streak >= 3 {
                    return Err(Error::NonConvergent { order: r, ratio: q });
                }
            } else {
                streak = 0;
            }
        }
    }
    let last = g.len();
    let s = g[last - 1].abs() + if last >= 2 { g[last - 2].abs() } else { 0.0 };
    let q = ratio.min(0.99);
    Ok((last, ratio, s * q / (1.0 - q)))
}

fn phase_fix(v: &mut [C], indices: &[LatticeIndex]) {
    let i0 = indices.iter().position(|m| m.is_zero()).unwrap_or(0);
    let a = v[i0];
    if a.norm() > 0.0 {
        let ph = a.conj() / a.norm();
        for x in v.iter_mut() {
            *x *= ph;
        }
    }
}

/// Runs the series for one level state; E is formed densely when `dense`.
pub fn generic_step(state: &LevelState, profile: &ParameterProfile, dense: bool) -> Result<SeriesResult> {
    let (gc, nodes_used) = contour_coeff_series(state, profile.r_max, profile.contour_max_nodes)?;
    let g: Vec<f64> = gc.iter().map(|x| x.re).collect();
    let g_imag_max = gc.iter().map(|x| x.im.abs()).fold(0.0, f64::max);
    let e0 = state.unperturbed();
    let (kept, ratio, tail) = assess(&g, e0.abs())?;
    let lambda = e0 + g[..kept].iter().sum::<f64>();
    let u0 = state.target_vector();
    let n = state.dim();
    let (mut vector, e_dense, g_norms) = if dense {
        let mut terms_by_order: Vec<DMatrix<C>> = vec![DMatrix::zeros(n, n); kept + 1];
        for col in 0..n {
            let mut x = vec![ZERO; n];
            x[col] = C::new(1.0, 0.0);
            let t = projector_terms(state, &x, kept, profile.contour_max_nodes)?;
            for (r, tr) in t.iter().enumerate() {
                for (row, v) in tr.iter().enumerate() {
                    terms_by_order[r][(row, col)] = *v;
                }
            }
        }
        let e: DMatrix<C> = terms_by_order.iter().fold(DMatrix::zeros(n, n), |a, b| a + b);
        let norms = terms_by_order.iter().map(|m| m.norm()).collect();
        let u = nalgebra::DVector::from_vec(u0.clone());
        let v: Vec<C> = (&e * u).iter().copied().collect();
        (v, Some(e), norms)
    } else {
        let t = projector_terms(state, &u0, kept, profile.contour_max_nodes)?;
        let norms = t.iter().map(|x| x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()).collect();
        let mut v = vec![ZERO; n];
        for tr in &t {
            for (a, b) in v.iter_mut().zip(tr) {
                *a += b;
            }
        }
        (v, None, norms)
    };
    let nv = vector.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in vector.iter_mut() {
        *a /= nv;
    }
    phase_fix(&mut vector, &state.indices);
    Ok(SeriesResult {
        level: state.level,
        kappa: state.kappa,
        lambda,
        e0,
        g,
        g_imag_max,
        tail_estimate: tail,
        ratio,
        converged: true,
        contour: state.contour,
        nodes_used,
        indices: state.indices.clone(),
        vector,
        e_dense,
        g_norms,
        oracle_lambda: None,
    })
}

/// Level-1 state: H̃ = H₀ on Ω(δ), W = V there; radius from the Step-I neighbours in Ω̃(δ).
pub fn level1_state(kappa: [f64; 2], spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> Result<LevelState> {
    let indices = enumerate_box(profile.r0);
    let parts: Vec<Vec<usize>> = (0..indices.len()).map(|i| vec![i]).collect();
    let zero = indices.iter().position(|m| m.is_zero()).unwrap();
    let e0 = kinetic(kappa, &LatticeIndex::ZERO, params);
    let mut st = LevelState::from_parts(1, kappa, indices, &parts, zero, e0, spec, params, profile.contour_nodes)?;
    let gap = enumerate_box(profile.r0_tilde)
        .iter()
        .filter(|m| !m.is_zero())
        .map(|m| (kinetic(kappa, m, params) - e0).abs())
        .fold(f64::INFINITY, f64::min);
    st.contour.radius = 0.5 * gap;
    Ok(st)
}

/// Level-2 state at κ from a block projector: H̃ = P̃HP̃ + (P(r₁) − P̃)H₀.
pub fn level2_state(
    kappa: [f64; 2],
    proj: &BlockProjector,
    level1_hint: f64,
    spec: &PotentialSpec,
    profile: &ParameterProfile,
    params: &QPParams,
) -> Result<LevelState> {
    let mut indices: Vec<LatticeIndex> = Vec::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for part in proj.parts() {
        let start = indices.len();
        indices.extend_from_slice(part);
        parts.push((start..indices.len()).collect());
    }
    for m in &proj.complement {
        parts.push(vec![indices.len()]);
        indices.push(*m);
    }
    LevelState::from_parts(2, kappa, indices, &parts, 0, level1_hint, spec, params, profile.contour_nodes)
}

/// Level-1 λ at an arbitrary quasimomentum, no oracle.
pub fn shifted_level1(y: [f64; 2], spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> Result<f64> {
    let st = level1_state(y, spec, profile, params)?;
    Ok(generic_step_eigen_only(&st, profile)?.0)
}

/// (λ, g, tail, ratio) without forming the projector.
pub fn generic_step_eigen_only(state: &LevelState, profile: &ParameterProfile) -> Result<(f64, Vec<f64>, f64, f64)> {
    let (gc, _) = contour_coeff_series(state, profile.r_max, profile.contour_max_nodes)?;
    let g: Vec<f64> = gc.iter().map(|x| x.re).collect();
    let e0 = state.unperturbed();
    let (kept, ratio, tail) = assess(&g, e0.abs())?;
    Ok((e0 + g[..kept].iter().sum::<f64>(), g, tail, ratio))
}

/// Level state at a point (level 2 classifies at φ₀ = point.phi with energy k²).
pub fn build_state(level: usize, point: &Point, inputs: &Inputs, profile: &ParameterProfile) -> Result<LevelState> {
    let prof = profile.with_k(point.k);
    let kappa = point.vector();
    match level {
        1 => level1_state(kappa, &inputs.spec, &prof, &inputs.params),
        2 => {
            let (_, proj) = projector_at(point.phi, point.k, &inputs.spec, &prof, &inputs.params, &inputs.table)?;
            state_from_projector(kappa, &proj, inputs, &prof)
        }
        _ => Err(Error::Config(format!("level {level} is not available at this scale"))),
    }
}

pub fn state_from_projector(kappa: [f64; 2], proj: &BlockProjector, inputs: &Inputs, profile: &ParameterProfile) -> Result<LevelState> {
    let l1 = level1_state(kappa, &inputs.spec, profile, &inputs.params)?;
    let hint = generic_step_eigen_only(&l1, profile)?.0;
    level2_state(kappa, proj, hint, &inputs.spec, profile, &inputs.params)
}

/// Series result plus the exact-diagonalization check: one oracle eigenvalue in the contour.
pub fn eigenvalue_level(level: usize, point: &Point, inputs: &Inputs, profile: &ParameterProfile) -> Result<SeriesResult> {
    let state = build_state(level, point, inputs, profile)?;
    let mut res = generic_step(&state, &profile.with_k(point.k), level == 1)?;
    res.oracle_lambda = Some(oracle_check(&state)?);
    Ok(res)
}

/// The unique eigenvalue of H̃ + W inside the contour interval.
pub fn oracle_check(state: &LevelState) -> Result<f64> {
    let m = FiberMatrix { indices: state.indices.clone(), kappa: state.kappa, entries: state.full_matrix() };
    let (count, inside) = spectral_window(&m, state.contour.center, state.contour.radius)?;
    if count != 1 {
        return Err(Error::NotUnique { count });
    }
    Ok(inside[0])
}

pub fn projector_level(level: usize, point: &Point, inputs: &Inputs, profile: &ParameterProfile) -> Result<SeriesResult> {
    let state = build_state(level, point, inputs, profile)?;
    generic_step(&state, &profile.with_k(point.k), level == 1)
}

/// Central differences of λ⁽ⁿ⁾ in the radial κ and in φ (projector held fixed at level 2).
pub fn derivative_probe(level: usize, point: &Point, h: f64, inputs: &Inputs, profile: &ParameterProfile) -> Result<(f64, f64)> {
    let prof = profile.with_k(point.k);
    let proj = if level == 2 {
        Some(projector_at(point.phi, point.k, &inputs.spec, &prof, &inputs.params, &inputs.table)?.1)
    } else {
        None
    };
    let lam = |kap: f64, phi: f64| -> Result<f64> {
        let v = [kap * phi.cos(), kap * phi.sin()];
        let st = match &proj {
            None => level1_state(v, &inputs.spec, &prof, &inputs.params)?,
            Some(p) => state_from_projector(v, p, inputs, &prof)?,
        };
        Ok(generic_step_eigen_only(&st, &prof)?.0)
    };
    let dk = (lam(point.kappa + h, point.phi)? - lam(point.kappa - h, point.phi)?) / (2.0 * h);
    let hp = h / point.kappa;
    let dphi = (lam(point.kappa, point.phi + hp)? - lam(point.kappa, point.phi - hp)?) / (2.0 * hp);
    Ok((dk, dphi))
}

/// g₂ at level 1 by direct summation: Σ |V_m|² / (|κ|² − |κ + p_m|²) over m ∈ Ω(δ)\{0}.
pub fn g2_closed_form(kappa: [f64; 2], spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> f64 {
    let e0 = kinetic(kappa, &LatticeIndex::ZERO, params);
    enumerate_box(profile.r0)
        .iter()
        .filter(|m| !m.is_zero())
        .map(|m| spec.coefficient(&(-*m)).norm_sqr() / (e0 - kinetic(kappa, m, params)))
        .sum()
}

/// Radial derivative of `g2_closed_form`.
pub fn g2_closed_form_dkappa(kappa: [f64; 2], spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> f64 {
    let r = kappa[0].hypot(kappa[1]);
    let nu = [kappa[0] / r, kappa[1] / r];
    enumerate_box(profile.r0)
        .iter()
        .filter(|m| !m.is_zero())
        .map(|m| {
            let p = crate::lattice::dual_vector(m, params).p;
            let den = -(p[0] * p[0] + p[1] * p[1]) - 2.0 * (kappa[0] * p[0] + kappa[1] * p[1]);
            let dden = -2.0 * (nu[0] * p[0] + nu[1] * p[1]);
            -spec.coefficient(&(-*m)).norm_sqr() * dden / (den * den)
        })
        .sum()
}

/// Largest |(G_r)_{ss′}| over entries the support rule forces to vanish (rQ < |||s||| + |||s′|||).
pub fn support_rule_violation(res: &SeriesResult, terms: &[DMatrix<C>], q: i64) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, g) in terms.iter().enumerate().skip(1) {
        for (a, s) in res.indices.iter().enumerate() {
            for (b, t) in res.indices.iter().enumerate() {
                if (r as i64) * q < s.triple_norm() + t.triple_norm() {
                    worst = worst.max(g[(a, b)].norm());
                }
            }
        }
    }
    worst
}

/// Dense G_r, r = 0..=r_max, for small states.
pub fn projector_matrices(state: &LevelState, r_max: usize, max_nodes: usize) -> Result<Vec<DMatrix<C>>> {
    let n = state.dim();
    let mut out = vec![DMatrix::zeros(n, n); r_max + 1];
    for col in 0..n {
        let mut x = vec![ZERO; n];
        x[col] = C::new(1.0, 0.0);
        for (r, t) in projector_terms(state, &x, r_max, max_nodes)?.iter().enumerate() {
            for (row, v) in t.iter().enumerate() {
                out[r][(row, col)] = *v;
            }
        }
    }
    Ok(out)
}

/// Position lookup for the state's indices.
pub fn positions(state: &LevelState) -> HashMap<LatticeIndex, usize> {
    state.indices.iter().enumerate().map(|(i, m)| (*m, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::eig_oracle;
    use crate::resonance::build_omega1;

    fn setup(k: f64) -> (ParameterProfile, Inputs) {
        let prof = ParameterProfile::desk(k);
        let inputs = Inputs::default_for(&prof);
        (prof, inputs)
    }

    fn admissible_phi(k: f64, prof: &ParameterProfile, inputs: &Inputs, n: usize) -> Vec<f64> {
        let om = build_omega1(k, prof, &inputs.params);
        (0..n).map(|i| 0.05 + i as f64 * 2.0 * PI / n as f64).filter(|x| om.contains(*x)).collect()
    }

    #[test]
    fn zero_potential_gives_free_level() {
        let (prof, inputs) = setup(15.0);
        let inputs = inputs.with_spec(PotentialSpec::zero(4));
        let phi = admissible_phi(15.0, &prof, &inputs, 20)[0];
        let r = eigenvalue_level(1, &Point::new(15.0, phi, 15.01), &inputs, &prof).unwrap();
        assert!(r.g.iter().all(|g| *g == 0.0));
        assert!((r.lambda - 15.01f64 * 15.01).abs() < 1e-10);
        let e = r.e_dense.unwrap();
        let i0 = r.indices.iter().position(|m| m.is_zero()).unwrap();
        for a in 0..e.nrows() {
            for b in 0..e.ncols() {
                let want = if a == i0 && b == i0 { 1.0 } else { 0.0 };
                assert!((e[(a, b)] - C::new(want, 0.0)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn level1_structure_and_oracle() {
        let (prof, inputs) = setup(15.0);
        for phi in admissible_phi(15.0, &prof, &inputs, 12) {
            let kv = [15.0 * phi.cos(), 15.0 * phi.sin()];
            let st = level1_state(kv, &inputs.spec, &prof, &inputs.params).unwrap();
            let r = generic_step(&st, &prof, true).unwrap();
            assert!(r.g[0].abs() < 1e-12, "g1 = {}", r.g[0]);
            let closed = g2_closed_form(kv, &inputs.spec, &prof, &inputs.params);
            assert!((r.g[1] - closed).abs() < 1e-10 * closed.abs().max(1.0));
            assert!(r.g_imag_max < 1e-10);
            let oracle = oracle_check(&st).unwrap();
            assert!((r.lambda - oracle).abs() <= (1e-9 * 225.0f64).max(10.0 * r.tail_estimate));
            let e = r.e_dense.as_ref().unwrap();
            assert!((e * e - e).norm() < 1e-8);
            assert!((e.trace().re - 1.0).abs() < 1e-8);
            assert!((e - e.adjoint()).norm() < 1e-12);
            // eigenvector against the oracle
            let fm = FiberMatrix { indices: st.indices.clone(), kappa: kv, entries: st.full_matrix() };
            let sd = eig_oracle(&fm).unwrap();
            let j = sd.eigenvalues.iter().position(|l| (l - oracle).abs() < 1e-12).unwrap();
            let mut v: Vec<C> = sd.eigenvectors.column(j).iter().copied().collect();
            phase_fix(&mut v, &st.indices);
            assert!(sub_norm(&v, &r.vector) < 1e-7);
            let ms = projector_matrices(&st, 6, prof.contour_max_nodes).unwrap();
            assert!(support_rule_violation(&r, &ms, inputs.spec.reach()) < 1e-12);
        }
    }

    #[test]
    fn full_matrix_is_the_truncation() {
        let (prof, inputs) = setup(25.0);
        let kv = [3.0, 24.7];
        let st = level1_state(kv, &inputs.spec, &prof, &inputs.params).unwrap();
        let fm = FiberMatrix::assemble(kv, &st.indices, &inputs.spec, &inputs.params).unwrap();
        assert_eq!(st.full_matrix(), fm.entries);
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let (prof, inputs) = setup(25.0);
        let phi = admissible_phi(25.0, &prof, &inputs, 40)[1];
        let kv = [25.0 * phi.cos(), 25.0 * phi.sin()];
        let mut st = level1_state(kv, &inputs.spec, &prof, &inputs.params).unwrap();
        let (a, _) = contour_coeff_series(&st, 12, 64).unwrap();
        st.contour.nodes = 128;
        let (b, _) = contour_coeff_series(&st, 12, 128).unwrap();
        let la: f64 = a.iter().map(|x| x.re).sum();
        let lb: f64 = b.iter().map(|x| x.re).sum();
        assert!((la - lb).abs() <= 1e-12 * 625.0);
    }

    #[test]
    fn contour_hit_detected() {
        let (prof, inputs) = setup(15.0);
        let kv = [15.0, 0.0];
        let mut st = level1_state(kv, &inputs.spec, &prof, &inputs.params).unwrap();
        let e = st.model_eigenvalues()[0];
        st.contour.radius = (e - st.contour.center).abs();
        assert!(matches!(contour_coeff_series(&st, 4, 64), Err(Error::ContourHit { .. })));
    }

    #[test]
    fn assess_flags_divergence() {
        let g: Vec<f64> = (0..12).map(|r| 0.9f64.powi(r)).collect();
        assert!(matches!(assess(&g, 1.0), Err(Error::NonConvergent { .. })));
        let g: Vec<f64> = (0..12).map(|r| if r % 2 == 1 { 0.3f64.powi(r) } else { 0.0 }).collect();
        let (_, ratio, _) = assess(&g, 1.0).unwrap();
        assert!(ratio < 0.5);
    }

    #[test]
    fn analytic_g2_derivative_matches_differences() {
        let (prof, inputs) = setup(25.0);
        let kv: [f64; 2] = [10.0, 22.0];
        let h = 1e-5;
        let r = kv[0].hypot(kv[1]);
        let at = |s: f64| {
            let f = (r + s) / r;
            g2_closed_form([kv[0] * f, kv[1] * f], &inputs.spec, &prof, &inputs.params)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an = g2_closed_form_dkappa(kv, &inputs.spec, &prof, &inputs.params);
        assert!((fd - an).abs() < 1e-8 * an.abs().max(1e-3));
    }

    #[test]
    fn level2_matches_oracle_at_one_point() {
        let (prof, inputs) = setup(15.0);
        let phi = admissible_phi(15.0, &prof, &inputs, 10)[2];
        let st = build_state(2, &Point::new(15.0, phi, 15.0), &inputs, &prof);
        if let Ok(st) = st {
            let r = generic_step(&st, &prof, false).unwrap();
            let l1 = level1_state(st.kappa, &inputs.spec, &prof, &inputs.params).unwrap();
            let r1 = generic_step_eigen_only(&l1, &prof).unwrap().0;
            assert!((r.e0 - r1).abs() < 1e-10);
            assert!(r.g[0].abs() < 1e-14);
        }
    }

    #[test]
    fn component_reduction_is_exact() {
        let (prof, inputs) = setup(15.0);
        let phi = admissible_phi(15.0, &prof, &inputs, 10)[2];
        let st = build_state(2, &Point::new(15.0, phi, 15.0), &inputs, &prof).unwrap();
        let red = st.target_component();
        assert!(red.dim() < st.dim());
        assert_eq!(red.unperturbed(), st.unperturbed());
        let (a, _) = series_on(&st, 12, 256).unwrap();
        let (b, _) = series_on(&red, 12, 256).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-14 * st.unperturbed());
        }
    }
}
