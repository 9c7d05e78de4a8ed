//! Approximate eigenfunctions Ψₙ(κ, x) = Σ v_s e^{i⟨κ + p_s, x⟩} built from the level projectors.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{couplings, kinetic};
use crate::inputs::Inputs;
use crate::lattice::{dual_vector, enumerate_box, LatticeIndex, QPParams};
use crate::perturb::{projector_level, Point};
use crate::potential::PotentialSpec;
use crate::profile::ParameterProfile;

type C = Complex64;

#[derive(Clone, Debug, Serialize)]
pub struct WaveFunction {
    pub level: usize,
    pub kappa: [f64; 2],
    pub lambda: f64,
    /// Support radius r_{n−1}.
    pub radius: i64,
    #[serde(skip)]
    pub coeffs: BTreeMap<LatticeIndex, C>,
}

impl WaveFunction {
    /// Unperturbed plane wave e^{i⟨κ, x⟩}.
    pub fn plane(kappa: [f64; 2]) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(LatticeIndex::ZERO, C::new(1.0, 0.0));
        WaveFunction { level: 0, kappa, lambda: kappa[0] * kappa[0] + kappa[1] * kappa[1], radius: 0, coeffs }
    }

    pub fn coeff(&self, m: &LatticeIndex) -> C {
        self.coeffs.get(m).copied().unwrap_or_default()
    }

    pub fn norm2(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ‖v − w‖₁ over the union of supports.
    pub fn l1_distance(&self, other: &WaveFunction) -> f64 {
        let mut keys: Vec<&LatticeIndex> = self.coeffs.keys().chain(other.coeffs.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.iter().map(|m| (self.coeff(m) - other.coeff(m)).norm()).sum()
    }
}

/// Unit eigenvector of the level-n projector, v₀ real positive.
pub fn synthesize(level: usize, point: &Point, inputs: &Inputs, profile: &ParameterProfile) -> Result<WaveFunction> {
    let res = projector_level(level, point, inputs, profile)?;
    if !res.converged {
        return Err(Error::NonConvergent { order: res.g.len(), ratio: res.ratio });
    }
    let radius = res.indices.iter().map(|m| m.triple_norm()).max().unwrap_or(0);
    let coeffs = res.indices.iter().copied().zip(res.vector.iter().copied()).collect();
    Ok(WaveFunction { level, kappa: res.kappa, lambda: res.lambda, radius, coeffs })
}

#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    /// Entries of g = (H − λ)v on Ω(r + Q).
    #[serde(skip)]
    pub g: BTreeMap<LatticeIndex, C>,
    pub l1: f64,
    pub l2: f64,
    /// Largest |g_s| with |||s||| ≤ r.
    pub interior_max: f64,
    /// Largest |g_s| with |||s||| > r + reach of V.
    pub outer_max: f64,
    /// Largest |H_ss| on the box, the scale for the interior check.
    pub h_scale: f64,
}

/// g = (H − λ)v evaluated entry by entry on Ω(r + Q).
pub fn residual(wf: &WaveFunction, spec: &PotentialSpec, params: &QPParams) -> Residual {
    let r = wf.radius;
    let big = r + spec.q_max;
    let reach = spec.reach();
    let support = spec.support();
    let mut g = BTreeMap::new();
    let (mut l1, mut l2, mut interior, mut outer, mut scale) = (0.0, 0.0, 0.0f64, 0.0f64, 0.0f64);
    for s in enumerate_box(big) {
        let d = kinetic(wf.kappa, &s, params);
        scale = scale.max(d.abs());
        let mut acc = (d - wf.lambda) * wf.coeff(&s);
        for q in &support {
            acc += spec.coefficient(q) * wf.coeff(&(s - *q));
        }
        let a = acc.norm();
        l1 += a;
        l2 += a * a;
        let n = s.triple_norm();
        if n <= r {
            interior = interior.max(a);
        } else if n > r + reach {
            outer = outer.max(a);
        }
        if a > 0.0 {
            g.insert(s, acc);
        }
    }
    Residual { g, l1, l2: l2.sqrt(), interior_max: interior, outer_max: outer, h_scale: scale }
}

/// ‖(H − λ)v‖₂ from the sparse fiber couplings on Ω(r + reach).
pub fn residual_l2_from_fiber(wf: &WaveFunction, spec: &PotentialSpec, params: &QPParams) -> f64 {
    let idx = enumerate_box(wf.radius + spec.reach());
    let rows = couplings(&idx, spec);
    let v: Vec<C> = idx.iter().map(|m| wf.coeff(m)).collect();
    let mut sum = 0.0;
    for (i, m) in idx.iter().enumerate() {
        let mut acc = (kinetic(wf.kappa, m, params) - wf.lambda) * v[i];
        for (j, h) in &rows[i] {
            acc += h * v[*j];
        }
        sum += acc.norm_sqr();
    }
    sum.sqrt()
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub x: [f64; 2],
    pub psi: C,
    pub u: C,
}

#[derive(Clone, Debug, Serialize)]
pub struct Samples {
    #[serde(skip)]
    pub points: Vec<Sample>,
    pub sup_psi: f64,
    pub sup_u: f64,
}

/// Uniform n×n grid over [0, 1)².
pub fn unit_grid(n: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    out
}

/// Ψₙ on the grid and u = e^{−i⟨κ,x⟩}(Ψₙ − Ψ_prev), the previous level taken at the same κ.
pub fn sample(wf: &WaveFunction, prev: &WaveFunction, grid: &[[f64; 2]], params: &QPParams) -> Samples {
    let mut keys: Vec<LatticeIndex> = wf.coeffs.keys().chain(prev.coeffs.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let terms: Vec<(C, C, [f64; 2])> = keys
        .iter()
        .map(|m| (wf.coeff(m), wf.coeff(m) - prev.coeff(m), dual_vector(m, params).p))
        .collect();
    let mut points = Vec::with_capacity(grid.len());
    let (mut sup_psi, mut sup_u) = (0.0f64, 0.0f64);
    for &x in grid {
        let (mut own, mut u) = (C::default(), C::default());
        for (c, d, p) in &terms {
            let e = C::from_polar(1.0, p[0] * x[0] + p[1] * x[1]);
            own += c * e;
            u += d * e;
        }
        let psi = C::from_polar(1.0, wf.kappa[0] * x[0] + wf.kappa[1] * x[1]) * own;
        sup_psi = sup_psi.max(psi.norm());
        sup_u = sup_u.max(u.norm());
        points.push(Sample { x, psi, u });
    }
    Samples { points, sup_psi, sup_u }
}

/// CSV with columns x1, x2, re_psi, im_psi, abs_u.
pub fn export_samples(s: &Samples, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["x1", "x2", "re_psi", "im_psi", "abs_u"]).map_err(|e| Error::Io(e.to_string()))?;
    for p in &s.points {
        w.write_record([
            format!("{:.16e}", p.x[0]),
            format!("{:.16e}", p.x[1]),
            format!("{:.16e}", p.psi.re),
            format!("{:.16e}", p.psi.im),
            format!("{:.16e}", p.u.norm()),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
