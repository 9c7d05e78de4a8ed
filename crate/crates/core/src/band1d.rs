//! One-dimensional periodic operators along a direction q of S_Q:
//! H̃(t)_{n₁n₂} = (t + n₁p_q)²δ + V_{(n₁−n₂)q}.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{hermitian_eigenvalues, FiberMatrix, DEFAULT_DIM_CAP};
use crate::lattice::{dual_vector, LatticeIndex, QPParams};
use crate::potential::PotentialSpec;
use crate::resonance::{ClusterClass, Subset};

fn generator_p(q: &LatticeIndex, spec: &PotentialSpec) -> Result<f64> {
    spec.directions
        .iter()
        .find(|d| d.generator == *q)
        .map(|d| d.p_q)
        .ok_or_else(|| Error::NotGenerator(q.to_string()))
}

/// Restriction to n ∈ [lo, hi].
pub fn assemble_window(q: &LatticeIndex, t: f64, lo: i64, hi: i64, spec: &PotentialSpec) -> Result<FiberMatrix> {
    let p = generator_p(q, spec)?;
    let ns: Vec<i64> = (lo..=hi).collect();
    let n = ns.len();
    let mut h = nalgebra::DMatrix::<Complex64>::zeros(n, n);
    for (a, &na) in ns.iter().enumerate() {
        let x = t + na as f64 * p;
        h[(a, a)] = Complex64::new(x * x, 0.0);
        for (b, &nb) in ns.iter().enumerate().skip(a + 1) {
            let v = spec.coefficient(&((na - nb) * *q));
            h[(a, b)] = v;
            h[(b, a)] = v.conj();
        }
    }
    Ok(FiberMatrix { indices: ns.iter().map(|&k| k * *q).collect(), kappa: [t, 0.0], entries: h })
}

/// (2N+1)×(2N+1) section centred at n = 0.
pub fn assemble_periodic(q: &LatticeIndex, t: f64, n: i64, spec: &PotentialSpec) -> Result<FiberMatrix> {
    if n < 1 {
        return Err(Error::Config("truncation N must be at least 1".into()));
    }
    assemble_window(q, t, -n, n, spec)
}

pub fn section_eigenvalues(q: &LatticeIndex, t: f64, lo: i64, hi: i64, spec: &PotentialSpec) -> Result<Vec<f64>> {
    hermitian_eigenvalues(&assemble_window(q, t, lo, hi, spec)?.entries, DEFAULT_DIM_CAP)
}

#[derive(Clone, Debug, Serialize)]
pub struct BandData {
    pub n: usize,
    pub samples: Vec<(f64, f64)>,
    pub bottom: f64,
    pub top: f64,
    pub zone_length: f64,
}

/// λ̃ₙ^per(t) on the grid, with the zone [min, max].
pub fn band_function(q: &LatticeIndex, n: usize, t_grid: &[f64], trunc: i64, spec: &PotentialSpec) -> Result<BandData> {
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let ev = hermitian_eigenvalues(&assemble_periodic(q, t, trunc, spec)?.entries, DEFAULT_DIM_CAP)?;
        samples.push((t, ev[n]));
    }
    let bottom = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let top = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(BandData { n, samples, bottom, top, zone_length: top - bottom })
}

/// Uniform grid of `m` points over one period [0, p_q).
pub fn period_grid(q: &LatticeIndex, m: usize, spec: &PotentialSpec) -> Result<Vec<f64>> {
    let p = generator_p(q, spec)?;
    Ok((0..m).map(|i| p * i as f64 / m as f64).collect())
}

pub fn reference_truncation(window: i64) -> i64 {
    64.max(4 * window)
}

/// Gaps between the lowest `bands` eigenvalues of the windows [n₋ − j, n₊ + j], j = 0..steps,
/// and the large periodic reference.
pub fn finite_vs_periodic(
    q: &LatticeIndex,
    t: f64,
    n_minus: i64,
    n_plus: i64,
    steps: usize,
    bands: usize,
    spec: &PotentialSpec,
) -> Result<Vec<f64>> {
    let width = n_plus - n_minus + 1 + 2 * steps as i64;
    let nref = reference_truncation(width);
    let reference = section_eigenvalues(q, t, -nref, nref, spec)?;
    let mut gaps = Vec::with_capacity(steps + 1);
    for j in 0..=steps as i64 {
        let ev = section_eigenvalues(q, t, n_minus - j, n_plus + j, spec)?;
        let b = bands.min(ev.len());
        gaps.push((0..b).map(|i| (ev[i] - reference[i]).abs()).fold(0.0, f64::max));
    }
    Ok(gaps)
}

/// ‖H^{j,s}(κ) − (H̃(t_q) + (t⊥)²I)‖_max and ‖H‖_max for one non-trivial subset.
pub fn separation_check(
    class: &ClusterClass,
    subset: &Subset,
    kappa: [f64; 2],
    spec: &PotentialSpec,
    params: &QPParams,
) -> Result<(f64, f64)> {
    let g = class.direction.ok_or_else(|| Error::NotGenerator("trivial class".into()))?;
    let pg = dual_vector(&g, params).p;
    let l = pg[0].hypot(pg[1]);
    let nu = [pg[0] / l, pg[1] / l];
    let pc = dual_vector(&subset.center, params).p;
    let y = [kappa[0] + pc[0], kappa[1] + pc[1]];
    let t = y[0] * nu[0] + y[1] * nu[1];
    let tp = -y[0] * nu[1] + y[1] * nu[0];
    let full = FiberMatrix::assemble(kappa, &subset.members, spec, params)?;
    let mut oned = assemble_window(&g, t, subset.n_minus, subset.n_plus, spec)?;
    for i in 0..oned.dim() {
        oned.entries[(i, i)] += Complex64::new(tp * tp, 0.0);
    }
    let dev = full
        .entries
        .iter()
        .zip(oned.entries.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let scale = full.entries.iter().map(|a| a.norm()).fold(0.0, f64::max);
    Ok((dev, scale))
}

/// CSV with columns t, n, lambda.
pub fn export_bands(bands: &[BandData], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["t", "n", "lambda"]).map_err(|e| Error::Io(e.to_string()))?;
    for b in bands {
        for (t, l) in &b.samples {
            w.write_record([format!("{t:.16e}"), b.n.to_string(), format!("{l:.16e}")])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::default_potential;

    fn qa() -> LatticeIndex {
        LatticeIndex::new([0, 0], [1, 0])
    }

    #[test]
    fn free_section_is_diagonal() {
        let p = QPParams::default_alpha();
        let v0 = PotentialSpec::build(&[(qa(), Complex64::new(0.0, 0.0))], 4, &p).unwrap();
        let m = assemble_periodic(&qa(), 0.3, 3, &v0).unwrap();
        let pq = dual_vector(&qa(), &p).len();
        for i in 0..7 {
            let x = 0.3 + (i as f64 - 3.0) * pq;
            assert_eq!(m.entries[(i, i)].re, x * x);
            for j in 0..7 {
                if i != j {
                    assert_eq!(m.entries[(i, j)], Complex64::default());
                }
            }
        }
    }

    #[test]
    fn hermitian_and_generator_checked() {
        let p = QPParams::default_alpha();
        let spec = default_potential(&p);
        let m = assemble_periodic(&qa(), 1.1, 5, &spec).unwrap();
        assert!(m.is_hermitian_exact());
        let bad = LatticeIndex::new([1, 0], [0, 0]);
        assert!(matches!(assemble_periodic(&bad, 0.0, 2, &spec), Err(Error::NotGenerator(_))));
    }

    #[test]
    fn truncation_refinement_converges() {
        let p = QPParams::default_alpha();
        let spec = default_potential(&p);
        let mut last = f64::INFINITY;
        for n in [2, 4, 8] {
            let a = section_eigenvalues(&qa(), 0.7, -n, n, &spec).unwrap();
            let b = section_eigenvalues(&qa(), 0.7, -2 * n, 2 * n, &spec).unwrap();
            let d = (a[0] - b[0]).abs().max((a[1] - b[1]).abs());
            assert!(d <= last + 1e-13);
            last = d;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn bands_periodic_and_ordered() {
        let p = QPParams::default_alpha();
        let spec = default_potential(&p);
        let pq = dual_vector(&qa(), &p).len();
        for t in [0.0, 0.4, 1.3] {
            let a = section_eigenvalues(&qa(), t, -64, 64, &spec).unwrap();
            let b = section_eigenvalues(&qa(), t + pq, -64, 64, &spec).unwrap();
            for n in 0..4 {
                assert!((a[n] - b[n]).abs() < 1e-9 * a[n].abs().max(1.0));
                assert!(a[n] <= a[n + 1]);
            }
        }
        let grid = period_grid(&qa(), 32, &spec).unwrap();
        for n in 0..3 {
            let b = band_function(&qa(), n, &grid, 16, &spec).unwrap();
            assert!(b.zone_length > 0.0);
        }
    }

    #[test]
    fn window_gap_decreases() {
        let p = QPParams::default_alpha();
        let spec = default_potential(&p);
        let g = finite_vs_periodic(&qa(), 0.9, -1, 1, 4, 2, &spec).unwrap();
        for w in g.windows(2) {
            assert!(w[1] <= w[0] + 1e-13);
        }
        assert!(g[g.len() - 1] < g[0]);
        let same = section_eigenvalues(&qa(), 0.9, -64, 64, &spec).unwrap();
        let r = section_eigenvalues(&qa(), 0.9, -reference_truncation(3), reference_truncation(3), &spec).unwrap();
        assert_eq!(same[0], r[0]);
    }

    #[test]
    fn free_zone_lengths_explicit() {
        let p = QPParams::default_alpha();
        let v0 = PotentialSpec::build(&[(qa(), Complex64::new(0.0, 0.0))], 4, &p).unwrap();
        let pq = dual_vector(&qa(), &p).len();
        let grid: Vec<f64> = (0..=200).map(|i| pq * i as f64 / 200.0).collect();
        let b0 = band_function(&qa(), 0, &grid, 8, &v0).unwrap();
        // lowest free band: min over n of (t + n p)², ranging over [0, p²/4]
        assert!(b0.bottom.abs() < 1e-12);
        assert!((b0.top - pq * pq / 4.0).abs() < 1e-12);
    }
}
