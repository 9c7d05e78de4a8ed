//! Truncated fiber matrices H(κ) and the exact-diagonalization oracle.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{dual_vector, LatticeIndex, QPParams};
use crate::potential::PotentialSpec;

pub const DEFAULT_DIM_CAP: usize = 4096;

/// |κ + p_m|².
pub fn kinetic(kappa: [f64; 2], m: &LatticeIndex, params: &QPParams) -> f64 {
    let p = dual_vector(m, params).p;
    let x = kappa[0] + p[0];
    let y = kappa[1] + p[1];
    x * x + y * y
}

/// Sparse off-diagonal structure: for each row i, the pairs (j, V_{m_i − m_j}) with V ≠ 0.
pub fn couplings(indices: &[LatticeIndex], spec: &PotentialSpec) -> Vec<Vec<(usize, Complex64)>> {
    let pos: HashMap<LatticeIndex, usize> =
        indices.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let support = spec.support();
    indices
        .iter()
        .map(|m| {
            let mut row: Vec<(usize, Complex64)> = support
                .iter()
                .filter_map(|q| pos.get(&(*m - *q)).map(|&j| (j, spec.coefficient(q))))
                .collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FiberMatrix {
    pub indices: Vec<LatticeIndex>,
    pub kappa: [f64; 2],
    pub entries: DMatrix<Complex64>,
}

#[derive(Clone, Debug)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<Complex64>,
    pub residual_norm: f64,
}

pub fn check_distinct(indices: &[LatticeIndex]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(indices.len());
    for m in indices {
        if !seen.insert(*m) {
            return Err(Error::DuplicateIndex(m.to_string()));
        }
    }
    Ok(())
}

impl FiberMatrix {
    pub fn assemble(
        kappa: [f64; 2],
        indices: &[LatticeIndex],
        spec: &PotentialSpec,
        params: &QPParams,
    ) -> Result<Self> {
        check_distinct(indices)?;
        let n = indices.len();
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for (i, m) in indices.iter().enumerate() {
            h[(i, i)] = Complex64::new(kinetic(kappa, m, params), 0.0);
        }
        for (i, row) in couplings(indices, spec).into_iter().enumerate() {
            for (j, v) in row {
                if j > i {
                    h[(i, j)] = v;
                    h[(j, i)] = v.conj();
                }
            }
        }
        Ok(FiberMatrix { indices: indices.to_vec(), kappa, entries: h })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn is_hermitian_exact(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| {
            self.entries[(i, i)].im == 0.0
                && (i + 1..n).all(|j| self.entries[(i, j)] == self.entries[(j, i)].conj())
        })
    }

    /// Principal submatrix on the given positions.
    pub fn restrict(&self, positions: &[usize]) -> FiberMatrix {
        let n = positions.len();
        let entries = DMatrix::from_fn(n, n, |a, b| self.entries[(positions[a], positions[b])]);
        FiberMatrix {
            indices: positions.iter().map(|&i| self.indices[i]).collect(),
            kappa: self.kappa,
            entries,
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).sum()
    }
}

pub fn eig_oracle(m: &FiberMatrix) -> Result<SpectralData> {
    eig_oracle_capped(m, DEFAULT_DIM_CAP)
}

pub fn eig_oracle_capped(m: &FiberMatrix, cap: usize) -> Result<SpectralData> {
    let (eigenvalues, eigenvectors) = hermitian_eigen(&m.entries, cap)?;
    let mut residual: f64 = 0.0;
    let av = &m.entries * &eigenvectors;
    for (i, lam) in eigenvalues.iter().enumerate() {
        let r = (av.column(i) - eigenvectors.column(i) * Complex64::new(*lam, 0.0)).norm();
        residual = residual.max(r);
    }
    Ok(SpectralData { eigenvalues, eigenvectors, residual_norm: residual })
}

/// Ascending eigenpairs of a Hermitian matrix.
pub fn hermitian_eigen(a: &DMatrix<Complex64>, cap: usize) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    if n > cap {
        return Err(Error::DimensionCap { dim: n, cap });
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Ascending eigenvalues only.
pub fn eigenvalues(m: &FiberMatrix) -> Result<Vec<f64>> {
    hermitian_eigenvalues(&m.entries, DEFAULT_DIM_CAP)
}

pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>, cap: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n > cap {
        return Err(Error::DimensionCap { dim: n, cap });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// dist(z, spectrum), which equals 1/‖(M − z)^{-1}‖ for Hermitian M.
pub fn resolvent_gap(m: &FiberMatrix, z: Complex64) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| (Complex64::new(*l, 0.0) - z).norm())
        .fold(f64::INFINITY, f64::min))
}

pub fn spectral_window(m: &FiberMatrix, center: f64, radius: f64) -> Result<(usize, Vec<f64>)> {
    let inside: Vec<f64> =
        eigenvalues(m)?.into_iter().filter(|l| (l - center).abs() <= radius).collect();
    Ok((inside.len(), inside))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_box;
    use crate::potential::default_potential;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qa() -> LatticeIndex {
        LatticeIndex::new([0, 0], [1, 0])
    }

    #[test]
    fn zero_potential_is_diagonal() {
        let p = QPParams::default_alpha();
        let idx = enumerate_box(1);
        let kappa = [3.0, -1.5];
        let h = FiberMatrix::assemble(kappa, &idx, &PotentialSpec::zero(4), &p).unwrap();
        for i in 0..h.dim() {
            for j in 0..h.dim() {
                let want = if i == j { kinetic(kappa, &idx[i], &p) } else { 0.0 };
                assert_eq!(h.entries[(i, j)], Complex64::new(want, 0.0));
            }
        }
        let mut diag: Vec<f64> = idx.iter().map(|m| kinetic(kappa, m, &p)).collect();
        diag.sort_by(f64::total_cmp);
        let ev = eig_oracle(&h).unwrap().eigenvalues;
        for (a, b) in ev.iter().zip(&diag) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_index() {
        let p = QPParams::default_alpha();
        let m = LatticeIndex::new([1, 0], [0, 1]);
        let h = FiberMatrix::assemble([1.0, 2.0], &[m], &default_potential(&p), &p).unwrap();
        assert_eq!(h.dim(), 1);
        assert_eq!(h.entries[(0, 0)].re, kinetic([1.0, 2.0], &m, &p));
    }

    #[test]
    fn two_by_two_closed_form() {
        let p = QPParams::default_alpha();
        let v = Complex64::new(0.3, -0.4);
        let spec = PotentialSpec::build(&[(qa(), v)], 4, &p).unwrap();
        let kappa = [2.0, 0.7];
        let idx = [LatticeIndex::ZERO, qa()];
        let h = FiberMatrix::assemble(kappa, &idx, &spec, &p).unwrap();
        let a = kappa[0].powi(2) + kappa[1].powi(2);
        let b = kinetic(kappa, &qa(), &p);
        let disc = ((a - b).powi(2) + 4.0 * v.norm_sqr()).sqrt();
        let ev = eig_oracle(&h).unwrap().eigenvalues;
        assert!((ev[0] - (a + b - disc) / 2.0).abs() < 1e-12);
        assert!((ev[1] - (a + b + disc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rejected() {
        let p = QPParams::default_alpha();
        let r = FiberMatrix::assemble([0.0, 0.0], &[qa(), qa()], &PotentialSpec::zero(4), &p);
        assert!(matches!(r, Err(Error::DuplicateIndex(_))));
    }

    #[test]
    fn dimension_cap() {
        let p = QPParams::default_alpha();
        let h = FiberMatrix::assemble([0.0, 0.0], &enumerate_box(1), &PotentialSpec::zero(4), &p)
            .unwrap();
        assert!(matches!(eig_oracle_capped(&h, 10), Err(Error::DimensionCap { dim: 17, cap: 10 })));
    }

    #[test]
    fn oracle_quality() {
        let p = QPParams::default_alpha();
        let idx = enumerate_box(2);
        let h = FiberMatrix::assemble([14.0, 5.0], &idx, &default_potential(&p), &p).unwrap();
        assert!(h.is_hermitian_exact());
        let s = eig_oracle(&h).unwrap();
        let scale = h.frobenius();
        assert!(s.residual_norm <= 1e-10 * scale);
        let u = &s.eigenvectors;
        let gram = u.adjoint() * u;
        for i in 0..u.ncols() {
            for j in 0..u.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-10);
            }
        }
        let tr: f64 = s.eigenvalues.iter().sum();
        assert!((tr - h.trace()).abs() <= 1e-10 * h.trace().abs());
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gap_and_window() {
        let p = QPParams::default_alpha();
        let h = FiberMatrix::assemble([9.0, 1.0], &enumerate_box(1), &default_potential(&p), &p)
            .unwrap();
        let ev = eigenvalues(&h).unwrap();
        let z = Complex64::new(ev[0] - 50.0, 0.0);
        assert!((resolvent_gap(&h, z).unwrap() - 50.0).abs() < 1e-9);
        assert!(resolvent_gap(&h, Complex64::new(ev[3], 0.0)).unwrap() < 1e-12);
        let (c, w) = spectral_window(&h, ev[5], 1e-9).unwrap();
        assert!(c >= 1 && w.contains(&ev[5]));
        assert_eq!(spectral_window(&h, 0.0, 1e9).unwrap().0, h.dim());
        let (c, _) = spectral_window(&h, 100.0, 40.0).unwrap();
        assert_eq!(c, ev.iter().filter(|l| (*l - 100.0).abs() <= 40.0).count());
    }

    #[test]
    fn gap_matches_smallest_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = 20;
            let mut a = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..n {
                a[(i, i)] = Complex64::new(rng.gen_range(-5.0..5.0), 0.0);
                for j in i + 1..n {
                    let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    a[(i, j)] = z;
                    a[(j, i)] = z.conj();
                }
            }
            let m = FiberMatrix { indices: vec![LatticeIndex::ZERO; n], kappa: [0.0; 2], entries: a };
            let z = Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-0.5..0.5));
            let shifted = &m.entries - DMatrix::<Complex64>::identity(n, n) * z;
            let smin = shifted.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
            assert!((resolvent_gap(&m, z).unwrap() - smin).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn principal_submatrix(kx in -20.0f64..20.0, ky in -20.0f64..20.0, pick in 0u64..1000) {
            let p = QPParams::default_alpha();
            let spec = default_potential(&p);
            let big = enumerate_box(2);
            let full = FiberMatrix::assemble([kx, ky], &big, &spec, &p).unwrap();
            prop_assert!(full.is_hermitian_exact());
            let mut rng = ChaCha8Rng::seed_from_u64(pick);
            let pos: Vec<usize> = (0..big.len()).filter(|_| rng.gen_bool(0.3)).collect();
            let sub: Vec<LatticeIndex> = pos.iter().map(|&i| big[i]).collect();
            let direct = FiberMatrix::assemble([kx, ky], &sub, &spec, &p).unwrap();
            prop_assert_eq!(&full.restrict(&pos).entries, &direct.entries);
        }

        #[test]
        fn free_spectrum(kx in -20.0f64..20.0, ky in -20.0f64..20.0) {
            let p = QPParams::default_alpha();
            let idx = enumerate_box(1);
            let h = FiberMatrix::assemble([kx, ky], &idx, &PotentialSpec::zero(4), &p).unwrap();
            let mut diag: Vec<f64> = idx.iter().map(|m| kinetic([kx, ky], m, &p)).collect();
            diag.sort_by(f64::total_cmp);
            for (a, b) in eig_oracle(&h).unwrap().eigenvalues.iter().zip(&diag) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
