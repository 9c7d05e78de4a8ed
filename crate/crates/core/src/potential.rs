//! Trigonometric-polynomial potential V on the finite symmetric set S_Q.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{dual_vector, LatticeIndex, QPParams};

/// One direction of S_Q: its primitive generator and the multiples n·g present.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub generator: LatticeIndex,
    pub p_q: f64,
    pub multiples: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    /// V_q for every q in S_Q (zero-filled multiples included). V_0 is never stored.
    pub coeffs: BTreeMap<LatticeIndex, Complex64>,
    pub q_max: i64,
    pub generators: Vec<(LatticeIndex, Complex64)>,
    pub directions: Vec<Direction>,
}

/// The orientation of ±m that is lexicographically larger.
fn positive(m: LatticeIndex) -> LatticeIndex {
    if m > -m {
        m
    } else {
        -m
    }
}

fn primitive(m: LatticeIndex) -> LatticeIndex {
    let c = m.content();
    positive(LatticeIndex::new([m.s1[0] / c, m.s1[1] / c], [m.s2[0] / c, m.s2[1] / c]))
}

impl PotentialSpec {
    pub fn zero(q_max: i64) -> Self {
        PotentialSpec {
            coeffs: BTreeMap::new(),
            q_max,
            generators: Vec::new(),
            directions: Vec::new(),
        }
    }

    pub fn build(
        generators: &[(LatticeIndex, Complex64)],
        q_max: i64,
        params: &QPParams,
    ) -> Result<Self> {
        if q_max < 1 {
            return Err(Error::Config(format!("Q = {q_max} must be positive")));
        }
        let mut supplied: BTreeMap<LatticeIndex, Complex64> = BTreeMap::new();
        for &(q, v) in generators {
            if q.is_zero() {
                return Err(Error::Config("generator 0 is not allowed (V_0 = 0)".into()));
            }
            let n = q.triple_norm();
            if n > q_max {
                return Err(Error::NormViolation(q.to_string(), n, q_max));
            }
            for (idx, val) in [(q, v), (-q, v.conj())] {
                if let Some(old) = supplied.insert(idx, val) {
                    if old != val {
                        return Err(Error::Config(format!(
                            "inconsistent coefficients for {idx}: {old} vs {val}"
                        )));
                    }
                }
            }
        }
        let keys: Vec<LatticeIndex> = supplied.keys().copied().collect();
        for (i, a) in keys.iter().enumerate() {
            for b in &keys[i + 1..] {
                if params.colinear(a, b) == Some(false) {
                    return Err(Error::ColinearityViolation(a.to_string(), b.to_string()));
                }
            }
        }
        let mut gens: Vec<LatticeIndex> = keys.iter().map(|&m| primitive(m)).collect();
        gens.sort();
        gens.dedup();
        let mut coeffs = BTreeMap::new();
        let mut directions = Vec::new();
        for g in gens {
            let nmax = q_max / g.triple_norm();
            let mut multiples = Vec::new();
            for n in (-nmax..=nmax).filter(|&n| n != 0) {
                let m = n * g;
                coeffs.insert(m, supplied.get(&m).copied().unwrap_or_default());
                multiples.push(n);
            }
            directions.push(Direction { generator: g, p_q: dual_vector(&g, params).len(), multiples });
        }
        Ok(PotentialSpec { coeffs, q_max, generators: generators.to_vec(), directions })
    }

    /// Rebuilds from the stored coefficients; a fixpoint of `build`.
    pub fn rebuild(&self, params: &QPParams) -> Result<Self> {
        let gens: Vec<(LatticeIndex, Complex64)> =
            self.coeffs.iter().filter(|(q, _)| **q > -**q).map(|(q, v)| (*q, *v)).collect();
        let mut out = Self::build(&gens, self.q_max, params)?;
        out.generators = self.generators.clone();
        Ok(out)
    }

    pub fn coefficient(&self, q: &LatticeIndex) -> Complex64 {
        self.coeffs.get(q).copied().unwrap_or_default()
    }

    pub fn in_sq(&self, q: &LatticeIndex) -> bool {
        self.coeffs.contains_key(q)
    }

    /// Indices with a nonzero coefficient.
    pub fn support(&self) -> Vec<LatticeIndex> {
        self.coeffs.iter().filter(|(_, v)| **v != Complex64::default()).map(|(q, _)| *q).collect()
    }

    /// Largest triple norm among nonzero coefficients (0 for V = 0).
    pub fn reach(&self) -> i64 {
        self.support().iter().map(|q| q.triple_norm()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.support().is_empty()
    }

    /// Σ|V_q|, which bounds both ‖V‖∞ and the operator norm of V.
    pub fn norm_bound(&self) -> f64 {
        self.coeffs.values().map(|v| v.norm()).sum()
    }

    pub fn evaluate_complex(&self, x: [f64; 2], params: &QPParams) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(q, v)| {
                let p = dual_vector(q, params).p;
                v * Complex64::from_polar(1.0, p[0] * x[0] + p[1] * x[1])
            })
            .sum()
    }

    pub fn evaluate(&self, x: [f64; 2], params: &QPParams) -> f64 {
        self.evaluate_complex(x, params).re
    }

    pub fn directional_sublattice(&self, q: &LatticeIndex) -> Result<&Direction> {
        if !self.in_sq(q) {
            return Err(Error::NotInSQ(q.to_string()));
        }
        let g = primitive(*q);
        Ok(self.directions.iter().find(|d| d.generator == g).expect("closed under multiples"))
    }

    /// The direction of S_Q geometrically parallel to p_m, if any.
    pub fn direction_of(&self, m: &LatticeIndex, params: &QPParams) -> Option<&Direction> {
        self.directions.iter().find(|d| params.colinear(&d.generator, m).is_some())
    }
}

/// The default test potential: α = √2 − 1, Q = 4 and two generator pairs.
pub fn default_potential(params: &QPParams) -> PotentialSpec {
    PotentialSpec::build(&default_generators(), 4, params).unwrap()
}

pub fn default_generators() -> Vec<(LatticeIndex, Complex64)> {
    vec![
        (LatticeIndex::new([0, 0], [1, 0]), Complex64::new(0.25, 0.0)),
        (LatticeIndex::new([0, 0], [0, 1]), Complex64::new(0.15, 0.1)),
    ]
}
