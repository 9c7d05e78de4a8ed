//! Explicit numeric thresholds standing in for the k-power parameters.
//!
//! `asymptotic` evaluates the literal formulas, `desk` holds laboratory-scale values.

use serde::{Deserialize, Serialize};

/// How the discs of the second resonant set are sized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiscRadius {
    /// Angular radius.
    Fixed(f64),
    /// Radius d / |∂E/∂φ| at each pole, so that surviving angles keep block
    /// eigenvalues at least about d away from k².
    EnergyGap(f64),
}

impl DiscRadius {
    pub fn radius(&self, slope: f64) -> f64 {
        match *self {
            DiscRadius::Fixed(r) => r,
            DiscRadius::EnergyGap(d) => d / slope.abs().max(1e-300),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleProfile {
    pub gamma: f64,
    pub delta0: f64,
    /// Points of M⁽²⁾ with p_m at most this form the simple region.
    pub simple_threshold: f64,
    pub simple_radius: i64,
    /// Side (triple-norm radius) of the coarse boxes used for coloring.
    pub black_box: i64,
    pub black_count: usize,
    pub grey_box: i64,
    pub grey_count: usize,
    pub white_radius: i64,
    pub black_sep: i64,
    pub grey_sep: i64,
    pub white_sep: i64,
    pub black_max_boxes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterProfile {
    pub k: f64,
    pub delta: f64,
    pub tau: f64,
    pub mu: f64,
    /// T₁: Step-I resonance threshold.
    pub t1: f64,
    /// Multiplier on T₁ for the base-angle precondition of the Step-II construction.
    pub base_factor: f64,
    /// Radius of Ω(δ).
    pub r0: i64,
    /// Radius of Ω̃(δ).
    pub r0_tilde: i64,
    /// Radius of Ω(r₁).
    pub r1: i64,
    /// T*: Step-II resonance threshold.
    pub t_star: f64,
    /// Numeric value of k^δ used for the separation and chain rules.
    pub c_delta: f64,
    /// A class is trivial when |k² − (t⊥)²| exceeds this.
    pub trivial_cut: f64,
    /// Pole window W; a subset is strong if a pole lies within 2W of φ₀.
    pub window: f64,
    pub scan_points: usize,
    pub bisect_tol: f64,
    pub o2_radius: DiscRadius,
    /// Distance at which weak non-trivial subsets are attached to a strong cluster.
    pub branch_radius: i64,
    /// Merge V-adjacent blocks instead of failing.
    pub merge_adjacent: bool,
    pub contour_nodes: usize,
    pub contour_max_nodes: usize,
    pub r_max: usize,
    pub k_min: f64,
    pub multiscale: MultiscaleProfile,
}

impl ParameterProfile {
    /// δ* = 10⁴μδ.
    pub fn delta_star(&self) -> f64 {
        1e4 * self.mu * self.delta
    }

    /// r₁′ = 40μr₁ + 2 with r₁ read as an exponent of k.
    pub fn r1_prime(&self) -> f64 {
        let r1_exp = (self.r1 as f64).ln() / self.k.ln();
        40.0 * self.mu * r1_exp + 2.0
    }

    /// β = δ*/100.
    pub fn beta(&self) -> f64 {
        self.delta_star() / 100.0
    }

    /// Literal asymptotic formulas at the given k.
    pub fn asymptotic(k: f64, delta: f64, tau: f64, mu: f64, r1: f64) -> Self {
        let ds = 1e4 * mu * delta;
        let kd = k.powf(delta);
        let gamma = 0.2;
        let delta0 = gamma / 100.0;
        let kr1 = k.powf(r1);
        ParameterProfile {
            k,
            delta,
            tau,
            mu,
            t1: tau * k.powf(1.0 - 40.0 * mu * delta),
            base_factor: 8.0,
            r0: kd.floor() as i64,
            r0_tilde: (4.0 * kd).floor() as i64,
            r1: kr1.floor() as i64,
            t_star: k.powf(ds),
            c_delta: kd,
            trivial_cut: k.powf(ds) / 8.0,
            window: k.powf(-2.0 - 40.0 * mu * delta),
            scan_points: 400,
            bisect_tol: 1e-12,
            o2_radius: DiscRadius::Fixed(k.powf(-(40.0 * mu * r1 + 2.0))),
            branch_radius: (kd / 5.0).floor() as i64,
            merge_adjacent: false,
            contour_nodes: 64,
            contour_max_nodes: 1024,
            r_max: 30,
            k_min: 1.0,
            multiscale: MultiscaleProfile {
                gamma,
                delta0,
                simple_threshold: k.powf(-5.0 * (40.0 * mu * r1 + 2.0)),
                simple_radius: (kr1 / 2.0).floor() as i64,
                black_box: k.powf(gamma * r1).floor() as i64,
                black_count: k.powf(gamma * r1 / 2.0 + delta0 * r1).floor() as usize,
                grey_box: k.powf(gamma * r1 / 2.0 + delta0 * r1).floor() as i64,
                grey_count: k.powf(gamma * r1 / 6.0 + delta0 * r1).floor() as usize,
                white_radius: k.powf(gamma * r1 / 6.0).floor() as i64,
                black_sep: k.powf(gamma * r1 + delta0 * r1).floor() as i64,
                grey_sep: k.powf(gamma * r1 / 2.0 + 2.0 * delta0 * r1).floor() as i64,
                white_sep: k.powf(gamma * r1 / 6.0).floor() as i64,
                black_max_boxes: 1,
            },
        }
    }

    /// Laboratory-scale profile used throughout the tests and the CLI defaults.
    pub fn desk(k: f64) -> Self {
        let (delta, tau, mu) = (0.01, 1.0, 2.0);
        let t1 = tau * k.powf(1.0 - 40.0 * mu * delta);
        ParameterProfile {
            k,
            delta,
            tau,
            mu,
            t1,
            base_factor: 1.0,
            r0: 1,
            r0_tilde: 2,
            r1: 4,
            t_star: t1,
            c_delta: k.powf(delta),
            trivial_cut: 4.0 * t1,
            window: 0.1 / k,
            scan_points: 400,
            bisect_tol: 1e-12,
            o2_radius: DiscRadius::EnergyGap(0.25),
            branch_radius: 1,
            merge_adjacent: true,
            contour_nodes: 32,
            contour_max_nodes: 1024,
            r_max: 30,
            k_min: 10.0,
            multiscale: MultiscaleProfile {
                gamma: 0.2,
                delta0: 0.002,
                simple_threshold: 1.0,
                simple_radius: 2,
                black_box: 4,
                black_count: 6,
                grey_box: 2,
                grey_count: 3,
                white_radius: 1,
                black_sep: 4,
                grey_sep: 3,
                white_sep: 2,
                black_max_boxes: 4,
            },
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        let mut p = self.clone();
        let scale = (k / self.k).powf(1.0 - 40.0 * self.mu * self.delta);
        p.t1 *= scale;
        p.t_star *= scale;
        p.trivial_cut *= scale;
        p.window *= self.k / k;
        p.c_delta = k.powf(self.delta);
        p.k = k;
        p
    }
}
