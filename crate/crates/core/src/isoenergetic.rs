//! Isoenergetic radii κ⁽ⁿ⁾(λ, φ) and the curves D_n(λ) with holes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::Inputs;
use crate::lattice::{enumerate_box, LatticeIndex, QPParams};
use crate::multiscale::second_resonant_set;
use crate::perturb::{g2_closed_form, generic_step_eigen_only, level1_state, state_from_projector};
use crate::potential::PotentialSpec;
use crate::profile::ParameterProfile;
use crate::resonance::{build_omega1, projector_at, AngleSet, BlockProjector};

const NEWTON_ITERS: usize = 25;
const BRACKET_POINTS: usize = 5;

/// Root of f(κ) = λ near `start`, unique within `start ± half`.
fn newton_radius(f: &dyn Fn(f64) -> Result<f64>, lambda: f64, start: f64, half: f64) -> Result<f64> {
    let (a, b) = (start - half, start + half);
    let mut vals = Vec::with_capacity(BRACKET_POINTS);
    for i in 0..BRACKET_POINTS {
        let x = a + (b - a) * i as f64 / (BRACKET_POINTS - 1) as f64;
        vals.push((x, f(x)? - lambda));
    }
    let changes: Vec<usize> = (1..vals.len())
        .filter(|&i| (vals[i - 1].1 < 0.0) != (vals[i].1 < 0.0) || vals[i].1 == 0.0)
        .collect();
    if changes.is_empty() {
        return Err(Error::NoRoot(a, b));
    }
    if changes.len() > 1 {
        return Err(Error::NotUnique { count: changes.len() });
    }
    let (mut lo, mut hi) = (vals[changes[0] - 1].0, vals[changes[0]].0);
    let tol = 1e-13 * lambda;
    let mut kap = start;
    for _ in 0..NEWTON_ITERS {
        let r = f(kap)? - lambda;
        if r.abs() <= tol {
            return Ok(kap);
        }
        let next = kap - r / (2.0 * kap);
        if !(next > a && next < b) {
            break;
        }
        kap = next;
    }
    let mut flo = f(lo)? - lambda;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)? - lambda;
        if fm.abs() <= tol || hi - lo < 1e-15 * mid {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn level1_lambda(kappa: f64, phi: f64, spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> Result<f64> {
    let st = level1_state([kappa * phi.cos(), kappa * phi.sin()], spec, profile, params)?;
    Ok(generic_step_eigen_only(&st, profile)?.0)
}

/// κ⁽¹⁾(λ, φ).
pub fn solve_radius_level1(lambda: f64, phi: f64, spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> Result<f64> {
    let k = lambda.sqrt();
    let prof = profile.with_k(k);
    let st = level1_state([k * phi.cos(), k * phi.sin()], spec, &prof, params)?;
    let half = st.contour.radius / (4.0 * k);
    newton_radius(&|x| level1_lambda(x, phi, spec, &prof, params), lambda, k, half)
}

/// Compatibility entry used by the resonance lemmas: level 1 only needs the potential.
pub fn solve_radius(level: usize, lambda: f64, phi: f64, spec: &PotentialSpec, profile: &ParameterProfile, params: &QPParams) -> Result<f64> {
    match level {
        1 => solve_radius_level1(lambda, phi, spec, profile, params),
        _ => Err(Error::Config("level 2 needs the full inputs; use solve_radius_at".into())),
    }
}

/// κ⁽²⁾(λ, φ) with the block projector built at φ₀ = φ, k = √λ.
pub fn solve_radius_level2(
    lambda: f64,
    phi: f64,
    kappa1: f64,
    proj: &BlockProjector,
    inputs: &Inputs,
    profile: &ParameterProfile,
) -> Result<f64> {
    let k = lambda.sqrt();
    let prof = profile.with_k(k);
    let f = |x: f64| -> Result<f64> {
        let st = state_from_projector([x * phi.cos(), x * phi.sin()], proj, inputs, &prof)?;
        Ok(generic_step_eigen_only(&st, &prof)?.0)
    };
    let st = state_from_projector([kappa1 * phi.cos(), kappa1 * phi.sin()], proj, inputs, &prof)?;
    let half = st.contour.radius / (4.0 * k);
    newton_radius(&f, lambda, kappa1, half)
}

/// κ⁽ⁿ⁾(λ, φ) for n = 1, 2.
pub fn solve_radius_at(level: usize, lambda: f64, phi: f64, inputs: &Inputs, profile: &ParameterProfile) -> Result<f64> {
    let k1 = solve_radius_level1(lambda, phi, &inputs.spec, profile, &inputs.params)?;
    match level {
        1 => Ok(k1),
        2 => {
            let k = lambda.sqrt();
            let prof = profile.with_k(k);
            let (_, proj) = projector_at(phi, k, &inputs.spec, &prof, &inputs.params, &inputs.table)?;
            solve_radius_level2(lambda, phi, k1, &proj, inputs, profile)
        }
        _ => Err(Error::Config(format!("level {level} curves are not available"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub phi: f64,
    pub kappa: f64,
    pub h: f64,
    pub dkappa_dphi: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoCurve {
    pub level: usize,
    pub lambda: f64,
    pub samples: Vec<CurveSample>,
    pub holes: Vec<(f64, f64)>,
    /// |λ⁽ⁿ⁾(κν) − λ| over admissible samples.
    pub max_residual: f64,
}

impl IsoCurve {
    pub fn admissible(&self) -> impl Iterator<Item = &CurveSample> {
        self.samples.iter().filter(|s| s.admissible)
    }

    pub fn sup_h(&self) -> f64 {
        self.admissible().map(|s| s.h.abs()).fold(0.0, f64::max)
    }

    pub fn hole_measure(&self) -> f64 {
        self.holes.iter().map(|(a, b)| b - a).sum()
    }
}

/// Maximal runs of non-admissible grid points, as [first, last] φ intervals.
fn holes_of(samples: &[CurveSample]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut last = 0.0;
    for s in samples {
        if !s.admissible {
            start.get_or_insert(s.phi);
            last = s.phi;
        } else if let Some(a) = start.take() {
            out.push((a, last));
        }
    }
    if let Some(a) = start {
        out.push((a, last));
    }
    out
}

fn fill_derivatives(samples: &mut [CurveSample]) {
    let n = samples.len();
    for i in 0..n {
        let ok = |j: usize| samples[j].admissible;
        let d = if i > 0 && i + 1 < n && ok(i - 1) && ok(i + 1) && ok(i) {
            (samples[i + 1].kappa - samples[i - 1].kappa) / (samples[i + 1].phi - samples[i - 1].phi)
        } else if i + 1 < n && ok(i) && ok(i + 1) {
            (samples[i + 1].kappa - samples[i].kappa) / (samples[i + 1].phi - samples[i].phi)
        } else if i > 0 && ok(i) && ok(i - 1) {
            (samples[i].kappa - samples[i - 1].kappa) / (samples[i].phi - samples[i - 1].phi)
        } else {
            0.0
        };
        samples[i].dkappa_dphi = d;
    }
}

/// The admissible angle set of level n at energy λ on the given grid.
pub fn admissible_set(level: usize, lambda: f64, phi_grid: &[f64], inputs: &Inputs, profile: &ParameterProfile) -> AngleSet {
    let k = lambda.sqrt();
    let prof = profile.with_k(k);
    let om1 = build_omega1(k, &prof, &inputs.params);
    if level == 1 {
        return om1;
    }
    second_resonant_set(k, phi_grid, inputs, &prof).1
}

/// (κ⁽ⁿ⁾, κ⁽ⁿ⁾ − κ⁽ⁿ⁻¹⁾, solve residual) at φ, with κ⁽⁰⁾ = √λ.
fn solve_point(level: usize, lambda: f64, phi: f64, inputs: &Inputs, prof: &ParameterProfile) -> Result<(f64, f64, f64)> {
    let k = lambda.sqrt();
    let k1 = solve_radius_level1(lambda, phi, &inputs.spec, prof, &inputs.params)?;
    if level == 1 {
        let r = level1_lambda(k1, phi, &inputs.spec, prof, &inputs.params)? - lambda;
        return Ok((k1, k1 - k, r));
    }
    let (_, proj) = projector_at(phi, k, &inputs.spec, prof, &inputs.params, &inputs.table)?;
    let k2 = solve_radius_level2(lambda, phi, k1, &proj, inputs, prof)?;
    let st = state_from_projector([k2 * phi.cos(), k2 * phi.sin()], &proj, inputs, prof)?;
    let r = generic_step_eigen_only(&st, prof)?.0 - lambda;
    Ok((k2, k2 - k1, r))
}

/// Samples κ⁽ⁿ⁾ over the grid; grid points outside ω⁽ⁿ⁾ or where the solve fails are holes.
pub fn trace_curve(level: usize, lambda: f64, phi_grid: &[f64], inputs: &Inputs, profile: &ParameterProfile) -> IsoCurve {
    let omega = admissible_set(level, lambda, phi_grid, inputs, profile);
    trace_curve_on(level, lambda, phi_grid, &omega, inputs, profile)
}

/// As `trace_curve`, against an admissible set computed beforehand.
pub fn trace_curve_on(
    level: usize,
    lambda: f64,
    phi_grid: &[f64],
    omega: &AngleSet,
    inputs: &Inputs,
    profile: &ParameterProfile,
) -> IsoCurve {
    let prof = profile.with_k(lambda.sqrt());
    let mut samples = Vec::with_capacity(phi_grid.len());
    let mut max_residual: f64 = 0.0;
    for &phi in phi_grid {
        let mut s = CurveSample { phi, kappa: f64::NAN, h: f64::NAN, dkappa_dphi: 0.0, admissible: false };
        if omega.contains(phi) {
            if let Ok((kap, h, r)) = solve_point(level, lambda, phi, inputs, &prof) {
                s.kappa = kap;
                s.h = h;
                s.admissible = true;
                max_residual = max_residual.max(r.abs());
            }
        }
        samples.push(s);
    }
    fill_derivatives(&mut samples);
    let holes = holes_of(&samples);
    IsoCurve { level, lambda, samples, holes, max_residual }
}

/// Interval ends of `omega`, moved inside by `inset`.
pub fn edge_angles(omega: &AngleSet, inset: f64) -> Vec<f64> {
    omega
        .intervals
        .iter()
        .filter(|(a, b)| b - a > 2.0 * inset)
        .flat_map(|&(a, b)| [a + inset, b - inset])
        .collect()
}

/// |κ⁽ⁿ⁾ − κ⁽ⁿ⁻¹⁾| to first order: one level-n evaluation on the level n−1 curve.
fn correction_estimate(level: usize, lambda: f64, phi: f64, inputs: &Inputs, prof: &ParameterProfile) -> Result<f64> {
    let k = lambda.sqrt();
    if level == 1 {
        return Ok((level1_lambda(k, phi, &inputs.spec, prof, &inputs.params)? - lambda).abs() / (2.0 * k));
    }
    let k1 = solve_radius_level1(lambda, phi, &inputs.spec, prof, &inputs.params)?;
    let (_, proj) = projector_at(phi, k, &inputs.spec, prof, &inputs.params, &inputs.table)?;
    let st = state_from_projector([k1 * phi.cos(), k1 * phi.sin()], &proj, inputs, prof)?;
    Ok((generic_step_eigen_only(&st, prof)?.0 - lambda).abs() / (2.0 * k1))
}

#[derive(Clone, Debug, Serialize)]
pub struct SupEstimate {
    pub value: f64,
    pub phi: f64,
    pub edges: usize,
    pub solved: usize,
    pub max_residual: f64,
}

pub const EDGE_INSET: f64 = 1e-9;

/// sup |κ⁽ⁿ⁾ − κ⁽ⁿ⁻¹⁾| over the admissible grid samples of `curve` and the `top` ends of ω⁽ⁿ⁾
/// with the largest first-order estimate; every reported value comes from a full solve.
pub fn sup_correction(curve: &IsoCurve, omega: &AngleSet, top: usize, inputs: &Inputs, profile: &ParameterProfile) -> SupEstimate {
    let prof = profile.with_k(curve.lambda.sqrt());
    let mut best = (0.0, f64::NAN);
    for s in curve.admissible() {
        if s.h.abs() > best.0 {
            best = (s.h.abs(), s.phi);
        }
    }
    let edges = edge_angles(omega, EDGE_INSET);
    let mut ranked: Vec<(f64, f64)> = edges
        .iter()
        .filter_map(|&phi| correction_estimate(curve.level, curve.lambda, phi, inputs, &prof).ok().map(|e| (e, phi)))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut solved = 0;
    let mut max_residual = curve.max_residual;
    for &(_, phi) in ranked.iter().take(top) {
        if let Ok((_, h, r)) = solve_point(curve.level, curve.lambda, phi, inputs, &prof) {
            solved += 1;
            max_residual = max_residual.max(r.abs());
            if h.abs() > best.0 {
                best = (h.abs(), phi);
            }
        }
    }
    SupEstimate { value: best.0, phi: best.1, edges: edges.len(), solved, max_residual }
}

/// sup |κ⁽²⁾ − κ⁽¹⁾| over φ admissible in both curves, with its argmax.
pub fn curve_delta(c1: &IsoCurve, c2: &IsoCurve) -> (f64, f64) {
    let mut best = (0.0, f64::NAN);
    for (a, b) in c1.samples.iter().zip(&c2.samples) {
        if a.admissible && b.admissible && a.phi == b.phi {
            let d = (b.kappa - a.kappa).abs();
            if d > best.0 {
                best = (d, a.phi);
            }
        }
    }
    best
}

/// Uniform grid of n angles on [0, 2π).
pub fn phi_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * std::f64::consts::PI * i as f64 / n as f64).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NeighborhoodCount {
    pub k: f64,
    pub r: f64,
    pub kappa0: [f64; 2],
    pub eps0: f64,
    /// ε₀ widened to what the level-1 solve resolves.
    pub eps: f64,
    pub count: usize,
    pub bound: f64,
    /// Largest |λ⁽¹⁾ − |κ|² − g₂| seen among evaluated candidates.
    pub filter_remainder: f64,
}

const ANNULUS: f64 = 0.05;
const FILTER_SLACK: f64 = 1e-3;

/// Points κ₀ + p_n with |||n||| ≤ radius whose distance to D₁(k²) is below eps.
pub fn count_near_d1(k: f64, radius: i64, kappa0: [f64; 2], eps: f64, inputs: &Inputs, profile: &ParameterProfile) -> Result<(usize, f64)> {
    let prof = profile.with_k(k);
    let params = &inputs.params;
    let om1 = build_omega1(k, &prof, params);
    let a = params.alpha();
    let two_pi = std::f64::consts::TAU;
    let (rlo, rhi) = ((k - ANNULUS).max(0.0), k + ANNULUS);
    let mut count = 0;
    let mut remainder: f64 = 0.0;
    for u in -radius..=radius {
        for v in -radius..=radius {
            let rest = radius - u.abs().max(v.abs());
            for s10 in -rest..=rest {
                let x = kappa0[0] + two_pi * (s10 as f64 + a * u as f64);
                if x.abs() > rhi {
                    continue;
                }
                let ymax = (rhi * rhi - x * x).sqrt();
                let ymin = (rlo * rlo - x * x).max(0.0).sqrt();
                let ranges = if ymin == 0.0 { vec![(-ymax, ymax)] } else { vec![(ymin, ymax), (-ymax, -ymin)] };
                for (y0, y1) in ranges {
                    let lo = ((y0 - kappa0[1]) / two_pi - a * v as f64).ceil() as i64;
                    let hi = ((y1 - kappa0[1]) / two_pi - a * v as f64).floor() as i64;
                    for s11 in lo.max(-rest)..=hi.min(rest) {
                        let n = LatticeIndex::new([s10, s11], [u, v]);
                        let p = params.dual_unscaled(&n);
                        let kap = [kappa0[0] + two_pi * p[0], kappa0[1] + two_pi * p[1]];
                        let len = kap[0].hypot(kap[1]);
                        if len < rlo || len > rhi || !om1.contains(kap[1].atan2(kap[0])) {
                            continue;
                        }
                        let tol = 2.2 * len * eps;
                        let approx = len * len + g2_closed_form(kap, &inputs.spec, &prof, params);
                        if (approx - k * k).abs() > tol + FILTER_SLACK {
                            continue;
                        }
                        let st = level1_state(kap, &inputs.spec, &prof, params)?;
                        let lam = generic_step_eigen_only(&st, &prof)?.0;
                        remainder = remainder.max((lam - approx).abs());
                        if (lam - k * k).abs() <= tol {
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((count, remainder))
}

/// N(k, r, κ₀, ε₀) for |||n||| < k^r and ε₀ = k^{−5μr}, with the bound 1000·k^{2r/3+1}.
pub fn d1_neighborhood_count(k: f64, r: f64, kappa0: [f64; 2], inputs: &Inputs, profile: &ParameterProfile) -> Result<NeighborhoodCount> {
    let radius = k.powf(r).ceil() as i64 - 1;
    let eps0 = k.powf(-5.0 * inputs.params.mu * r);
    let eps = eps0.max(1e-11 * k);
    let (count, filter_remainder) = count_near_d1(k, radius, kappa0, eps, inputs, profile)?;
    Ok(NeighborhoodCount { k, r, kappa0, eps0, eps, count, bound: 1000.0 * k.powf(2.0 * r / 3.0 + 1.0), filter_remainder })
}

/// Brute-force companion of `count_near_d1` over the whole box, no g₂ prefilter.
pub fn count_near_d1_brute(k: f64, radius: i64, kappa0: [f64; 2], eps: f64, inputs: &Inputs, profile: &ParameterProfile) -> Result<usize> {
    let prof = profile.with_k(k);
    let om1 = build_omega1(k, &prof, &inputs.params);
    let mut count = 0;
    for n in enumerate_box(radius) {
        let p = crate::lattice::dual_vector(&n, &inputs.params).p;
        let kap = [kappa0[0] + p[0], kappa0[1] + p[1]];
        let len = kap[0].hypot(kap[1]);
        if (len - k).abs() > ANNULUS || !om1.contains(kap[1].atan2(kap[0])) {
            continue;
        }
        let st = level1_state(kap, &inputs.spec, &prof, &inputs.params)?;
        if (generic_step_eigen_only(&st, &prof)?.0 - k * k).abs() <= 2.2 * len * eps {
            count += 1;
        }
    }
    Ok(count)
}

pub fn export_curve(curve: &IsoCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["phi", "kappa", "h", "dkappa_dphi", "admissible"]).map_err(|e| Error::Io(e.to_string()))?;
    for s in &curve.samples {
        w.write_record([
            format!("{:.16e}", s.phi),
            format!("{:.16e}", s.kappa),
            format!("{:.16e}", s.h),
            format!("{:.16e}", s.dkappa_dphi),
            s.admissible.to_string(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    let side = path.with_extension("holes.json");
    let mut f = File::create(side)?;
    let body = serde_json::json!({ "level": curve.level, "lambda": curve.lambda, "holes": curve.holes });
    writeln!(f, "{}", body)?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::Io(e.to_string()));
        out.push(CurveSample {
            phi: num(0)?,
            kappa: num(1)?,
            h: num(2)?,
            dkappa_dphi: num(3)?,
            admissible: &rec[4] == "true",
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn setup(k: f64) -> (ParameterProfile, Inputs) {
        let prof = ParameterProfile::desk(k);
        (prof.clone(), Inputs::default_for(&prof))
    }

    #[test]
    fn free_curve_is_a_circle() {
        let (prof, inputs) = setup(15.0);
        let inputs = inputs.with_spec(PotentialSpec::zero(4));
        let c = trace_curve(1, 225.0, &phi_grid(90), &inputs, &prof);
        for s in c.admissible() {
            assert_eq!(s.kappa, 15.0);
        }
        assert!(c.admissible().count() > 0);
    }

    #[test]
    fn level1_residual_and_dk_dlambda() {
        let (prof, inputs) = setup(25.0);
        let c = trace_curve(1, 625.0, &phi_grid(60), &inputs, &prof);
        assert!(c.max_residual <= 1e-9 * 625.0);
        let s = c.admissible().nth(3).unwrap();
        let d = 1e-4;
        let kp = solve_radius_level1(625.0 + d, s.phi, &inputs.spec, &prof, &inputs.params).unwrap();
        let km = solve_radius_level1(625.0 - d, s.phi, &inputs.spec, &prof, &inputs.params).unwrap();
        let dk = (kp - km) / (2.0 * d);
        assert!((dk * 2.0 * 25.0 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn holes_match_omega1() {
        let (prof, inputs) = setup(15.0);
        let grid = phi_grid(720);
        let c = trace_curve(1, 225.0, &grid, &inputs, &prof);
        let om = build_omega1(15.0, &prof, &inputs.params);
        let bad = grid.iter().filter(|p| !om.contains(**p)).count();
        let holes = c.samples.iter().filter(|s| !s.admissible).count();
        assert_eq!(bad, holes);
        let step = grid[1] - grid[0];
        assert!((bad as f64 * step - om.complement().measure()).abs() < 2.0 * step * c.holes.len() as f64 + step);
    }

    #[test]
    fn export_round_trip() {
        let (prof, inputs) = setup(15.0);
        let c = trace_curve(1, 225.0, &phi_grid(40), &inputs, &prof);
        let dir = std::env::temp_dir().join(format!("qp_curve_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.csv");
        export_curve(&c, &path).unwrap();
        let back = read_curve(&path).unwrap();
        assert_eq!(back.len(), 40);
        for (a, b) in back.iter().zip(&c.samples) {
            assert!(a.phi.to_bits() == b.phi.to_bits());
            assert!(a.kappa.to_bits() == b.kappa.to_bits() || (a.kappa.is_nan() && b.kappa.is_nan()));
        }
        let empty = IsoCurve { level: 1, lambda: 1.0, samples: vec![], holes: vec![], max_residual: 0.0 };
        export_curve(&empty, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn d1_count_matches_brute_force() {
        let (prof, inputs) = setup(15.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let k0 = [rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0)];
            for eps in [1e-3, 2e-2] {
                let (fast, rem) = count_near_d1(15.0, 4, k0, eps, &inputs, &prof).unwrap();
                let brute = count_near_d1_brute(15.0, 4, k0, eps, &inputs, &prof).unwrap();
                assert_eq!(fast, brute);
                assert!(rem < FILTER_SLACK);
            }
        }
        let n = d1_neighborhood_count(15.0, 0.6, [0.3, 0.1], &inputs, &prof).unwrap();
        assert!(n.eps >= n.eps0 && (n.count as f64) < n.bound);
    }
}
