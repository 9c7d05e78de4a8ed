//! Run configuration and the `qp` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::inputs::Inputs;
use crate::isoenergetic::{export_curve, phi_grid, solve_radius_level1, trace_curve};
use crate::lattice::{LatticeIndex, QPParams};
use crate::multiscale::{boundary_check, build_m2set, region_map, region_stats, remerge, separation_report};
use crate::perturb::{eigenvalue_level, Point};
use crate::potential::{default_generators, PotentialSpec};
use crate::profile::ParameterProfile;
use crate::verify::{run_criterion, Suite, Tolerances, CRITERIA};
use crate::wavefunction::{export_samples, sample, synthesize, unit_grid, WaveFunction};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENT: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSpec {
    /// (a + b√d)/c
    Quadratic([i64; 4]),
    Cf(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub index: [i64; 4],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Reference energy scale; thresholds are rescaled to each k of a run.
    pub k: f64,
    pub delta: f64,
    pub tau: f64,
    /// Radius of the Step-II box Ω(r₁).
    pub r1: i64,
    /// Radius of the box used for M⁽²⁾ and the region map.
    pub r2: i64,
    pub gamma: f64,
    pub delta0: f64,
    pub contour_nodes: usize,
    pub r_max: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        let d = ParameterProfile::desk(15.0);
        ProfileConfig {
            k: d.k,
            delta: d.delta,
            tau: d.tau,
            r1: d.r1,
            r2: 8,
            gamma: d.multiscale.gamma,
            delta0: d.multiscale.delta0,
            contour_nodes: d.contour_nodes,
            r_max: d.r_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: AlphaSpec,
    pub mu: f64,
    #[serde(rename = "Q")]
    pub q: i64,
    pub generators: Vec<GeneratorSpec>,
    pub profile: ProfileConfig,
    pub k_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub phi_grid: usize,
    pub scan_points: usize,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Suite::desk();
        RunConfig {
            alpha: AlphaSpec::Quadratic([-1, 1, 2, 1]),
            mu: 2.0,
            q: 4,
            generators: default_generators()
                .into_iter()
                .map(|(m, v)| GeneratorSpec { index: [m.s1[0], m.s1[1], m.s2[0], m.s2[1]], re: v.re, im: v.im })
                .collect(),
            profile: ProfileConfig::default(),
            k_grid: s.k_grid,
            lambda_grid: s.lambda_grid,
            phi_grid: s.phi_points,
            scan_points: s.scan_points,
            tolerances: s.tol,
            output_dir: PathBuf::from("."),
            seed: s.seed,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

fn ascending(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    for (i, x) in xs.iter().enumerate() {
        positive(&format!("{name}[{i}]"), *x)?;
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{name} must be strictly ascending")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mu", self.mu)?;
        let p = &self.profile;
        for (n, x) in [("profile.k", p.k), ("profile.delta", p.delta), ("profile.tau", p.tau), ("profile.gamma", p.gamma), ("profile.delta0", p.delta0)] {
            positive(n, x)?;
        }
        for (n, x) in [("profile.r1", p.r1), ("profile.r2", p.r2), ("Q", self.q)] {
            if x < 1 {
                return Err(Error::Config(format!("{n} must be at least 1, got {x}")));
            }
        }
        if p.contour_nodes < 4 || p.r_max < 4 {
            return Err(Error::Config("profile.contour_nodes and profile.r_max must be at least 4".into()));
        }
        ascending("k_grid", &self.k_grid)?;
        ascending("lambda_grid", &self.lambda_grid)?;
        if self.phi_grid < 2 || self.scan_points < 2 {
            return Err(Error::Config("phi_grid and scan_points must be at least 2".into()));
        }
        let t = serde_json::to_value(&self.tolerances).map_err(|e| Error::Config(e.to_string()))?;
        for (name, v) in t.as_object().into_iter().flatten() {
            positive(&format!("tolerances.{name}"), v.as_f64().unwrap_or(f64::NAN))?;
        }
        Ok(())
    }

    pub fn params(&self) -> Result<QPParams> {
        match &self.alpha {
            AlphaSpec::Quadratic([a, b, d, c]) => QPParams::quadratic(*a, *b, *d, *c, self.mu),
            AlphaSpec::Cf(terms) => QPParams::continued_fraction(terms, self.mu),
        }
    }

    pub fn potential(&self, params: &QPParams) -> Result<PotentialSpec> {
        if self.generators.is_empty() {
            return Ok(PotentialSpec::zero(self.q));
        }
        let gens: Vec<(LatticeIndex, Complex64)> = self
            .generators
            .iter()
            .map(|g| (LatticeIndex::from_array(g.index), Complex64::new(g.re, g.im)))
            .collect();
        PotentialSpec::build(&gens, self.q, params)
    }

    /// The desk profile at `profile.k` with the configured exponents and radii.
    pub fn parameter_profile(&self) -> ParameterProfile {
        let c = &self.profile;
        let mut p = ParameterProfile::desk(c.k);
        p.delta = c.delta;
        p.tau = c.tau;
        p.mu = self.mu;
        p.t1 = c.tau * c.k.powf(1.0 - 40.0 * self.mu * c.delta);
        p.t_star = p.t1;
        p.trivial_cut = 4.0 * p.t1;
        p.c_delta = c.k.powf(c.delta);
        p.r1 = c.r1;
        p.contour_nodes = c.contour_nodes;
        p.r_max = c.r_max;
        p.multiscale.gamma = c.gamma;
        p.multiscale.delta0 = c.delta0;
        p
    }

    pub fn suite(&self) -> Result<Suite> {
        let params = self.params()?;
        let spec = self.potential(&params)?;
        let profile = self.parameter_profile();
        Ok(Suite {
            inputs: Inputs::new(params, spec, &profile),
            profile,
            k_grid: self.k_grid.clone(),
            lambda_grid: self.lambda_grid.clone(),
            phi_points: self.phi_grid,
            scan_points: self.scan_points,
            seed: self.seed,
            tol: self.tolerances.clone(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "qp", about = "Perturbative spectral toolkit for 2D quasi-periodic Schrodinger operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (relative paths land in the configured output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the acceptance checks and print one JSON record per check.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
        /// Include wall-clock runtimes in the records.
        #[arg(long)]
        timings: bool,
        /// Compare two CSV outputs instead of running checks.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        diff: Option<Vec<PathBuf>>,
        /// Absolute tolerance of the diff, relative for entries above 1.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
    /// Trace an isoenergetic curve to CSV (plus a holes sidecar).
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long)]
        lambda: f64,
        /// Number of angles (default: the configured phi grid).
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Build the region map around M⁽²⁾ at (k, φ₀) and write it as JSON.
    Regions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        phi: f64,
    },
    /// Level eigenvalue with its series data and the exact-diagonalization value.
    Eigen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        phi: f64,
        /// |κ| (default: k at level 1, κ⁽¹⁾(φ) at level 2).
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Sample the level eigenfunction on a grid over [0,1)² to CSV.
    Wavefunction {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        kappa: Option<f64>,
        /// Points per side.
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidAlpha(_) | Error::ColinearityViolation(..) | Error::NormViolation(..) => EXIT_CONFIG,
        Error::NonConvergent { .. } | Error::NotUnique { .. } | Error::NoRoot(..) | Error::ContourHit { .. } => {
            EXIT_NONCONVERGENT
        }
        _ => EXIT_FAIL,
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn out_path(cfg: &RunConfig, common: &Common, default: &str) -> Result<PathBuf> {
    let p = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    let p = if p.is_absolute() { p } else { cfg.output_dir.join(p) };
    if let Some(dir) = p.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(p)
}

fn kappa_at(level: usize, k: f64, phi: f64, kappa: Option<f64>, suite: &Suite) -> Result<f64> {
    match (kappa, level) {
        (Some(x), _) => Ok(x),
        (None, 1) => Ok(k),
        (None, _) => solve_radius_level1(k * k, phi, &suite.inputs.spec, &suite.profile.with_k(k), &suite.inputs.params),
    }
}

/// Runs one command, writing JSON lines to `stdout`; returns the exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> i32 {
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qp: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Verify { common, criteria, timings, diff, tol } => {
            if let Some(files) = diff {
                return diff_csv(&files[0], &files[1], tol, stdout);
            }
            let cfg = load(&common)?;
            let suite = cfg.suite()?;
            let out = match &common.out {
                Some(_) => Some(out_path(&cfg, &common, "report.jsonl")?),
                None => None,
            };
            verify(&suite, &criteria, timings, out, stdout)
        }
        Command::Curve { common, level, lambda, grid } => {
            let cfg = load(&common)?;
            positive("lambda", lambda)?;
            let suite = cfg.suite()?;
            let curve = trace_curve(level, lambda, &phi_grid(grid.unwrap_or(cfg.phi_grid)), &suite.inputs, &suite.profile);
            let path = out_path(&cfg, &common, "curve.csv")?;
            export_curve(&curve, &path)?;
            let n = curve.admissible().count();
            writeln!(stdout, "{}", json!({"output": path, "samples": curve.samples.len(), "admissible": n, "max_residual": curve.max_residual}))?;
            Ok(EXIT_PASS)
        }
        Command::Regions { common, k, phi } => {
            let cfg = load(&common)?;
            positive("k", k)?;
            let suite = cfg.suite()?;
            let prof = suite.profile.with_k(k);
            let (spec, params) = (&suite.inputs.spec, &suite.inputs.params);
            let r2 = cfg.profile.r2;
            let m2 = build_m2set(phi, k, r2, &suite.inputs, &prof)?;
            let others: Vec<LatticeIndex> = m2.resonant.iter().filter(|m| m2.points.binary_search(m).is_err()).copied().collect();
            let map = region_map(&m2.points, &others, k, r2, spec, &prof, params);
            let stats = region_stats(&map, &m2.points, &prof, 20, cfg.seed);
            let (margin, dup) = separation_report(&map);
            let body = json!({
                "k": k,
                "phi": phi,
                "r2": r2,
                "m2_points": m2.points.len(),
                "components": stats.components.iter().map(|c| json!({
                    "color": c.color, "size": c.size, "bbox": c.bbox, "n_points": c.n_points,
                })).collect::<Vec<_>>(),
                "checks": {
                    "idempotent": remerge(&map, &m2.points, spec, &prof) == map,
                    "separation_margin": if map.components.len() > 1 { json!(margin) } else { json!(null) },
                    "duplicates": dup,
                    "boundary_defect": boundary_check(&map, spec),
                    "max_counting_ratio": stats.max_ratio,
                },
            });
            let path = out_path(&cfg, &common, "regions.json")?;
            fs::write(&path, format!("{body:#}\n"))?;
            writeln!(stdout, "{}", json!({"output": path, "components": map.components.len()}))?;
            Ok(EXIT_PASS)
        }
        Command::Eigen { common, level, k, phi, kappa } => {
            let cfg = load(&common)?;
            positive("k", k)?;
            let suite = cfg.suite()?;
            let point = Point::new(k, phi, kappa_at(level, k, phi, kappa, &suite)?);
            let res = eigenvalue_level(level, &point, &suite.inputs, &suite.profile)?;
            let body = serde_json::to_value(&res).map_err(|e| Error::Io(e.to_string()))?;
            if common.out.is_some() {
                let path = out_path(&cfg, &common, "eigen.json")?;
                fs::write(&path, format!("{body:#}\n"))?;
            }
            writeln!(stdout, "{body}")?;
            Ok(if res.converged { EXIT_PASS } else { EXIT_NONCONVERGENT })
        }
        Command::Wavefunction { common, level, k, phi, kappa, grid } => {
            let cfg = load(&common)?;
            positive("k", k)?;
            let suite = cfg.suite()?;
            let point = Point::new(k, phi, kappa_at(level, k, phi, kappa, &suite)?);
            let wf = synthesize(level, &point, &suite.inputs, &suite.profile)?;
            let prev = if level > 1 {
                synthesize(level - 1, &point, &suite.inputs, &suite.profile)?
            } else {
                WaveFunction::plane(wf.kappa)
            };
            let s = sample(&wf, &prev, &unit_grid(grid), &suite.inputs.params);
            let path = out_path(&cfg, &common, "wavefunction.csv")?;
            export_samples(&s, &path)?;
            writeln!(stdout, "{}", json!({"output": path, "lambda": wf.lambda, "sup_psi": s.sup_psi, "sup_u": s.sup_u}))?;
            Ok(EXIT_PASS)
        }
    }
}

/// One JSON line per check plus one per criterion for its runtime budget; runtimes are printed
/// only with `timings` so that reports of identical configurations are byte-identical.
pub fn verify(suite: &Suite, criteria: &[usize], timings: bool, out: Option<PathBuf>, stdout: &mut dyn Write) -> Result<i32> {
    let ids: Vec<usize> = if criteria.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { criteria.to_vec() };
    let mut lines = Vec::new();
    let mut all = true;
    for id in ids {
        let report = run_criterion(suite, id).ok_or_else(|| Error::Config(format!("no criterion {id}")))?;
        for c in &report.checks {
            lines.push(json!({
                "criterion": id,
                "check": c.name,
                "status": if c.passed { "pass" } else { "fail" },
                "measured": c.measured,
                "threshold": c.threshold,
                "note": c.note,
            }));
        }
        lines.push(json!({
            "criterion": id,
            "check": format!("{} within its runtime budget", report.title),
            "status": if report.within_budget() { "pass" } else { "fail" },
            "measured": if timings { json!(report.runtime_s) } else { json!(null) },
            "threshold": report.budget_s,
            "note": "",
        }));
        all &= report.passed();
    }
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    stdout.write_all(text.as_bytes())?;
    if let Some(p) = out {
        fs::write(p, &text)?;
    }
    Ok(if all { EXIT_PASS } else { EXIT_FAIL })
}

fn cells_match(a: &str, b: &str, tol: f64) -> bool {
    if a == b {
        return true;
    }
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_nan() && y.is_nan() => true,
        (Ok(x), Ok(y)) => (x - y).abs() <= tol * x.abs().max(1.0),
        _ => false,
    }
}

/// Cell-by-cell comparison of two CSV files with the same header.
pub fn diff_csv(a: &Path, b: &Path, tol: f64, stdout: &mut dyn Write) -> Result<i32> {
    let read = |p: &Path| -> Result<(Vec<String>, Vec<Vec<String>>)> {
        let mut r = csv::Reader::from_path(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        let head = r.headers().map_err(|e| Error::Io(e.to_string()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(|e| Error::Io(e.to_string()))?.iter().map(String::from).collect());
        }
        Ok((head, rows))
    };
    let (ha, ra) = read(a)?;
    let (hb, rb) = read(b)?;
    let mut mismatches = 0;
    let mut first = serde_json::Value::Null;
    if ha != hb || ra.len() != rb.len() {
        mismatches = 1;
        first = json!({"header_a": ha, "header_b": hb, "rows_a": ra.len(), "rows_b": rb.len()});
    } else {
        for (i, (x, y)) in ra.iter().zip(&rb).enumerate() {
            for (j, (u, v)) in x.iter().zip(y).enumerate() {
                if !cells_match(u, v, tol) {
                    if mismatches == 0 {
                        first = json!({"row": i, "column": ha.get(j), "a": u, "b": v});
                    }
                    mismatches += 1;
                }
            }
        }
    }
    let ok = mismatches == 0;
    writeln!(
        stdout,
        "{}",
        json!({"check": "outputs agree", "status": if ok { "pass" } else { "fail" }, "measured": mismatches, "threshold": 0, "note": first})
    )?;
    Ok(if ok { EXIT_PASS } else { EXIT_FAIL })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
        let s = RunConfig::default().suite().unwrap();
        assert_eq!(s.k_grid, vec![15.0, 25.0, 40.0, 60.0]);
        assert_eq!(s.profile, ParameterProfile::desk(15.0));
        let params = QPParams::quadratic(-1, 1, 2, 1, 2.0).unwrap();
        let spec = PotentialSpec::build(&default_generators(), 4, &params).unwrap();
        assert_eq!(s.inputs.spec.coeffs, spec.coeffs);
    }

    #[test]
    fn config_errors_are_reported() {
        for bad in [
            r#"{"alpha": {"quadratic": [1, 0, 4, 3]}}"#,
            r#"{"k_grid": [25, 15]}"#,
            r#"{"seeed": 3}"#,
            r#"{"profile": {"delta": -0.1}}"#,
            r#"{"tolerances": {"g2_rel": 0}}"#,
            r#"{"generators": [{"index": [0, 0, 0, 0], "re": 1}]}"#,
        ] {
            let r = RunConfig::parse(bad).and_then(|c| c.suite().map(|_| ()));
            assert!(matches!(&r, Err(e) if exit_code(e) == EXIT_CONFIG), "{bad}: {r:?}");
        }
        let e = RunConfig::parse("{\n  \"mu\": \"two\"\n}").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn alpha_descriptors() {
        let c = RunConfig::parse(r#"{"alpha": {"cf": [0, 2, 1]}, "generators": []}"#).unwrap();
        assert!(c.suite().unwrap().inputs.spec.is_zero());
        let q = RunConfig::parse(r#"{"alpha": {"quadratic": [-1, 1, 5, 2]}}"#).unwrap();
        assert!((q.params().unwrap().alpha() - 0.5 * (5f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn profile_overrides_rescale_thresholds() {
        let c = RunConfig::parse(r#"{"profile": {"k": 20, "tau": 2}}"#).unwrap();
        let p = c.parameter_profile();
        let d = ParameterProfile::desk(20.0);
        assert!((p.t1 - 2.0 * d.t1).abs() < 1e-12);
        assert_eq!(p.c_delta, d.c_delta);
    }

    #[test]
    fn csv_cells_compare_numerically() {
        assert!(cells_match("1.0", "1.00", 0.0));
        assert!(cells_match("NaN", "NaN", 0.0));
        assert!(!cells_match("1.0", "1.1", 0.01));
        assert!(cells_match("100.0", "100.5", 0.01));
        assert!(!cells_match("true", "false", 1.0));
    }
}
