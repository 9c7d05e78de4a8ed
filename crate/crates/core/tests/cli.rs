use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qp-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &PathBuf, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn qp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qp")).args(args).output().unwrap()
}

fn json_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn free_operator_passes_its_checks() {
    let dir = scratch("free");
    let cfg = write_config(&dir, r#"{"generators":[]}"#);
    let out = qp(&["verify", "--config", cfg.to_str().unwrap(), "--criteria", "1,6,8"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let records = json_lines(&out);
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["status"] == "pass"));
}

#[test]
fn free_eigenvalue_is_kappa_squared() {
    let dir = scratch("eigen");
    let cfg = write_config(&dir, r#"{"generators":[]}"#);
    let out = qp(&["eigen", "--config", cfg.to_str().unwrap(), "--k", "20", "--phi", "0.3"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let kappa: Vec<f64> = v["kappa"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let norm2 = kappa[0] * kappa[0] + kappa[1] * kappa[1];
    let lambda = v["lambda"].as_f64().unwrap();
    assert!((lambda - norm2).abs() <= 1e-12 * norm2);
    assert!(v["g"].as_array().unwrap().iter().all(|g| g.as_f64().unwrap() == 0.0));
}

#[test]
fn rational_alpha_is_a_config_error() {
    let dir = scratch("rational");
    let cfg = write_config(&dir, r#"{"alpha":{"quadratic":[1,0,4,3]}}"#);
    let out = qp(&["verify", "--config", cfg.to_str().unwrap(), "--criteria", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = scratch("unknown");
    let cfg = write_config(&dir, r#"{"alpah":{"cf":[0,2,2,2]}}"#);
    let out = qp(&["eigen", "--config", cfg.to_str().unwrap(), "--k", "20", "--phi", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_is_deterministic() {
    let a = qp(&["verify", "--criteria", "1"]);
    let b = qp(&["verify", "--criteria", "1"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn free_curve_is_a_circle() {
    let dir = scratch("curve");
    let cfg = write_config(&dir, r#"{"generators":[]}"#);
    let csv = dir.join("curve.csv");
    let out = qp(&[
        "curve", "--config", cfg.to_str().unwrap(), "--lambda", "400", "--grid", "16",
        "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let ki = headers.iter().position(|h| h == "kappa").unwrap();
    let ai = headers.iter().position(|h| h == "admissible").unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[ai] == "true" {
            let kappa: f64 = rec[ki].parse().unwrap();
            assert!((kappa - 20.0).abs() < 1e-12);
            rows += 1;
        }
    }
    assert_eq!(rows, 16);
    assert!(dir.join("curve.holes.json").exists());
}

#[test]
fn empty_second_set_gives_no_components() {
    let dir = scratch("regions");
    let path = dir.join("regions.json");
    let out = qp(&["regions", "--k", "25", "--phi", "4.0", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(v["m2_points"], 0);
    assert!(v["components"].as_array().unwrap().is_empty());
}

#[test]
fn wavefunction_csv_and_diff() {
    let dir = scratch("wave");
    let a = dir.join("a.csv");
    let out = qp(&[
        "wavefunction", "--k", "20", "--phi", "0.3", "--grid", "8", "--out", a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,re_psi,im_psi,abs_u");
    assert_eq!(text.lines().count(), 1 + 64);

    let same = qp(&["verify", "--diff", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0));

    let b = dir.join("b.csv");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[2] = "7.5".into();
    lines[3] = cells.join(",");
    fs::write(&b, lines.join("\n") + "\n").unwrap();
    let differ = qp(&["verify", "--diff", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(differ.status.code(), Some(1));
}
