use std::path::Path;
use std::process::{Command, Output};

fn odp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odp")).args(args).output().expect("odp runs")
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn critical_exponent_is_a_configuration_error() {
    let out = odp(&["radial", "--d", "3", "--p", "5", "--k", "0.01", "--lambda", "400"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("p < (d+2)/(d-2)"), "{err}");
}

#[test]
fn unknown_flag_and_bad_thread_count_exit_two() {
    assert_eq!(odp(&["radial", "--bogus"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_odp"))
        .args(["rescale", "--k", "0.1", "--lambda", "1"])
        .env("ODP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn radial_table_has_profile_columns() {
    let out = odp(&["radial", "--k", "0.01", "--lambda", "400", "--nr", "200"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# odp radial"));
    assert!(text.contains("# config: nr = 200"));
    let rows = body(&text);
    assert_eq!(rows[0], "r,u,du");
    let first: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first.len(), 3);
    // The grid starts on the Dirichlet boundary r = 1, where the profile leaves with positive slope.
    assert_eq!(first[0], 1.0);
    assert!(first[1].abs() < 1e-10 && first[2] > 0.0);
    assert!(rows[1..].iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap() >= -1e-10));
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let cfg_s = cfg.to_str().unwrap();
    let first = odp(&["spectrum", "--k", "0.01", "--lambda", "400", "--modes", "3", "--nr", "300", "--save-config", cfg_s]);
    assert!(first.status.success());
    let second = odp(&["spectrum", "--config", cfg_s]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    // A flag overrides the file.
    let third = odp(&["spectrum", "--config", cfg_s, "--modes", "2"]);
    assert_eq!(body(&String::from_utf8(third.stdout).unwrap()).len(), 1 + 3);
}

#[test]
fn rescale_reports_lambda_k_squared() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    assert!(odp(&["rescale", "--k", "0.1", "--lambda", "1", "--out", a.to_str().unwrap()]).status.success());
    let eps = json(&a)["report"]["points"][0]["epsilon"].as_f64().unwrap();
    assert!((eps - 0.01).abs() < 1e-15);
    let b = dir.path().join("b.json");
    assert!(odp(&["rescale", "--k", "1", "--lambda", "7.5", "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(json(&b)["report"]["points"][0]["epsilon"].as_f64(), Some(7.5));
}

#[test]
fn branch_table_columns_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("branch.csv");
    let prefix = dir.path().join("br");
    let out = odp(&[
        "branch",
        "--n",
        "2",
        "--lambda-star",
        "398.8424633878",
        "--amplitudes",
        "1e-3",
        "--nr-annulus",
        "240",
        "--fourier-modes",
        "4",
        "--out",
        csv.to_str().unwrap(),
        "--svg",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = body(&text);
    assert_eq!(rows[0], "amplitude,lambda,a_1,a_2,a_3,a_4,F_residual,neumann_constant,neumann_stddev");
    let row: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 1e-3);
    assert_eq!(row[2], 1e-3);
    // Subcritical: lambda drops below lambda_*.
    assert!(row[1] < 398.8424633878);
    assert!(row[6] < 1e-8);
    for suffix in ["br_outline.svg", "br_diagram.svg"] {
        assert!(std::fs::read_to_string(dir.path().join(suffix)).unwrap().starts_with("<svg"));
    }
}
