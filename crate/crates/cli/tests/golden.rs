use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvlab"))
        .args(args)
        .current_dir(root())
        .env_remove("DVLAB_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Compares `text` with `tests/golden/<name>`; `DVLAB_UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, text: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("DVLAB_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, text).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(text, expected, "output differs from {}", path.display());
}

/// Runs twice, checks success and identical bytes, then compares with the golden file.
fn check(name: &str, args: &[&str]) -> String {
    let a = dvlab(args);
    assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
    let b = dvlab(args);
    assert_eq!(a.stdout, b.stdout, "{args:?} is not deterministic");
    let text = stdout(&a);
    golden(name, &text);
    text
}

fn value<'a>(csv: &'a str, key: &str) -> &'a str {
    csv.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(',')))
        .unwrap_or_else(|| panic!("no {key} in\n{csv}"))
}

#[test]
fn stationary() {
    let out = check("stationary_ring4_counterexample.csv", &["stationary", "models/ring4_counterexample.toml"]);
    assert!(out.contains("1,0.010989010989010988"));
    check("stationary_db_three_state.json", &["stationary", "models/db_three_state.toml", "--format", "json"]);
}

#[test]
fn potential() {
    check(
        "potential_fig1.csv",
        &["potential", "models/ring4_counterexample.toml", "models/fig1_initial.txt"],
    );
}

#[test]
fn rate() {
    let at_rho = check("rate_rho.csv", &["rate", "models/ring4_counterexample.toml", "rho"]);
    assert_eq!(value(&at_rho, "I"), "0");
    let db = check("rate_db.csv", &["rate", "models/db_three_state.toml", "models/db_initial.txt"]);
    assert!(!value(&db, "F").is_empty());
}

#[test]
fn evolve() {
    let out = check(
        "evolve_db.csv",
        &["evolve", "models/db_three_state.toml", "models/db_initial.txt", "--points", "12"],
    );
    assert_eq!(out.lines().next().unwrap(), "t,mu_low,mu_high,mu_mid,I,E,F,S_rel,dI_dt");
    assert_eq!(out.lines().count(), 14);
    check(
        "evolve_two_state.json",
        &["evolve", "models/two_state.toml", "uniform", "--t-max", "2", "--points", "3", "--format", "json"],
    );
}

#[test]
fn scan() {
    let slip = check("scan_fig1.csv", &["scan", "models/ring4_counterexample.toml", "models/fig1_initial.txt"]);
    assert_eq!(value(&slip, "initial_slip"), "true");
    let flat = check("scan_homogeneous.csv", &["scan", "models/ring4_homogeneous.toml", "models/uniform4.txt", "--points", "40"]);
    assert_eq!(value(&flat, "initial_slip"), "false");
}

#[test]
fn sector() {
    let bad = check("sector_counterexample.csv", &["sector", "models/ring4_counterexample.toml"]);
    assert_eq!(value(&bad, "hypothesis_holds"), "false");
    let good = check("sector_db.json", &["sector", "models/db_three_state.toml", "--format", "json"]);
    assert!(good.contains("\"hypothesis_holds\": true"));
}

#[test]
fn chi() {
    let out = check(
        "chi_two_state.csv",
        &["chi", "models/two_state.toml", "--G", "1,0", "--B", "0,1", "--t-grid", "0:2:5"],
    );
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn scgf() {
    let zero = check("scgf_zero.csv", &["scgf", "models/ring4_counterexample.toml", "--f", "0"]);
    assert!(value(&zero, "residual").parse::<f64>().unwrap() < 1e-10);
    let tilted = check("scgf_two_state.csv", &["scgf", "models/two_state.toml", "--f", "0.5,-1"]);
    assert!(value(&tilted, "residual").parse::<f64>().unwrap() < 1e-8);
}

#[test]
fn sample() {
    check(
        "sample_two_state.csv",
        &["sample", "models/two_state.toml", "--T", "20", "--n", "200", "--seed", "3"],
    );
    check(
        "sample_ring4_from.csv",
        &["sample", "models/ring4_counterexample.toml", "--horizon", "10", "--n", "100", "--seed", "5", "--from", "models/uniform4.txt"],
    );
}

fn reproduce(target: &str, files: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = check(&format!("reproduce_{target}.csv"), &["reproduce", target, "--out-dir", d, "--gnuplot"]);
    assert!(out.lines().count() > 1);
    for f in files {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        golden(&format!("reproduce_{f}"), &text);
    }
}

#[test]
fn reproduce_fig1() {
    reproduce("fig1", &["fig1_inhomogeneous.csv", "fig1_homogeneous.csv", "fig1.gp"]);
}

#[test]
fn reproduce_ring_homogeneous() {
    reproduce("ring-homogeneous", &["ring_homogeneous.csv"]);
}

#[test]
fn reproduce_db_dirichlet() {
    reproduce("db-dirichlet", &["db_dirichlet.csv"]);
}

#[test]
fn out_dir_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_dvlab"))
        .args(["stationary", "models/two_state.toml", "--out", "rho.csv"])
        .current_dir(root())
        .env("DVLAB_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("rho.csv")).unwrap();
    assert!(text.starts_with("state,rho\n"));
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| dvlab(args).status.code().unwrap();
    assert_eq!(code(&["stationary", "models/missing.toml"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["stationary", "models/two_state.toml", "--tol", "0"]), 1);
    assert_eq!(code(&["potential", "models/two_state.toml", "models/uniform4.txt"]), 1);
    assert_eq!(code(&["chi", "models/two_state.toml", "--G", "1,0", "--B", "0,1", "--t-grid", "1:0"]), 1);
    // a residual target below rounding cannot be met
    let out = dvlab(&["potential", "models/ring4_counterexample.toml", "models/fig1_initial.txt", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_CONVERGENCE"));
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn invalid_model_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reducible.toml");
    std::fs::write(&path, "name = \"r\"\nstates = [\"a\", \"b\"]\n[[rate]]\nfrom = \"a\"\nto = \"b\"\nvalue = 1.0\n").unwrap();
    let out = dvlab(&["stationary", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_"));
}
