use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_locfisher"));
    c.env_remove("LOCFISHER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn locfisher")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn default_sweep_has_fifty_rows_peaking_near_ln2() {
    for scale in ["lin", "log"] {
        sweep_peaks_near_ln2(scale);
    }
}

fn sweep_peaks_near_ln2(scale: &str) {
    let o = run(&["fisher-sweep", "--model", "two_level_single", "--t-scale", scale]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&stdout(&o));
    assert_eq!(h, ["t", "J_single", "j_N", "J_N", "blank_term", "trace_accessible"]);
    assert_eq!(rows.len(), 50);
    let t = column(&h, &rows, "t");
    let j = column(&h, &rows, "J_single");
    let (imax, _) = j.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    // both grids are spaced ~0.06 near ln 2
    assert!((t[imax] - 2f64.ln()).abs() < 0.065, "{scale}: peak at {}", t[imax]);
    assert!(j.iter().all(|x| x.is_finite() && *x >= 0.0));
}

#[test]
fn empty_grid_is_a_config_error() {
    let o = run(&["fisher-sweep", "--t-points", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("time grid"), "{}", stderr(&o));
}

#[test]
fn reversed_grid_and_bad_preset_are_config_errors() {
    assert_eq!(run(&["fisher-sweep", "--t-start", "2", "--t-stop", "1"]).status.code(), Some(2));
    assert_eq!(run(&["fisher-sweep", "--model", "no_such_model"]).status.code(), Some(2));
    assert_eq!(run(&["fisher-sweep", "--gamma-plus", "1", "--gamma-minus", "1"]).status.code(), Some(2));
}

#[test]
fn sweeps_are_byte_identical_across_runs_and_thread_counts() {
    let a = run(&["composite", "--model", "two_level_ent2", "--t-points", "12"]);
    let b = bin()
        .args(["composite", "--model", "two_level_ent2", "--t-points", "12"])
        .env("LOCFISHER_THREADS", "1")
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn invalid_thread_count_is_rejected() {
    let o = bin().args(["fisher-sweep"]).env("LOCFISHER_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("LOCFISHER_THREADS"));
}

#[test]
fn zero_repeats_is_a_config_error() {
    let o = run(&["montecarlo", "--repeats", "0", "--shots", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("repeats"));
}

#[test]
fn insensitive_estimator_is_a_numeric_error_naming_the_point() {
    let o = run(&["montecarlo", "--estimator", "sigma_x", "--shots", "100", "--repeats", "3"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("g = "), "{}", stderr(&o));
}

#[test]
fn montecarlo_csv_is_reproducible_and_within_five_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let args = |p: &str| {
        vec![
            "montecarlo".to_owned(),
            "--shots".into(),
            "20000".into(),
            "--repeats".into(),
            "40".into(),
            "--seed".into(),
            "77".into(),
            "--out".into(),
            p.to_owned(),
        ]
    };
    let (a, b) = (out("a.csv"), out("b.csv"));
    assert!(bin().args(args(&a)).status().unwrap().success());
    assert!(bin().args(args(&b)).status().unwrap().success());
    let ta = std::fs::read(&a).unwrap();
    assert_eq!(ta, std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(format!("{a}.meta.json")).unwrap(), std::fs::read(format!("{b}.meta.json")).unwrap());

    let (h, rows) = csv(&String::from_utf8(ta).unwrap());
    assert_eq!(rows.len(), 40);
    let seeds = column(&h, &rows, "seed");
    assert_eq!(seeds.first(), Some(&77.0));
    assert_eq!(seeds.last(), Some(&116.0));

    let meta: Value = serde_json::from_slice(&std::fs::read(format!("{a}.meta.json")).unwrap()).unwrap();
    let s = &meta["summary"];
    let ratio = s["ratio"].as_f64().unwrap();
    let se = s["ratio_se"].as_f64().unwrap();
    assert!(se > 0.0);
    assert!((ratio - 1.0).abs() < 5.0 * se, "ratio {ratio} +- {se}");
}

#[test]
fn replaying_the_echoed_config_reproduces_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    let o = run(&[
        "fisher-sweep",
        "--model",
        "two_level_iid2",
        "--gamma-plus",
        "1.5",
        "--t-points",
        "7",
        "--t-scale",
        "log",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = format!("{}.meta.json", first.display());
    let o = run(&["run", "--config", &meta, "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(
        &p,
        r#"{"command":"montecarlo","model":{"type":"two_level_decay","params":{"gamma_plus":2,"gamma_minus":1}},
            "initial_state":[[[1,0],[0,0]],[[0,0],[0,0]]],"g":0.001,"t":0.7,"shots":10,"repeats":3,"seed":1,
            "estimator":"optimal","surprise":true}"#,
    )
    .unwrap();
    let o = run(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scenario_file_drives_the_composite_command() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scenario.json");
    std::fs::write(
        &p,
        r#"{"N":2,"model":{"type":"two_level_decay","params":{"gamma_plus":2,"gamma_minus":1}},
            "initial_state":{"kind":"entangled_pair"},"g":1e-4,
            "t_grid":{"start":0.5,"stop":1.0,"points":3,"scale":"lin"}}"#,
    )
    .unwrap();
    let o = run(&["composite", "--scenario", p.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        let blocks = p["blocks"].as_object().unwrap();
        assert_eq!(blocks.len(), 4);
        let total: f64 = blocks.values().map(|b| b["trace"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(p["J_N"].as_f64().unwrap() + 1e-12 >= p["j_N"].as_f64().unwrap());
    }
}

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(&stdout(&run(&["schema"]))).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn assert_valid(v: &Value) {
    let validator = validator();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn validate_json_matches_the_schema_and_passes() {
    let o = run(&["validate", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_valid(&v);
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["criteria"].as_array().unwrap().len(), 11);
}

#[test]
fn perturbed_criterion_fails_and_is_named() {
    let o = run(&["validate", "--only", "6", "--perturb", "6"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("[FAIL]"), "{out}");
    assert!(stderr(&o).contains("6 ("), "{}", stderr(&o));

    let o = run(&["validate", "--json", "--only", "2", "--perturb", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_valid(&v);
    assert_eq!(v["criteria"][0]["passed"], Value::Bool(false));
}

#[test]
fn unknown_criterion_is_a_config_error() {
    assert_eq!(run(&["validate", "--only", "12"]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--perturb", "0"]).status.code(), Some(2));
}

#[test]
fn explicit_initial_state_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rho.json");
    // |00><00| on two qubits
    let mut m = vec![vec![[0.0, 0.0]; 4]; 4];
    m[0][0] = [1.0, 0.0];
    std::fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
    let o = run(&[
        "composite",
        "--N",
        "2",
        "--initial",
        "file",
        "--initial-file",
        p.to_str().unwrap(),
        "--t-points",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 4);
    assert!(!Path::new("rho.json").exists());
}
