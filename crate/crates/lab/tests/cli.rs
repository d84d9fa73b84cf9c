//! End-to-end checks of the command-line contract: exit codes, the JSON
//! error channel on stderr, sidecar files, and the compare subcommand.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quantlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn quantlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// stderr must be exactly one line holding a JSON object with the given kind.
fn assert_json_error(o: &Output, kind: &str) {
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got: {err:?}");
    let v: serde_json::Value = serde_json::from_str(lines[0]).expect("stderr line parses as JSON");
    assert_eq!(v["error"], kind, "error kind in {v}");
    assert!(v["message"].is_string());
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("mi.toml");
    fs::write(
        &path,
        "[params]\ncalcs = [\"round\"]\nmu_grid = [0.0]\nsigma_min = 0.3\nsigma_max = 1.0\nsigma_points = 2\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_csv_and_metadata_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("mi.csv");
    let o = run(&[
        "mutual-info",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    assert!(stdout(&o).contains("mutual-info"), "status line: {}", stdout(&o));
    let body = fs::read_to_string(&out).unwrap();
    assert!(body.starts_with("calc,alpha,mu,sigma,"), "header: {body}");
    assert_eq!(body.lines().count(), 3, "one header plus two rows");

    let meta_path = dir.path().join("mi.csv.meta.json");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "mutual-info");
    assert_eq!(meta["seed"], 5);
    assert!(meta["config_sha256"].is_string());
    // no JSON mirror unless asked for
    assert!(!dir.path().join("mi.json").exists());
}

#[test]
fn json_flag_writes_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("mi.csv");
    let o = run(&["mutual-info", "--config", &cfg, "--out", out.to_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0);
    let mirror: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("mi.json")).unwrap()).unwrap();
    assert_eq!(mirror["metadata"]["experiment"], "mutual-info");
    assert!(mirror["rows"].as_array().is_some());
}

#[test]
fn reruns_are_byte_identical_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let o = run(&["mutual-info", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
}

#[test]
fn print_config_emits_toml_and_skips_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("never.csv");
    let o = run(&[
        "mutual-info",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--print-config",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let v: toml::Table = text.parse().expect("resolved config parses as TOML");
    assert_eq!(v["experiment"].as_str(), Some("mutual-info"));
    assert!(v["params"]["calcs"].as_array().is_some());
    assert!(!out.exists(), "print-config must not run the experiment");
}

#[test]
fn unknown_param_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[params]\nbogus_knob = 3\n").unwrap();
    let o = run(&["mutual-info", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_json_error(&o, "config");
}

#[test]
fn experiment_name_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mismatch.toml");
    fs::write(&path, "experiment = \"mi-2d\"\n").unwrap();
    let o = run(&["mutual-info", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_json_error(&o, "config");
}

#[test]
fn missing_required_params_name_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds.csv");
    let o = run(&["distortion-sim", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_json_error(&o, "config");
    let err = stderr(&o);
    for key in ["calc", "mu", "sigma"] {
        assert!(err.contains(key), "missing-param message should name {key}: {err}");
    }
}

#[test]
fn unknown_subcommand_exits_two() {
    let o = run(&["entropy-rates"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_judges_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let schema = dir.path().join("schema.csv");
    fs::write(&a, "name,value\nrow,1.0\n").unwrap();
    fs::write(&b, "name,value\nrow,1.25\n").unwrap();
    fs::write(&schema, "name,other\nrow,1.0\n").unwrap();

    let o = run(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "identical tables: {}", stderr(&o));
    assert!(stdout(&o).contains("result: PASS"));

    let o = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "mismatch beyond tolerance");
    assert!(stdout(&o).contains("result: FAIL"));

    let o = run(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--abs-tol",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "mismatch inside tolerance: {}", stdout(&o));

    let o = run(&["compare", a.to_str().unwrap(), schema.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "schema mismatch is a config error");
    assert_json_error(&o, "config");
}
