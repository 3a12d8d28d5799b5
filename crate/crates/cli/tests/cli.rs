use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quasisol"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_study(window: [f64; 2]) -> String {
    format!(
        r#"{{
            "problem": {{"kind": "source", "n": 15}},
            "regularizer": {{"kind": "sup"}},
            "rule": {{"rule": "II"}},
            "study": {{
                "id": "small",
                "x_true": {{"profile": {{"kind": "clamped_cosine", "amplitude": 1.3, "frequency": 2.0, "clip": 1.0}}}},
                "deltas": [0.05, 0.02, 0.01, 0.005],
                "trials": 2,
                "error_measure": "l2",
                "monotone_slack": 10.0,
                "slope_window": [{}, {}]
            }}
        }}"#,
        window[0], window[1]
    )
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn counterexample_writes_curves_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ce");
    let cfg = configs().join("counterexample.json");
    let (code, err) = run(&["counterexample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(out.join("counterexample.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 20);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("panel,delta,alpha,x,value,feasible\n"));
    assert_eq!(curves.lines().count(), 1 + 3 * 4 * 401);
}

#[test]
fn json_format_and_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("solve_source.json");
    let (code, err) = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--format", "json"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    assert_eq!(v["rule"], "III");
    assert_eq!(v["x"].as_array().unwrap().len(), 63);
    assert_eq!(v["all_passed"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, err) = run(&["rates", "--config", "/no/such/config.json", "--out", out]);
    assert_eq!(code, 1);
    assert!(err.contains("/no/such/config.json"), "{err}");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, small_study([5.0, 6.0])).unwrap();
    let (code, err) = run(&["rates", "--config", bad.to_str().unwrap(), "--out", out, "--jobs", "1"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("[FAIL]") && err.contains("slope_window"), "{err}");

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{\"problem\": 3}").unwrap();
    assert_eq!(run(&["rates", "--config", garbled.to_str().unwrap(), "--out", out]).0, 1);
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    fs::write(&cfg, small_study([-10.0, 10.0])).unwrap();
    let mut files = Vec::new();
    for (k, jobs) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let (code, err) = run(&[
            "rates",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--jobs",
            jobs,
        ]);
        assert_eq!(code, 0, "{err}");
        files.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
    let text = String::from_utf8(files[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);

    let other = dir.path().join("other");
    run(&["rates", "--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(fs::read(other.join("results.csv")).unwrap(), files[0]);
}
