use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cogload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogload"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_error(out: &Output) -> (String, String) {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    (
        v["error"]["kind"].as_str().unwrap().to_string(),
        v["error"]["message"].as_str().unwrap().to_string(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Session {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Session {
    fn new() -> Session {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = cogload(&["synth", "--seed", "3", "--out-dir", s(&root)]);
        stdout_json(&out);
        Session { _dir: dir, root }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn inputs(&self) -> Vec<String> {
        [
            ("--recording", "calibration_recording.txt"),
            ("--events", "calibration_events.txt"),
            ("--use-recording", "use_recording.txt"),
            ("--tasks", "use_tasks.txt"),
            ("--out-dir", ""),
        ]
        .iter()
        .flat_map(|(flag, name)| [flag.to_string(), s(&self.file(name)).to_string()])
        .collect()
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let inputs = self.inputs();
        let mut args: Vec<&str> = vec![cmd];
        args.extend(inputs.iter().map(String::as_str));
        args.extend_from_slice(extra);
        cogload(&args)
    }
}

#[test]
fn chance_thresholds() {
    let v = stdout_json(&cogload(&["chance", "--n", "360"]));
    let t = v["threshold"].as_f64().unwrap();
    assert!((0.56..=0.58).contains(&t));
    assert_eq!(v["correct_needed"], 203);

    let v = stdout_json(&cogload(&["chance", "--n", "10", "--alpha", "0.01"]));
    assert_eq!(v["threshold"].as_f64().unwrap(), 1.0);

    let v = stdout_json(&cogload(&["chance", "--n", "100", "--alpha", "0.5"]));
    let t = v["threshold"].as_f64().unwrap();
    assert!(t > 0.5 && t <= 0.52);
}

#[test]
fn chance_without_threshold_is_a_validation_error() {
    let out = cogload(&["chance", "--n", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out).0, "validation");
}

#[test]
fn too_few_permutations_rejected_up_front() {
    let out = cogload(&["permtest", "--n-perm", "50"]);
    assert_eq!(out.status.code(), Some(2));
    let (kind, message) = stderr_error(&out);
    assert_eq!(kind, "validation");
    assert!(message.contains("100"), "{message}");
}

#[test]
fn bad_band_for_rate_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[synth]\nrate_hz = 60.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cogload(&["synth", "--config", s(&cfg), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out).0, "validation");
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_keys_and_bad_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "windw_seconds = 2.0\n").unwrap();
    let out = cogload(&["chance", "--n", "10", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    for args in [
        vec!["chance", "--n", "10", "--window", "5"],
        vec!["chance", "--n", "10", "--folds", "1"],
        vec!["chance", "--n", "10", "--band-set", "all7"],
        vec!["chance", "--n", "10", "--modalities", "EEG,EMG"],
        vec!["chance", "--n", "10", "--modalities", "EEG,ECG"],
    ] {
        let out = cogload(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_error(&out).0, "validation");
    }
}

#[test]
fn missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cogload(&["calibrate", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_error(&out).1.contains("--recording"));

    let rec = dir.path().join("rec.txt");
    std::fs::write(&rec, "# cogload-recording v1\nrate_hz 256\n").unwrap();
    let events = dir.path().join("absent.txt");
    let out = cogload(&["calibrate", "--recording", s(&rec), "--events", s(&events)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out).0, "data");
}

#[test]
fn synthetic_session_end_to_end() {
    let session = Session::new();
    let events = std::fs::read_to_string(session.file("calibration_events.txt")).unwrap();
    assert_eq!(events.lines().filter(|l| l.contains("-back")).count(), 360);

    // Same seed, same bytes.
    let again = tempfile::tempdir().unwrap();
    stdout_json(&cogload(&["synth", "--seed", "3", "--kind", "calibration", "--out-dir", s(again.path())]));
    for name in ["calibration_recording.txt", "calibration_events.txt"] {
        let a = std::fs::read(session.file(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }

    let all5 = stdout_json(&session.run("calibrate", &[]));
    assert_eq!(all5["feature_width"], 30);
    assert_eq!(all5["n_trials"], 360);
    let low3 = stdout_json(&session.run("calibrate", &["--band-set", "low3", "--model", s(&session.file("low3.json"))]));
    assert_eq!(low3["feature_width"], 18);
    let fused = stdout_json(&session.run(
        "calibrate",
        &["--window", "10", "--modalities", "EEG,ECG,GSR", "--model", s(&session.file("fused.json"))],
    ));
    assert_eq!(fused["feature_width"], 36);
    assert_eq!(fused["class_counts"], serde_json::json!([36, 36]));

    let cv = stdout_json(&session.run("cv", &[]));
    assert_eq!(cv["fold_counts"], serde_json::json!([[90, 90], [90, 90]]));
    assert!(cv["mean_accuracy"].as_f64().unwrap() >= 0.85);
    assert!(cv["above_chance"].as_bool().unwrap());
    let report = std::fs::read(session.file("cv_report.json")).unwrap();
    stdout_json(&session.run("cv", &[]));
    assert_eq!(report, std::fs::read(session.file("cv_report.json")).unwrap());

    let null = stdout_json(&session.run("cv", &["--shuffle-labels"]));
    assert!(null["mean_accuracy"].as_f64().unwrap() < null["chance_threshold"].as_f64().unwrap());

    let est = stdout_json(&session.run("estimate", &[]));
    assert_eq!(est["highest_task"], 5);
    let series = std::fs::read_to_string(session.file("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("t_start_s,raw_score,workload_index"));
    assert!(session.file("task_means.csv").exists());
    assert!(session.file("quarters.csv").exists());

    let model = stdout_json(&cogload(&["inspect", s(&session.file("model.json"))]));
    assert_eq!(model["type"], "model");
    assert_eq!(model["feature_width"], 30);
    let rec = stdout_json(&cogload(&["inspect", s(&session.file("use_recording.txt"))]));
    assert_eq!(rec["channels"].as_array().unwrap().len(), 32);
    let csv = stdout_json(&cogload(&["inspect", s(&session.file("series.csv"))]));
    assert_eq!(csv["n_rows"], est["n_windows"]);
}

#[test]
fn permtest_is_reproducible() {
    let session = Session::new();
    let first = stdout_json(&session.run("permtest", &["--n-perm", "100"]));
    assert!(first["p_value"].as_f64().unwrap() < 0.01);
    let vectors = std::fs::read(session.file("permutation_vectors.csv")).unwrap();
    let report = std::fs::read(session.file("permtest.json")).unwrap();
    stdout_json(&session.run("permtest", &["--n-perm", "100"]));
    assert_eq!(vectors, std::fs::read(session.file("permutation_vectors.csv")).unwrap());
    assert_eq!(report, std::fs::read(session.file("permtest.json")).unwrap());
}
