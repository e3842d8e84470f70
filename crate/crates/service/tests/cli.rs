mod common;

use std::path::Path;
use std::process::{Command, Output};

use inciplan::ingest::feeds::SPEEDS_FILE;
use inciplan_service::pipeline::{EVALUATION_JSON, EVALUATION_TEXT, EVENTS_FILE, REPORT_FILE};

fn inciplan(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_inciplan"));
    cmd.args(args).env_remove("INCIPLAN_CONFIG").env("RUST_LOG", "warn");
    if let Some(c) = config {
        cmd.env("INCIPLAN_CONFIG", c);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_lists_usage() {
    let out = inciplan(&["evaluate", "--help"], None);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    let top = inciplan(&["--help"], None);
    let text = String::from_utf8_lossy(&top.stdout);
    for verb in ["scenario", "ingest", "train-predictor", "train-associator", "replay", "evaluate", "serve"] {
        assert!(text.contains(verb), "{verb} missing from:\n{text}");
    }
}

#[test]
fn unknown_verb_fails_with_usage() {
    let out = inciplan(&["frobnicate"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_feeds_fail_with_the_path_on_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path());
    let path = dir.path().join("inciplan.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let out = inciplan(&["train-predictor", "--config", path.to_str().unwrap()], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("error:")).expect("no error line");
    assert!(line.contains(&cfg.paths.feeds.display().to_string()), "{err}");
}

#[test]
fn malformed_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[service]\nstep_interval = 3\n").unwrap();
    let out = inciplan(&["ingest"], Some(&path));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step_interval"));
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = common::workspace(dir.path());
    let config = Some(path.as_path());
    ok(&inciplan(&["scenario", "generate"], config));
    assert!(cfg.paths.plans.exists() && cfg.paths.engagements.exists());
    ok(&inciplan(&["ingest"], config));
    assert!(cfg.paths.frames.join("frames.jsonl").exists());
    ok(&inciplan(&["train-predictor"], config));
    assert!(cfg.paths.predictor_checkpoint().exists());
    ok(&inciplan(&["train-associator"], config));
    assert!(cfg.paths.rank_model().exists());

    let events = cfg.paths.reports.join(EVENTS_FILE);
    let report = cfg.paths.reports.join(REPORT_FILE);
    ok(&inciplan(&["replay", "--seed", "7"], config));
    let first = (std::fs::read(&events).unwrap(), std::fs::read(&report).unwrap());
    ok(&inciplan(&["scenario", "replay", "--seed", "7"], config));
    let second = (std::fs::read(&events).unwrap(), std::fs::read(&report).unwrap());
    assert!(first == second, "replay is not deterministic");

    let out = inciplan(&["evaluate"], config);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("RMSE"));
    assert!(cfg.paths.reports.join(EVALUATION_TEXT).exists());
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.paths.reports.join(EVALUATION_JSON)).unwrap()).unwrap();
    assert!(json["horizon"].is_object() || json["horizon"].is_array());
    assert!(json.get("leave_one_out").is_some());
}

#[test]
fn explicit_config_flag_matches_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = common::workspace(dir.path());
    ok(&inciplan(&["scenario", "generate", "--config", path.to_str().unwrap()], None));
    let via_flag = std::fs::read(cfg.paths.feeds.join(SPEEDS_FILE)).unwrap();
    std::fs::remove_dir_all(&cfg.paths.feeds).unwrap();
    ok(&inciplan(&["scenario", "generate"], Some(&path)));
    let via_env = std::fs::read(cfg.paths.feeds.join(SPEEDS_FILE)).unwrap();
    assert_eq!(via_flag, via_env);
}

