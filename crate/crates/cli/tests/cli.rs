use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opsloop"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_to(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["run", "--config"])
        .arg(config(cfg))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

const ARTIFACTS: [&str; 7] = [
    "report.jsonl",
    "episodes.jsonl",
    "transitions.log",
    "kg.tsv",
    "episodic.jsonl",
    "rules.jsonl",
    "maintenance.jsonl",
];

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("dns_recurring.json", dir.path(), &["--episodes", "6"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ARTIFACTS {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    assert_eq!(
        report
            .lines()
            .filter(|l| l.contains("\"type\":\"episode\""))
            .count(),
        6
    );
    assert_eq!(
        report
            .lines()
            .filter(|l| l.contains("\"type\":\"summary\""))
            .count(),
        1
    );
    assert!(dir.path().join("contexts/ill_001.csv").is_file());
}

#[test]
fn same_config_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(run_to("mixed.json", d.path(), &["--episodes", "8"])
            .status
            .success());
    }
    for f in ARTIFACTS {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_override_changes_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(
        run_to("mixed.json", a.path(), &["--episodes", "3", "--seed", "1"])
            .status
            .success()
    );
    assert!(
        run_to("mixed.json", b.path(), &["--episodes", "3", "--seed", "2"])
            .status
            .success()
    );
    let ra = fs::read(a.path().join("episodes.jsonl")).unwrap();
    let rb = fs::read(b.path().join("episodes.jsonl")).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn replay_known_and_unknown_episode() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        run_to("dns_recurring.json", dir.path(), &["--episodes", "2"])
            .status
            .success()
    );
    let report = dir.path().join("report.jsonl");
    let ok = bin()
        .args(["replay", "--report"])
        .arg(&report)
        .args(["--episode", "inc-0002"])
        .output()
        .unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.starts_with("episode inc-0002"));
    assert!(text.contains("Idle --alert_raised--> Detecting"));
    assert!(text.trim_end().ends_with("final: Idle"), "{text}");

    let bad = bin()
        .args(["replay", "--report"])
        .arg(&report)
        .args(["--episode", "inc-9999"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("inc-9999"));
}

#[test]
fn escalated_transcript_names_reason() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_to("escalation.json", dir.path(), &[]).status.success());
    let out = bin()
        .args(["replay", "--report"])
        .arg(dir.path().join("report.jsonl"))
        .args(["--episode", "inc-0001"])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert_eq!(last, "final: Escalated (no applicable runbook)");
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "episodes": 2, "script": [{"kind": "dns_error_burst", "target": "nowhere"}]}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("opsloop: "));

    fs::write(&cfg, "not json").unwrap();
    assert_eq!(
        bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );

    let missing = bin()
        .args(["run", "--config", "/nonexistent/x.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("run").output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin().arg("frobnicate").output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn export_kg_reference_graph() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/kg.tsv");
    let out = bin()
        .args(["export-kg", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("# opsloop-kg v1"));
    assert!(text.contains("svc_d\tinstance_of\tService"));
    assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 4));
}

#[test]
fn export_kg_after_run_carries_rules() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kg.tsv");
    let cfg = dir.path().join("short.json");
    let base = fs::read_to_string(config("dns_recurring.json")).unwrap();
    assert!(base.contains("\"episodes\": 20"));
    fs::write(&cfg, base.replace("\"episodes\": 20", "\"episodes\": 10")).unwrap();
    let out = bin()
        .args(["export-kg", "--out"])
        .arg(&path)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&path).unwrap();
    assert!(
        text.lines().any(|l| l.ends_with("\till")),
        "no learned facts"
    );
}
