use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchprobe"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_eq_reports_verdicts() {
    let o = bin().args(["check-eq", "--lhs", "x1 == 0x303", "--rhs", "!(x1 ^ 771)", "--width", "16"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "equal");

    let o = bin().args(["check-eq", "--lhs", "x1 == 771", "--rhs", "x1 >= 771", "--width", "8", "--exhaustive"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "inequivalent");
    assert_eq!(v["method"], "exhaustive");
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(bin().arg("no-such-command").output().unwrap().status.code(), Some(1));
    let o = bin().args(["check-eq", "--lhs", "x1 ==", "--rhs", "x1"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"provider": {"temperature": 5.0}}"#).unwrap();
    let case = fixtures().join("corpus/tls_sigalg_patched");
    let o = bin().arg("run-case").arg("--case").arg(&case).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_case_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let case = fixtures().join("corpus/tls_sigalg_vulnerable");
    let o = bin()
        .args(["run-case", "--provider", "heuristic", "--case"])
        .arg(&case)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["verdict"]["value"], "vulnerable");
    assert_eq!(r["localization"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_case_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("meta.json"), r#"{"function_name": "f"}"#).unwrap();
    let o = bin().args(["run-case", "--provider", "heuristic", "--case"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_corpus_with_replay_prints_metrics() {
    let manifest = fixtures().join("corpus/manifest.json");
    let replay = fixtures().join("replay");
    let o = bin()
        .args(["run-corpus", "--provider", "replay", "--workers", "2", "--manifest"])
        .arg(&manifest)
        .arg("--replay-dir")
        .arg(&replay)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("tp=6 fp=0 fn=0 tn=6"), "{out}");
    assert!(out.contains("f1=1.000"));
}

#[test]
fn record_then_replay_gives_same_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixtures().join("corpus/put_entry_patched");
    let rec = bin().args(["record", "--provider", "heuristic", "--case"]).arg(&case).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(rec.status.code(), Some(0));
    let rep = bin().args(["run-case", "--provider", "replay", "--case"]).arg(&case).arg("--replay-dir").arg(dir.path()).output().unwrap();
    assert_eq!(rep.status.code(), Some(0));
    let verdict = |o: &Output| stdout(o).split(" (").next().unwrap().to_string();
    assert_eq!(verdict(&rec), verdict(&rep));
}
