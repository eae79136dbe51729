//! The binary's subcommands and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wbanzkp"));
    c.env_remove("WBANZKP_TRACE_DIR");
    c
}

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_the_three_csv_files() {
    let out = tempfile::tempdir().unwrap();
    let o =
        bin().args(["--jobs", "2", "run"]).arg(repo("plans/smoke.ini")).arg("--out").arg(out.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_to_string(out.path().join("runs.csv")).unwrap();
    assert_eq!(
        runs.lines().next().unwrap(),
        "scheme,strategy,posture,rate_pps,seed,generated,received,ratio,avg_delay_ms,transmissions"
    );
    assert_eq!(runs.lines().count(), 1 + 3 * 3);
    let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(out.path().join("delay_by_source.csv").exists());
}

#[test]
fn seed_flag_replaces_the_plan_seed() {
    let out = tempfile::tempdir().unwrap();
    let o =
        bin().args(["--seed", "40", "run"]).arg(repo("plans/smoke.ini")).arg("--out").arg(out.path()).output().unwrap();
    assert!(o.status.success());
    let runs = std::fs::read_to_string(out.path().join("runs.csv")).unwrap();
    let seeds: Vec<&str> = runs.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(&seeds[..3], ["40", "41", "42"]);
}

#[test]
fn invalid_plan_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("bad.ini");
    std::fs::write(&plan, "[cell-defaults]\nrepetitions = 1\n").unwrap();
    let o = bin().arg("run").arg(&plan).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().arg("run").arg(dir.path().join("absent.ini")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_trace_exits_3() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .env("WBANZKP_TRACE_DIR", empty.path())
        .arg("run")
        .arg(repo("plans/smoke.ini"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn attacks_report_fourteen_rows() {
    let o = bin().arg("attacks").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 14);
    for r in &rows {
        let expect_success = r.starts_with("BANZKP,")
            && ["DataReplay", "RedundancyCrack", "SinkDDoS"].iter().any(|s| r.contains(&format!(",{s},")));
        let verdict = if expect_success { "AttackSucceeded" } else { "AttackBlocked" };
        assert!(r.contains(verdict), "{r}");
    }
}

#[test]
fn scheme_filter_limits_the_report() {
    let o = bin().args(["attacks", "--scheme", "BANZKP"]).output().unwrap();
    assert!(o.status.success(), "BANZKP weaknesses are expected, not regressions");
    assert_eq!(stdout(&o).lines().count(), 1 + 7);
}

#[test]
fn handshake_vectors_match_the_checked_in_files() {
    for (scheme, file) in [("BANZKP", "banzkp.hex"), ("BAN_GZKP", "ban_gzkp.hex")] {
        let o = bin().args(["handshake-vectors", "--scheme", scheme]).output().unwrap();
        assert!(o.status.success());
        let text = stdout(&o);
        let body = text.strip_prefix(&format!("# {scheme}\n")).unwrap();
        let expected = std::fs::read_to_string(repo("crates/core/tests/vectors").join(file)).unwrap();
        assert_eq!(body, expected);
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    assert!(bin().arg("--help").output().unwrap().status.success());
}
