#![cfg(unix)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use dispatchfuzz::campaign::run_serial;
use dispatchfuzz::{CampaignConfig, ExecOutcome, TargetHandle};

// Edge 0 always; edge 1 for a leading `A`; edge 2 for `AB`; hit count 5 on
// edge 3 for `AAAA`. `CR` crashes and `SL` hangs.
const HARNESS: &str = r#"#!/bin/sh
cov="$DISPATCHFUZZ_COVERAGE_FILE"
head -c "$DISPATCHFUZZ_MAP_SIZE" /dev/zero > "$cov"
mark() { printf "$2" | dd of="$cov" bs=1 seek="$1" conv=notrunc 2>/dev/null; }
mark 0 '\001'
c=$(head -c 4 "$1")
case "$c" in
    CR*) kill -SEGV $$ ;;
    SL*) sleep 5 ;;
esac
case "$c" in
    AB*) mark 1 '\001'; mark 2 '\001' ;;
    AAAA) mark 1 '\001'; mark 3 '\005' ;;
    A*) mark 1 '\001' ;;
esac
exit 0
"#;

fn harness(dir: &Path) -> PathBuf {
    let p = dir.join("harness.sh");
    fs::write(&p, HARNESS).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn target(dir: &Path) -> TargetHandle {
    let spec = format!("exec:{} @@", harness(dir).display());
    let t: TargetHandle = spec.parse().unwrap();
    let t = t.with_map_size(64).with_timeout_ms(300);
    t.validate().unwrap();
    t
}

#[test]
fn harness_coverage_is_read_and_bucketed() {
    let dir = tempfile::tempdir().unwrap();
    let t = target(dir.path());
    let r = t.execute(b"zz").unwrap();
    assert_eq!(r.outcome, ExecOutcome::Ok);
    assert_eq!(r.coverage.edges(), vec![0]);
    assert_eq!(t.execute(b"AB").unwrap().coverage.edges(), vec![0, 1, 2]);
    let r = t.execute(b"AAAA").unwrap();
    assert_eq!(r.coverage.edges(), vec![0, 1, 3]);
    // a raw count of 5 falls in the 4..=7 bucket
    assert_eq!(r.coverage.get(3), 8);
}

#[test]
fn signal_death_is_a_crash_and_timeout_a_hang() {
    let dir = tempfile::tempdir().unwrap();
    let t = target(dir.path());
    assert_eq!(t.execute(b"CRASH").unwrap().outcome, ExecOutcome::Crash);
    let r = t.execute(b"SLOW").unwrap();
    assert_eq!(r.outcome, ExecOutcome::Hang);
    assert!(r.exec_time_us >= 300_000);
}

#[test]
fn program_without_coverage_runs_blind() {
    let t: TargetHandle = "exec:cat @@".parse().unwrap();
    let t = t.with_map_size(64);
    t.validate().unwrap();
    let r = t.execute(b"hello").unwrap();
    assert_eq!(r.outcome, ExecOutcome::Ok);
    assert_eq!(r.coverage.count_edges(), 0);
}

#[test]
fn serial_campaign_on_external_program() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    fs::write(corpus.join("a"), b"Az").unwrap();
    let cfg = CampaignConfig {
        target: format!("exec:{} @@", harness(dir.path()).display()),
        corpus: vec![corpus],
        map_size: 64,
        timeout_ms: 300,
        budget_execs: Some(150),
        ..Default::default()
    };
    let r = run_serial(&cfg).unwrap();
    assert!(r.totals.total_execs >= 150);
    assert!(r.totals.paths >= 1);
}
