//! The `rischan` binary as a black box.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rischan"))
}

#[test]
fn missing_config_fails_with_diagnostic() {
    let out = bin()
        .args([
            "sweep",
            "--config",
            "/definitely/missing.toml",
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.toml"), "{err}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_from_config_file_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("snr.toml");
    let csv = dir.path().join("out/snr.csv");
    std::fs::write(
        &cfg,
        "preset = \"desk\"\nsweep = \"snr\"\nvalues = [0, 20]\ntrials = 2\nalgorithms = [\"dsmdt\", \"dsmdt_kpn\"]\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--quiet",
            "--out",
            csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[0].starts_with("schema_version,"));
    assert!(lines[1..].iter().all(|l| l.starts_with("1,snr,")));
}

#[test]
fn negative_sweep_values_accepted() {
    let out = bin()
        .args([
            "sweep", "--preset", "desk", "--sweep", "snr", "--values", "-5,-2", "--trials", "1",
            "--seed", "1", "--quiet",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
}

#[test]
fn selftest_passes() {
    let out = bin().args(["selftest", "--trials", "3"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 4);
}

#[test]
fn simulate_writes_report_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (report, dump) = (dir.path().join("r.json"), dir.path().join("d.jsonl"));
    let out = bin()
        .args([
            "simulate",
            "--preset",
            "desk",
            "--set",
            "snr_db=20",
            "--algo",
            "dsmdt",
            "--seed",
            "3",
        ])
        .args([
            "--out",
            report.to_str().unwrap(),
            "--dump",
            dump.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["config"]["snr_db"], 20.0);
    assert_eq!(std::fs::read_to_string(&dump).unwrap().lines().count(), 1);
}

#[test]
fn appendix_c_dumps_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "appendix-c",
            "--trials",
            "3",
            "--m",
            "8,16",
            "--counts",
            "2,3",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for m in [8, 16] {
        for l in [2, 3] {
            assert!(dir.path().join(format!("spectrum_m{m}_l{l}.txt")).exists());
        }
    }
}
