//! End-to-end tests of the command-line interface: smoke run, content-
//! addressed reuse, report/export consistency, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blochreach"))
}

fn write_smoke_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("smoke.toml");
    std::fs::write(
        &path,
        format!(
            r#"
kind = "rs"
anchor = [0.0, 0.0, 1.0]
T = [5.0]
M = 4
N_v = 4
N_n = 4
d_multipliers = [1.0, 0.1]
out_dir = "{}"

[optimizer]
budget = 2000
runs_per_method = 1
seed = 7
"#,
            dir.join("runs").display()
        ),
    )
    .unwrap();
    path
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn smoke_run_report_and_export_are_consistent() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = write_smoke_config(dir.path());
    let runs = dir.path().join("runs");

    let estimate = bin()
        .args(["estimate", "--config"])
        .arg(&config)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(estimate.status.success(), "{estimate:?}");
    let run_id = stdout_of(&estimate).trim().to_string();
    assert!(!run_id.is_empty());

    // Re-running the identical config reuses the run and prints the same id.
    let again = bin()
        .args(["estimate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(stdout_of(&again).trim(), run_id);
    assert!(String::from_utf8_lossy(&again.stderr).contains("reusing"));

    // CSV report parses back and exposes the member counts.
    let report = bin()
        .args(["report", "--run", &run_id, "--csv", "--out"])
        .arg(&runs)
        .output()
        .unwrap();
    assert!(report.status.success());
    let csv = stdout_of(&report);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let members_col = header.iter().position(|h| *h == "members").unwrap();
    let mut member_counts = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), header.len());
        member_counts.push(fields[members_col].parse::<usize>().unwrap());
        // Every numeric field round-trips through parse.
        for field in &fields {
            if !field.is_empty() {
                field.parse::<f64>().unwrap();
            }
        }
    }
    assert_eq!(member_counts.len(), 2);

    // Exported points match the reported member count and stay in the ball.
    for (stage, expected_members) in member_counts.iter().enumerate() {
        let export = bin()
            .args(["export-points", "--run", &run_id])
            .args(["--stage", &stage.to_string()])
            .arg("--out")
            .arg(&runs)
            .output()
            .unwrap();
        assert!(export.status.success());
        let path = stdout_of(&export).trim().to_string();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x1,x2,x3,best_value,is_anchor");
        let mut data_rows = 0;
        let mut anchor_rows = 0;
        for line in lines {
            let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
            assert_eq!(fields.len(), 5);
            let norm2 = fields[0] * fields[0] + fields[1] * fields[1] + fields[2] * fields[2];
            assert!(norm2 <= 1.0 + 1e-12);
            if fields[4] == 1.0 {
                anchor_rows += 1;
            } else {
                data_rows += 1;
            }
        }
        assert_eq!(anchor_rows, 1);
        assert_eq!(data_rows, *expected_members);
    }

    // The whole smoke contract (run + reports) stays well under a minute.
    assert!(started.elapsed().as_secs() < 60, "{:?}", started.elapsed());
}

#[test]
fn force_recomputes_and_seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_smoke_config(dir.path());

    let first = bin()
        .args(["estimate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let id1 = stdout_of(&first).trim().to_string();

    let forced = bin()
        .args(["estimate", "--force", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(forced.status.success());
    assert_eq!(stdout_of(&forced).trim(), id1);
    assert!(!String::from_utf8_lossy(&forced.stderr).contains("reusing"));

    let reseeded = bin()
        .args(["estimate", "--seed", "12345", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(reseeded.status.success());
    assert_ne!(stdout_of(&reseeded).trim(), id1);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Usage error: unknown subcommand.
    let usage = bin().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));

    // Validation error: config with an unknown key.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"rs\"\nanchor = [0,0,0]\nbogus = 1\n").unwrap();
    let invalid = bin()
        .args(["estimate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(invalid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("bogus"));

    // Validation error: unknown run id.
    let unknown = bin()
        .args(["report", "--run", "deadbeef", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    // Validation error: unknown stage of an existing run.
    let config = write_smoke_config(dir.path());
    let run = bin()
        .args(["estimate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let id = stdout_of(&run).trim().to_string();
    let bad_stage = bin()
        .args(["export-points", "--run", &id, "--stage", "99", "--out"])
        .arg(dir.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(bad_stage.status.code(), Some(2));

    // Help exits cleanly.
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}
