//! End-to-end tests of the `fkb` binary: exit codes, file outputs, and
//! schema stability of everything it emits.

use std::path::Path;
use std::process::Output;

use fkb_core::engine::RunReport;

fn fkb(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_fkb"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("fkb binary runs")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "clients": 4,
  "participation": 0.5,
  "rounds": 2,
  "alpha": 1.0,
  "seeds": [0],
  "dataset": { "synthetic": { "classes": 3, "dim": 4, "per_class": 30, "spread": 0.4 } },
  "model": { "preset": "kan-1", "grid_size": 3 },
  "local": { "algorithm": "fedavg", "epochs": 1, "batch_size": 8 }
}
"#,
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = fkb(dir.path(), &["run", "no-such-config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no-such-config.json"), "stderr: {stderr}");
}

#[test]
fn zero_epochs_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = fkb(
        dir.path(),
        &["run", config.to_str().unwrap(), "--local.epochs=0"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"clients": 4, "dataset": {"synthetic": {"classes": 3, "dim": 4, "per_class": 30}},
            "model": {"preset": "kan-1"}, "learning_rate_typo": 0.1}"#,
    )
    .unwrap();
    let out = fkb(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate_typo"), "stderr: {stderr}");
}

#[test]
fn unknown_override_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = fkb(
        dir.path(),
        &["run", config.to_str().unwrap(), "--local.epocsh=3"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn valid_run_writes_cross_validating_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = fkb(
        dir.path(),
        &["run", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let json = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let report: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report.schema, "fkb-report/1");
    // the CSV regenerated from the JSON must match the emitted CSV
    assert_eq!(report.to_csv(), csv);
    // config echo keeps the pinned defaults visible
    assert_eq!(report.config.local.learning_rate, 0.05);
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.runs[0].rounds.len(), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = fkb(dir.path(), &["gradcheck", "--preset", "kan-d3", "--grid", "5"]);
    assert_eq!(ok.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("max rel err"), "stdout: {stdout}");

    let mlp = fkb(dir.path(), &["gradcheck", "--preset", "mlp-3"]);
    assert_eq!(mlp.status.code(), Some(0));

    let bad = fkb(dir.path(), &["gradcheck", "--preset", "kan-1", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("layer0.weight"), "missing per-layer table: {stdout}");

    let unknown = fkb(dir.path(), &["gradcheck", "--preset", "kan-9"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn partition_stats_histogram_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    let out = fkb(
        dir.path(),
        &[
            "partition-stats",
            "--classes", "3", "--dim", "4", "--per-class", "40",
            "--clients", "10", "--alpha", "1.0", "--seed", "1",
            "--out", hist.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&hist).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "client,class_0,class_1,class_2");
    assert_eq!(lines.len(), 11); // header + one row per client

    // single client holds the global distribution exactly
    let single = fkb(
        dir.path(),
        &["partition-stats", "--classes", "3", "--dim", "4", "--per-class", "40", "--clients", "1"],
    );
    assert_eq!(single.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&single.stdout);
    assert!(stdout.contains("heterogeneity score: 0"), "stdout: {stdout}");

    // infeasible floor: 12 samples cannot give 10 clients 2 each
    let infeasible = fkb(
        dir.path(),
        &["partition-stats", "--classes", "3", "--dim", "4", "--per-class", "4", "--clients", "10"],
    );
    assert_eq!(infeasible.status.code(), Some(3));
}

#[test]
fn export_roundtrips_through_run_and_partition_stats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.fkb");
    let out = fkb(
        dir.path(),
        &[
            "export", "--classes", "3", "--dim", "4", "--per-class", "30",
            "--seed", "7", "--out", data.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(data.exists());

    let stats = fkb(
        dir.path(),
        &["partition-stats", "--data", data.to_str().unwrap(), "--clients", "5"],
    );
    assert_eq!(stats.status.code(), Some(0));

    // drive a run off the exported file
    let config = dir.path().join("fkb-config.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
  "clients": 4, "participation": 0.5, "rounds": 1, "seeds": [0],
  "dataset": {{ "fkb": {{ "path": "{}" }} }},
  "model": {{ "preset": "mlp-1" }},
  "local": {{ "epochs": 1, "batch_size": 8 }}
}}"#,
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let run_out = dir.path().join("fkb-out");
    let run = fkb(
        dir.path(),
        &["run", config.to_str().unwrap(), "--out", run_out.to_str().unwrap()],
    );
    assert_eq!(run.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(run_out.join("report.json").exists());
}

#[test]
fn report_validates_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    for (out_name, seed) in [("a", "[0]"), ("b", "[1]")] {
        let out = fkb(
            dir.path(),
            &[
                "run",
                config.to_str().unwrap(),
                "--out",
                dir.path().join(out_name).to_str().unwrap(),
                &format!("--seeds={seed}"),
            ],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let a = dir.path().join("a/report.csv");
    let b = dir.path().join("b/report.csv");
    let merged_path = dir.path().join("merged.csv");
    let merged = fkb(
        dir.path(),
        &[
            "report",
            a.to_str().unwrap(),
            b.to_str().unwrap(),
            "--out",
            merged_path.to_str().unwrap(),
        ],
    );
    assert_eq!(merged.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&merged.stderr));
    let text = std::fs::read_to_string(&merged_path).unwrap();
    // 2 rounds from each single-seed run plus the header
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("seed,round,algorithm,model,alpha,grid,accuracy,loss\n"));

    // an alien header is rejected
    let alien = dir.path().join("alien.csv");
    std::fs::write(&alien, "foo,bar\n1,2\n").unwrap();
    let bad = fkb(dir.path(), &["report", alien.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn sweep_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    let out_dir = dir.path().join("grid");
    std::fs::write(
        &spec,
        format!(
            r#"{{
  "output_dir": "{}",
  "base": {{
    "clients": 4, "participation": 0.5, "rounds": 2, "seeds": [0],
    "dataset": {{ "synthetic": {{ "classes": 3, "dim": 4, "per_class": 30, "spread": 0.4 }} }},
    "model": {{ "preset": "kan-1", "grid_size": 3 }},
    "local": {{ "epochs": 1, "batch_size": 8 }}
  }},
  "axes": {{ "algorithm": ["fedavg", "fedsam"] }}
}}"#,
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = fkb(dir.path(), &["sweep", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out_dir.join("fedavg_kan-1_a1_g3/report.json").exists());
    assert!(out_dir.join("fedsam_kan-1_a1_g3/report.json").exists());

    let unknown_preset = fkb(dir.path(), &["sweep", "--preset", "fig9", "--out", "x"]);
    assert_eq!(unknown_preset.status.code(), Some(2));
}
