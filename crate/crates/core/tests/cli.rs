//! End-to-end tests of the `focalstage` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_focalstage"))
}

fn write_claims_csv(dir: &Path, rows: usize) -> PathBuf {
    let path = dir.join("claims.csv");
    let mut content = String::from("state,incident_type,age,amount,incident_date,label\n");
    let mut x = 7u64;
    let mut next = move || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (x >> 33) as f64 / (1u64 << 31) as f64
    };
    for i in 0..rows {
        let fraud = i % 5 == 0;
        content.push_str(&format!(
            "{},{},{},{:.2},2015-{:02}-{:02},{}\n",
            ["OH", "IN", "IL"][(next() * 3.0) as usize % 3],
            if fraud && next() > 0.4 { "theft" } else { "collision" },
            18 + ((next() * 50.0) as usize) + if fraud { 8 } else { 0 },
            1000.0 + next() * 8000.0 * if fraud { 1.7 } else { 1.0 },
            1 + (next() * 12.0) as usize % 12,
            1 + (next() * 28.0) as usize % 28,
            if fraud { "Y" } else { "N" }
        ));
    }
    std::fs::write(&path, content).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![reader
        .headers()
        .unwrap()
        .iter()
        .map(String::from)
        .collect::<Vec<_>>()];
    for record in reader.records() {
        rows.push(record.unwrap().iter().map(String::from).collect());
    }
    rows
}

#[test]
fn compare_emits_the_four_default_mean_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 150);
    let out = dir.path().join("out");
    let output = run(&[
        "compare",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--epochs",
        "6",
        "--folds",
        "3",
        "--hidden",
        "2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("metrics.csv"));
    assert_eq!(
        rows[0],
        vec!["schedule", "fold", "loss", "accuracy", "precision", "recall", "f1", "auc"]
    );
    let mean_rows: Vec<&str> = rows
        .iter()
        .skip(1)
        .filter(|r| r[1] == "mean")
        .map(|r| r[0].as_str())
        .collect();
    assert_eq!(
        mean_rows,
        vec!["Convex(γ=0)", "Multistage", "Nonconvex(γ=2)", "Nonconvex(γ=4)"]
    );
    // 3 fold rows + 1 mean row per schedule.
    assert_eq!(rows.len() - 1, 4 * 4);
    for slug in ["convex_g0", "multistage", "nonconvex_g2", "nonconvex_g4"] {
        let roc = read_csv_rows(&out.join(format!("roc_{slug}.csv")));
        assert_eq!(roc[0], vec!["fpr", "tpr"]);
        assert_eq!(roc[1], vec!["0.000000", "0.000000"]);
        assert_eq!(roc.last().unwrap(), &vec!["1.000000", "1.000000"]);
    }
}

#[test]
fn analyze_smallest_categorical_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    std::fs::write(
        &data,
        "color,label\nred,N\nblue,Y\nred,N\nblue,N\nred,Y\nblue,N\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = run(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("chi_square_matrix.csv"));
    assert_eq!(rows[0], vec!["color", "label"]);
    assert_eq!(rows.len(), 3); // header + 2 value rows
    assert_eq!(rows[1][0], "0.000000");
    assert_eq!(rows[1][1], rows[2][0]);
}

#[test]
fn train_epoch_log_switches_stage_at_11_and_51() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 120);
    let out = dir.path().join("out");
    let output = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--epochs",
        "100",
        "--lr",
        "0.001",
        "--hidden",
        "2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("epoch_log.csv"));
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[10][1], "convex:0"); // epoch 10
    assert_eq!(rows[11][1], "power:2"); // epoch 11
    assert_eq!(rows[50][1], "power:2"); // epoch 50
    assert_eq!(rows[51][1], "power:4"); // epoch 51
    for name in [
        "checkpoint_multistage_stage_1.json",
        "checkpoint_multistage_stage_2.json",
        "checkpoint_multistage_stage_3.json",
        "checkpoint_multistage_final.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn explain_and_report_consume_prior_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 120);
    let out = dir.path().join("out");
    let ok = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--epochs",
        "10",
        "--hidden",
        "2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(ok.status.success());
    let output = run(&[
        "explain",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--instances",
        "5",
        "--background-size",
        "10",
        "--per-instance",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("shap_summary.csv"));
    assert_eq!(rows[0][..2], ["feature_index".to_string(), "feature_name".to_string()]);
    assert_eq!(rows.len(), 1 + 5 + 1); // header + 5 features + evenness row
    assert_eq!(rows.last().unwrap()[0], "evenness");
    assert!(out.join("shap_instances_multistage_final.csv").exists());

    let report = run(&["report", "--out-dir", out.to_str().unwrap()]);
    assert!(report.status.success());
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("== training =="));
    assert!(text.contains("== attribution =="));
}

#[test]
fn explain_without_checkpoints_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 60);
    let out = dir.path().join("empty");
    let output = run(&[
        "explain",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("run train first"));
}

#[test]
fn unknown_command_exits_2() {
    let output = run(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["train", "--bogus-flag", "1"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run(&[
        "analyze",
        "--data",
        "/nonexistent/claims.csv",
        "--label",
        "label",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error:"));

    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "a,b\n1,2\n").unwrap();
    let output = run(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "missing_label",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("missing_label"));
}

#[test]
fn config_file_keys_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 100);
    let out = dir.path().join("out");

    let bad_config = dir.path().join("bad.conf");
    std::fs::write(&bad_config, "epochs = 5\nunknown_key = 3\n").unwrap();
    let output = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--config",
        bad_config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown_key"));

    // Config supplies epochs and stages; the flag overrides epochs.
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "epochs = 12\nhidden = 2\nstage = convex:0:1-4\nstage = power:2:5-12\n",
    )
    .unwrap();
    let output = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("epoch_log.csv"));
    assert_eq!(rows.len(), 13, "config epochs should apply");
    assert_eq!(rows[4][1], "convex:0");
    assert_eq!(rows[5][1], "power:2");

    let output = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "label",
        "--config",
        config.to_str().unwrap(),
        "--schedule",
        "nonconvex:2",
        "--epochs",
        "7",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_csv_rows(&out.join("epoch_log.csv"));
    assert_eq!(rows.len(), 8, "flag epochs should override config");
    assert!(rows[1..].iter().all(|r| r[1] == "power:2"));
}

#[test]
fn identical_invocations_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_claims_csv(dir.path(), 100);
    let run_once = |out: &Path| {
        let output = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--label",
            "label",
            "--epochs",
            "8",
            "--hidden",
            "3",
            "--seed",
            "99",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success());
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_once(&a);
    run_once(&b);
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let left = std::fs::read(a.join(&name)).unwrap();
        let right = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(left, right, "{name:?} differs");
    }
}
