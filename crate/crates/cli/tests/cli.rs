//! End-to-end tests of the `larope` binary: exit codes, file formats, and
//! determinism of the exported artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn larope(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larope"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn tiny_config(variant: &str, extra: &str) -> String {
    format!(
        r#"{{"variant": "{variant}", "seed": 3, "d_model": 8, "d": 4, "vocab": 4,
            "lk_range": [3, 5], "ratio_range": [2.0, 3.0], "steps": 20,
            "learning_rate": 0.05, "batch_size": 2, "noise_sigma": 0.05,
            "eval_interval": 5{extra}}}"#
    )
}

/// Parse "header\nrow,row,..." CSV into per-row string fields.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn freqs_prints_expected_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(&["freqs", "--d", "4"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("j,theta\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.01);
}

#[test]
fn freqs_d2_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(&["freqs", "--d", "2"], dir.path());
    assert!(out.status.success());
    assert_eq!(csv_rows(&stdout(&out)).len(), 1);
}

#[test]
fn freqs_rejects_odd_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(&["freqs", "--d", "3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("even"),
        "message names the constraint"
    );
}

#[test]
fn bounds_reduction_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    // gamma = L = 8 makes the two variants coincide.
    for (variant, name) in [("rope", "rope.csv"), ("larope", "larope.csv")] {
        let out = larope(
            &[
                "bounds",
                "--lq",
                "8",
                "--lk",
                "8",
                "--d",
                "8",
                "--gamma",
                "8",
                "--variant",
                variant,
                "--out",
                name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let rope = fs::read_to_string(dir.path().join("rope.csv")).unwrap();
    let larope_text = fs::read_to_string(dir.path().join("larope.csv")).unwrap();
    for (a, b) in csv_rows(&rope).iter().zip(csv_rows(&larope_text).iter()) {
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        let va: f64 = a[2].parse().unwrap();
        let vb: f64 = b[2].parse().unwrap();
        assert!((va - vb).abs() < 1e-12);
    }

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("larope.meta.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["variant"], "larope");
    assert_eq!(sidecar["sj_mode"], "partial-sum");
    assert!(sidecar["ridge_deviation"].as_f64().unwrap() <= 1.0 / 8.0);
}

#[test]
fn bounds_magnitudes_mode_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(
        &[
            "bounds",
            "--lq",
            "4",
            "--lk",
            "6",
            "--d",
            "8",
            "--sj-mode",
            "magnitudes",
            "--out",
            "flat.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("flat.csv")).unwrap();
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 24);
    for row in rows {
        assert_eq!(row[2].parse::<f64>().unwrap(), 10.0); // d/2 * (d/2+1) / 2
    }
}

#[test]
fn bounds_reproduces_diagonal_structure_at_reference_sizes() {
    // Defaults: d = 64, gamma = 10, partial-sum mode. The length-aware grid
    // stays within two cells of the rescaled diagonal on average; the
    // absolute-position grid misses it by at least 5x as much.
    let dir = tempfile::tempdir().unwrap();
    for (lq, lk) in [("64", "256"), ("256", "64")] {
        for variant in ["rope", "larope"] {
            let name = format!("{variant}_{lq}x{lk}.csv");
            let out = larope(
                &[
                    "bounds",
                    "--lq",
                    lq,
                    "--lk",
                    lk,
                    "--variant",
                    variant,
                    "--out",
                    &name,
                ],
                dir.path(),
            );
            assert!(out.status.success(), "{}", stderr(&out));
        }
        let ridge = |variant: &str| -> f64 {
            let sidecar: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(dir.path().join(format!("{variant}_{lq}x{lk}.meta.json")))
                    .unwrap(),
            )
            .unwrap();
            sidecar["ridge_deviation"].as_f64().unwrap()
        };
        let larope_dev = ridge("larope");
        let rope_dev = ridge("rope");
        let tolerance = 2.0 / lk.parse::<f64>().unwrap();
        assert!(
            larope_dev <= tolerance,
            "({lq},{lk}): {larope_dev} > {tolerance}"
        );
        assert!(
            rope_dev >= 5.0 * larope_dev,
            "({lq},{lk}): {rope_dev} vs {larope_dev}"
        );
    }
}

#[test]
fn bounds_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = larope(
            &["bounds", "--lq", "16", "--lk", "24", "--out", name],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "same flags must produce byte-identical files");
}

#[test]
fn bounds_unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(
        &[
            "bounds",
            "--lq",
            "4",
            "--lk",
            "4",
            "--out",
            "missing_dir/grid.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_writes_records_summary_and_model() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("larope", "")).unwrap();
    let out = larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let records = fs::read_to_string(dir.path().join("run/records.csv")).unwrap();
    assert!(records.starts_with("step,train_loss,eval_loss,eval_alignment_error\n"));
    assert_eq!(csv_rows(&records).len(), 4); // steps 5, 10, 15, 20

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["variant"], "larope");
    assert_eq!(summary["seed"], 3);
    assert!(summary["diverged_at_step"].is_null());
    assert!(summary["final_record"]["eval_alignment_error"].is_number());

    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/model.json")).unwrap())
            .unwrap();
    assert_eq!(model["config"]["variant"], "larope");
    assert_eq!(model["wq"]["rows"], 8);
    assert_eq!(model["wq"]["cols"], 4);
}

#[test]
fn train_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("rope", "")).unwrap();
    for run in ["one", "two"] {
        let out = larope(
            &["train", "--config", "cfg.json", "--out-dir", run],
            dir.path(),
        );
        assert!(out.status.success());
    }
    for file in ["records.csv", "summary.json", "model.json"] {
        let a = fs::read(dir.path().join("one").join(file)).unwrap();
        let b = fs::read(dir.path().join("two").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn train_with_zero_learning_rate_freezes_eval_columns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        tiny_config("larope", "").replace("\"learning_rate\": 0.05", "\"learning_rate\": 0.0"),
    )
    .unwrap();
    let out = larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path(),
    );
    assert!(out.status.success());
    let rows = csv_rows(&fs::read_to_string(dir.path().join("run/records.csv")).unwrap());
    for row in &rows {
        assert_eq!(row[2], rows[0][2], "eval_loss varies under lr=0");
        assert_eq!(row[3], rows[0][3], "eval_alignment_error varies under lr=0");
    }
}

#[test]
fn train_rejects_unknown_config_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        tiny_config("larope", r#", "learning_rat": 0.1"#),
    )
    .unwrap();
    let out = larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("learning_rat"),
        "error names the offending field: {}",
        stderr(&out)
    );
}

#[test]
fn train_rejects_bad_variant() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("sinusoidal", "")).unwrap();
    let out = larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        tiny_config("rope", "").replace("\"learning_rate\": 0.05", "\"learning_rate\": 1e12"),
    )
    .unwrap();
    let out = larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    // Records and summary still land for post-mortem; no checkpoint.
    assert!(dir.path().join("run/summary.json").exists());
    assert!(!dir.path().join("run/model.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    assert!(summary["diverged_at_step"].is_number());
}

#[test]
fn duration_factor_one_matches_final_eval() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("larope", "")).unwrap();
    assert!(larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path()
    )
    .status
    .success());

    let out = larope(
        &["duration", "--model", "run/model.json", "--factors", "1.0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&stdout(&out));
    assert_eq!(rows.len(), 1);
    let from_duration: f64 = rows[0][1].parse().unwrap();

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    let from_train = summary["final_record"]["eval_alignment_error"]
        .as_f64()
        .unwrap();
    assert!((from_duration - from_train).abs() < 1e-12);
}

#[test]
fn duration_default_factors_in_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("larope", "")).unwrap();
    assert!(larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path()
    )
    .status
    .success());
    let out = larope(
        &["duration", "--model", "run/model.json", "--out", "dur.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let rows = csv_rows(&fs::read_to_string(dir.path().join("dur.csv")).unwrap());
    let factors: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(factors, vec![0.7, 0.85, 1.0, 1.2, 1.4]);
}

#[test]
fn duration_degenerate_factor_warns_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), tiny_config("larope", "")).unwrap();
    assert!(larope(
        &["train", "--config", "cfg.json", "--out-dir", "run"],
        dir.path()
    )
    .status
    .success());
    let out = larope(
        &["duration", "--model", "run/model.json", "--factors", "1e-9"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(csv_rows(&stdout(&out)).len(), 0, "no data rows");
    assert!(stdout(&out).starts_with("factor,alignment_error\n"));
    assert!(stderr(&out).contains("skipped"));
}

#[test]
fn duration_without_model_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(&["duration", "--model", "nope/model.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not found"));
}

#[test]
fn check_passes_on_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(&["check", "--cases", "64"], dir.path());
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("properties run: 8, passed: 8"));
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() == 8);
    assert!(text.contains("max_err"), "reports max observed error");
}

#[test]
fn check_fault_injection_fails_and_names_property() {
    let dir = tempfile::tempdir().unwrap();
    let out = larope(
        &["check", "--cases", "64", "--inject-freq-fault"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL rope complex-form agreement"));
    assert!(stderr(&out).contains("complex-form agreement"));
}

#[test]
fn compare_reports_deltas() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("la.json"), tiny_config("larope", "")).unwrap();
    fs::write(dir.path().join("ro.json"), tiny_config("rope", "")).unwrap();
    for (cfg, run) in [("la.json", "la"), ("ro.json", "ro")] {
        assert!(
            larope(&["train", "--config", cfg, "--out-dir", run], dir.path())
                .status
                .success()
        );
    }
    let out = larope(
        &["compare", "ro/summary.json", "la/summary.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("variant=rope"));
    assert!(text.contains("variant=larope"));
    assert!(text.contains("delta (right - left)"));
}
