//! Subcommand implementations and file formats.
//!
//! Every numeric CSV field is written with 17 significant decimal digits so
//! values round-trip through text exactly; rows end in LF.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use larope_core::{
    bound_grid, eval_duration_scaling, frequencies, ridge_deviation, train as train_run,
    ModelCheckpoint, RotaryConfig, SjMode, TrainConfig, TrainRecord, Variant, DEFAULT_GAMMA,
};

use crate::CliError;

/// 17 significant digits: enough to reproduce any finite f64 exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(path) => fs::write(path, contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{contents}");
            std::io::stdout()
                .flush()
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
    }
}

pub fn freqs(d: usize, base: f64, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = RotaryConfig::new(d, base, DEFAULT_GAMMA, Variant::Rope)?;
    let mut csv = String::from("j,theta\n");
    for (j, theta) in frequencies(&cfg).iter().enumerate() {
        csv.push_str(&format!("{j},{}\n", fmt_f64(*theta)));
    }
    write_output(out, &csv)
}

/// Ridge statistics written next to every bounds CSV.
#[derive(Serialize)]
struct BoundsSidecar {
    lq: usize,
    lk: usize,
    d: usize,
    base: f64,
    gamma: f64,
    variant: Variant,
    sj_mode: SjMode,
    ridge_deviation: f64,
}

fn sidecar_path(out: &Path) -> std::path::PathBuf {
    out.with_extension("meta.json")
}

#[allow(clippy::too_many_arguments)]
pub fn bounds(
    lq: usize,
    lk: usize,
    variant: Variant,
    d: usize,
    base: f64,
    gamma: f64,
    sj_mode: SjMode,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RotaryConfig::new(d, base, gamma, variant)?;
    let grid = bound_grid(lq, lk, &cfg, sj_mode)?;

    let mut csv = String::from("m,n,value\n");
    for m in 0..lq {
        for n in 0..lk {
            csv.push_str(&format!("{m},{n},{}\n", fmt_f64(grid.values()[(m, n)])));
        }
    }
    write_output(Some(out), &csv)?;

    let sidecar = BoundsSidecar {
        lq,
        lk,
        d,
        base,
        gamma,
        variant,
        sj_mode,
        ridge_deviation: ridge_deviation(&grid),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("static structure");
    write_output(Some(&sidecar_path(out)), &(json + "\n"))
}

/// Final metrics and provenance of one training run.
#[derive(Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    /// Step at which training aborted on non-finite values, if any.
    pub diverged_at_step: Option<usize>,
    pub final_record: Option<TrainRecord>,
    pub config: TrainConfig,
}

fn records_csv(records: &[TrainRecord]) -> String {
    let mut csv = String::from("step,train_loss,eval_loss,eval_alignment_error\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            fmt_f64(r.train_loss),
            fmt_f64(r.eval_loss),
            fmt_f64(r.eval_alignment_error)
        ));
    }
    csv
}

pub fn train(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let raw = fs::read_to_string(config_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg: TrainConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::Usage(format!("invalid train config: {e}")))?;
    cfg.validate()?;

    let outcome = train_run(&cfg)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    write_output(
        Some(&out_dir.join("records.csv")),
        &records_csv(&outcome.records),
    )?;

    let summary = TrainSummary {
        variant: cfg.variant,
        seed: cfg.seed,
        steps: cfg.steps,
        diverged_at_step: outcome.diverged,
        final_record: outcome.final_record().copied(),
        config: cfg.clone(),
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("static structure");
    write_output(Some(&out_dir.join("summary.json")), &(summary_json + "\n"))?;

    if let Some(step) = outcome.diverged {
        eprintln!(
            "warning: run diverged at step {step}; records and summary written, no checkpoint"
        );
        return Err(CliError::Divergence { step });
    }

    let checkpoint = ModelCheckpoint::from_outcome(&outcome);
    let model_json = serde_json::to_string(&checkpoint).expect("static structure");
    write_output(Some(&out_dir.join("model.json")), &(model_json + "\n"))?;

    let last = outcome
        .final_record()
        .expect("non-divergent run has records");
    println!(
        "trained {} seed {} for {} steps: eval_loss {:.6}, eval_alignment_error {:.6}",
        cfg.variant, cfg.seed, cfg.steps, last.eval_loss, last.eval_alignment_error
    );
    Ok(())
}

pub fn duration(model_path: &Path, factors: &[f64], out: Option<&Path>) -> Result<(), CliError> {
    if !model_path.exists() {
        return Err(CliError::Usage(format!(
            "model checkpoint not found: {} (run `larope train` first)",
            model_path.display()
        )));
    }
    let raw = fs::read_to_string(model_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", model_path.display())))?;
    let checkpoint: ModelCheckpoint = serde_json::from_str(&raw)
        .map_err(|e| CliError::Usage(format!("invalid model checkpoint: {e}")))?;
    let (layer, eval_tasks) = checkpoint.restore()?;

    let evaluations = eval_duration_scaling(&layer, &eval_tasks, factors)?;
    let mut csv = String::from("factor,alignment_error\n");
    for eval in &evaluations {
        match eval.alignment_error {
            Some(err) => {
                csv.push_str(&format!("{},{}\n", fmt_f64(eval.factor), fmt_f64(err)));
                if eval.skipped_tasks > 0 {
                    eprintln!(
                        "warning: factor {}: skipped {} task(s) with rescaled query length < 2",
                        eval.factor, eval.skipped_tasks
                    );
                }
            }
            None => eprintln!(
                "warning: factor {}: all {} task(s) skipped (rescaled query length < 2); row omitted",
                eval.factor, eval.skipped_tasks
            ),
        }
    }
    write_output(out, &csv)
}

pub fn compare(left_path: &Path, right_path: &Path) -> Result<(), CliError> {
    let load = |path: &Path| -> Result<TrainSummary, CliError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Usage(format!("invalid summary {}: {e}", path.display())))
    };
    let left = load(left_path)?;
    let right = load(right_path)?;

    let describe = |label: &str, s: &TrainSummary| match (&s.final_record, s.diverged_at_step) {
        (_, Some(step)) => println!(
            "{label}: variant={} seed={} DIVERGED at step {step}",
            s.variant, s.seed
        ),
        (Some(rec), None) => println!(
            "{label}: variant={} seed={} steps={} eval_loss={:.6} eval_alignment_error={:.6}",
            s.variant, s.seed, s.steps, rec.eval_loss, rec.eval_alignment_error
        ),
        (None, None) => println!(
            "{label}: variant={} seed={} (no records)",
            s.variant, s.seed
        ),
    };
    describe("left ", &left);
    describe("right", &right);

    if let (Some(l), Some(r)) = (&left.final_record, &right.final_record) {
        println!(
            "delta (right - left): eval_loss={:+.6} eval_alignment_error={:+.6}",
            r.eval_loss - l.eval_loss,
            r.eval_alignment_error - l.eval_alignment_error
        );
    }
    Ok(())
}
