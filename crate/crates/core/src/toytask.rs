//! Synthetic monotonic-alignment tasks and a deterministic training loop.
//!
//! Each task pairs a short sequence of token-like keys with a longer
//! sequence of content-free queries. The target for query row `m` is the
//! value embedding of the key on the monotonic ideal path
//! `ideal(m) = round(m * (L_k - 1) / (L_q - 1))`, plus optional noise.
//! Queries carry no content (one fixed vector repeated), so the only way a
//! model can hit its targets is to route attention along the ideal path —
//! which makes final attention placement a direct read-out of how well a
//! rotation variant supports alignment learning across varying lengths.
//!
//! Training is plain SGD on fresh tasks every step, fully determined by the
//! config: the run seed fixes the codebook, the parameter init, and the
//! task stream, and `seed + 1` fixes the held-out evaluation set.

use serde::{Deserialize, Serialize};

use crate::attention::{alignment_error, CrossAttentionLayer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::rotary::{EmbeddingSequence, RotaryConfig, Variant, DEFAULT_GAMMA};

/// Number of held-out tasks in every evaluation set.
pub const EVAL_TASK_COUNT: usize = 32;

/// The evaluation task stream is seeded with `cfg.seed + EVAL_SEED_OFFSET`.
pub const EVAL_SEED_OFFSET: u64 = 1;

/// Full specification of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Vocabulary size of the token codebook.
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    /// Inclusive range key lengths are drawn from.
    #[serde(default = "default_lk_range")]
    pub lk_range: (usize, usize),
    /// Range of the expansion ratio `r = L_q / L_k`.
    #[serde(default = "default_ratio_range")]
    pub ratio_range: (f64, f64),
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Fresh tasks per SGD step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Standard deviation of the additive target noise.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Evaluation records are emitted every this many steps.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_d_model() -> usize {
    32
}
fn default_d() -> usize {
    16
}
fn default_vocab() -> usize {
    16
}
fn default_lk_range() -> (usize, usize) {
    (8, 24)
}
fn default_ratio_range() -> (f64, f64) {
    (2.0, 4.0)
}
fn default_steps() -> usize {
    2000
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_batch_size() -> usize {
    4
}
fn default_noise_sigma() -> f64 {
    0.05
}
fn default_eval_interval() -> usize {
    50
}

impl TrainConfig {
    /// The documented default run for a given variant and seed.
    pub fn defaults(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            seed,
            gamma: default_gamma(),
            d_model: default_d_model(),
            d: default_d(),
            vocab: default_vocab(),
            lk_range: default_lk_range(),
            ratio_range: default_ratio_range(),
            steps: default_steps(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            noise_sigma: default_noise_sigma(),
            eval_interval: default_eval_interval(),
        }
    }

    pub fn rotary(&self) -> Result<RotaryConfig> {
        RotaryConfig::new(
            self.d,
            crate::rotary::DEFAULT_BASE,
            self.gamma,
            self.variant,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.rotary()?;
        if self.d_model == 0 {
            return Err(Error::InvalidConfig("d_model must be >= 1".into()));
        }
        if self.vocab == 0 {
            return Err(Error::InvalidConfig("vocab must be >= 1".into()));
        }
        if self.lk_range.0 < 2 || self.lk_range.0 > self.lk_range.1 {
            return Err(Error::InvalidConfig(format!(
                "lk_range must satisfy 2 <= lo <= hi, got {:?}",
                self.lk_range
            )));
        }
        if !self.ratio_range.0.is_finite()
            || self.ratio_range.0 <= 0.0
            || self.ratio_range.0 > self.ratio_range.1
        {
            return Err(Error::InvalidConfig(format!(
                "ratio_range must satisfy 0 < lo <= hi, got {:?}",
                self.ratio_range
            )));
        }
        if (self.ratio_range.0 * self.lk_range.0 as f64).round() < 2.0 {
            return Err(Error::InvalidConfig(
                "ranges allow query lengths < 2".into(),
            ));
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidConfig(
                "steps, batch_size and eval_interval must be >= 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fixed per-run lookup tables: one key and one value embedding per token,
/// plus the single content-free query vector repeated across positions.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub key_vectors: Matrix,
    pub value_vectors: Matrix,
    pub query_vector: Vec<f64>,
}

impl Codebook {
    /// Weight of the direction shared by every key embedding, relative to
    /// the unit-variance per-token component.
    const SHARED_KEY_WEIGHT: f64 = 2.0;

    pub fn generate(rng: &mut Rng, vocab: usize, d_model: usize) -> Self {
        // Key embeddings cluster around a strong shared direction, the way
        // learned token embeddings sit around a non-zero mean. The shared
        // component carries the positional score signal from step one, while
        // the per-token variation is what the value path retrieves.
        let shared = rng.normal_vec(d_model, 1.0);
        let mut key_vectors = rng.normal_matrix(vocab, d_model, 1.0);
        for r in 0..vocab {
            for (c, s) in shared.iter().enumerate() {
                key_vectors[(r, c)] += Self::SHARED_KEY_WEIGHT * s;
            }
        }
        Self {
            key_vectors,
            value_vectors: rng.normal_matrix(vocab, d_model, 1.0),
            query_vector: rng.normal_vec(d_model, 1.0),
        }
    }
}

/// One synthetic alignment instance.
#[derive(Debug, Clone)]
pub struct ToyAlignTask {
    pub key_ids: Vec<usize>,
    pub key_embeddings: EmbeddingSequence,
    pub query_inputs: EmbeddingSequence,
    pub targets: Matrix,
    /// Ideal key index per query row.
    pub ideal: Vec<usize>,
}

/// Monotonic path mapping query row `m` to `round(m * (lk-1) / (lq-1))`.
/// Requires `lq >= 2`.
pub fn ideal_path(lq: usize, lk: usize) -> Vec<usize> {
    let slope = (lk as f64 - 1.0) / (lq as f64 - 1.0);
    (0..lq)
        .map(|m| (m as f64 * slope).round() as usize)
        .collect()
}

fn repeated_rows(vector: &[f64], rows: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * vector.len());
    for _ in 0..rows {
        data.extend_from_slice(vector);
    }
    Matrix::from_vec(rows, vector.len(), data).expect("sized by construction")
}

/// Draw one task: key length, expansion ratio, token ids, and target noise
/// all come from `rng`, in that order; the codebook stays fixed.
pub fn generate_task(
    rng: &mut Rng,
    codebook: &Codebook,
    cfg: &TrainConfig,
) -> Result<ToyAlignTask> {
    cfg.validate()?;
    let lk = rng.uniform_usize(cfg.lk_range.0, cfg.lk_range.1);
    let ratio = if cfg.ratio_range.0 == cfg.ratio_range.1 {
        cfg.ratio_range.0
    } else {
        rng.uniform(cfg.ratio_range.0, cfg.ratio_range.1)
    };
    let lq = ((ratio * lk as f64).round() as usize).max(2);

    let key_ids: Vec<usize> = (0..lk)
        .map(|_| rng.uniform_usize(0, cfg.vocab - 1))
        .collect();
    let mut key_embeddings = Matrix::zeros(lk, cfg.d_model);
    for (n, &id) in key_ids.iter().enumerate() {
        key_embeddings.set_row(n, codebook.key_vectors.row(id))?;
    }

    let ideal = ideal_path(lq, lk);
    let mut targets = Matrix::zeros(lq, cfg.d_model);
    for (m, &n) in ideal.iter().enumerate() {
        targets.set_row(m, codebook.value_vectors.row(key_ids[n]))?;
    }
    if cfg.noise_sigma > 0.0 {
        for m in 0..lq {
            for c in 0..cfg.d_model {
                targets[(m, c)] += rng.normal(cfg.noise_sigma);
            }
        }
    }

    Ok(ToyAlignTask {
        key_ids,
        key_embeddings: EmbeddingSequence::new(key_embeddings)?,
        query_inputs: EmbeddingSequence::new(repeated_rows(&codebook.query_vector, lq))?,
        targets,
        ideal,
    })
}

/// Mean squared error over all entries and its gradient w.r.t. `output`.
pub fn mse_and_grad(output: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if output.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: output.shape(),
            right: targets.shape(),
        });
    }
    let n = (output.rows() * output.cols()) as f64;
    let diff = output.sub(targets)?;
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Loss and alignment error averaged over a task set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub alignment_error: f64,
}

/// Run the layer over every task and average MSE and alignment error.
pub fn evaluate(layer: &CrossAttentionLayer, tasks: &[ToyAlignTask]) -> Result<EvalMetrics> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let mut loss = 0.0;
    let mut align = 0.0;
    for task in tasks {
        let cache = layer.forward_cached(&task.query_inputs, &task.key_embeddings)?;
        let (task_loss, _) = mse_and_grad(&cache.output, &task.targets)?;
        loss += task_loss;
        align += alignment_error(&cache.map.post_softmax, |m| task.ideal[m]);
    }
    let count = tasks.len() as f64;
    Ok(EvalMetrics {
        loss: loss / count,
        alignment_error: align / count,
    })
}

/// Task set drawn from its own seed while reusing the run codebook.
/// `lk_range` overrides the config's range so out-of-range lengths can be
/// probed with the same machinery.
pub fn task_set(
    codebook: &Codebook,
    cfg: &TrainConfig,
    seed: u64,
    lk_range: (usize, usize),
    count: usize,
) -> Result<Vec<ToyAlignTask>> {
    let sample_cfg = TrainConfig {
        lk_range,
        ..cfg.clone()
    };
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| generate_task(&mut rng, codebook, &sample_cfg))
        .collect()
}

/// The held-out evaluation set for a run.
pub fn eval_task_set(codebook: &Codebook, cfg: &TrainConfig) -> Result<Vec<ToyAlignTask>> {
    task_set(
        codebook,
        cfg,
        cfg.seed + EVAL_SEED_OFFSET,
        cfg.lk_range,
        EVAL_TASK_COUNT,
    )
}

/// Metrics recorded at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_alignment_error: f64,
}

/// Everything a finished (or aborted) run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub records: Vec<TrainRecord>,
    pub layer: CrossAttentionLayer,
    pub codebook: Codebook,
    pub eval_tasks: Vec<ToyAlignTask>,
    /// Step at which the loss or the parameters went non-finite, if any.
    pub diverged: Option<usize>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Plain-SGD training on fresh tasks, recording evaluation metrics every
/// `eval_interval` steps and at the final step. Fully deterministic given
/// the config.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rot = cfg.rotary()?;
    let mut rng = Rng::new(cfg.seed);
    let codebook = Codebook::generate(&mut rng, cfg.vocab, cfg.d_model);
    let mut layer = CrossAttentionLayer::init(cfg.d_model, rot, &mut rng);
    let eval_tasks = eval_task_set(&codebook, cfg)?;

    let mut records = Vec::new();
    let mut diverged = None;

    'steps: for step in 1..=cfg.steps {
        let mut grad_wq = Matrix::zeros(cfg.d_model, cfg.d);
        let mut grad_wk = Matrix::zeros(cfg.d_model, cfg.d);
        let mut grad_wv = Matrix::zeros(cfg.d_model, cfg.d);
        let mut grad_wo = Matrix::zeros(cfg.d, cfg.d_model);
        let mut batch_loss = 0.0;

        for _ in 0..cfg.batch_size {
            let task = generate_task(&mut rng, &codebook, cfg)?;
            let cache = layer.forward_cached(&task.query_inputs, &task.key_embeddings)?;
            let (loss, grad_out) = mse_and_grad(&cache.output, &task.targets)?;
            batch_loss += loss;
            let grads = layer.backward(&cache, &grad_out)?;
            grad_wq.add_scaled(&grads.wq, 1.0)?;
            grad_wk.add_scaled(&grads.wk, 1.0)?;
            grad_wv.add_scaled(&grads.wv, 1.0)?;
            grad_wo.add_scaled(&grads.wo, 1.0)?;
        }
        batch_loss /= cfg.batch_size as f64;
        if !batch_loss.is_finite() {
            diverged = Some(step);
            break 'steps;
        }

        let scale = -cfg.learning_rate / cfg.batch_size as f64;
        layer.wq.add_scaled(&grad_wq, scale)?;
        layer.wk.add_scaled(&grad_wk, scale)?;
        layer.wv.add_scaled(&grad_wv, scale)?;
        layer.wo.add_scaled(&grad_wo, scale)?;
        if !(layer.wq.is_finite()
            && layer.wk.is_finite()
            && layer.wv.is_finite()
            && layer.wo.is_finite())
        {
            diverged = Some(step);
            break 'steps;
        }

        if step.is_multiple_of(cfg.eval_interval) || step == cfg.steps {
            let metrics = evaluate(&layer, &eval_tasks)?;
            records.push(TrainRecord {
                step,
                train_loss: batch_loss,
                eval_loss: metrics.loss,
                eval_alignment_error: metrics.alignment_error,
            });
        }
    }

    Ok(TrainOutcome {
        config: cfg.clone(),
        records,
        layer,
        codebook,
        eval_tasks,
        diverged,
    })
}

/// Alignment error after rescaling the query length of every task by one
/// factor. Tasks whose rescaled length would drop below 2 are skipped and
/// counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorEvaluation {
    pub factor: f64,
    /// `None` when every task was skipped.
    pub alignment_error: Option<f64>,
    pub skipped_tasks: usize,
}

/// Evaluate a trained layer under query-length rescaling. For each factor
/// `f`, every task is rebuilt with `L_q' = round(f * L_q)` (queries are the
/// task's repeated content-free vector) and the ideal path recomputed for
/// the new length.
pub fn eval_duration_scaling(
    layer: &CrossAttentionLayer,
    tasks: &[ToyAlignTask],
    factors: &[f64],
) -> Result<Vec<FactorEvaluation>> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("eval_duration_scaling"));
    }
    for &f in factors {
        if !f.is_finite() || f <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "duration factors must be positive and finite, got {f}"
            )));
        }
    }

    let mut out = Vec::with_capacity(factors.len());
    for &factor in factors {
        let mut total = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for task in tasks {
            let lq = task.query_inputs.len();
            let scaled_lq = (factor * lq as f64).round() as usize;
            if scaled_lq < 2 {
                skipped += 1;
                continue;
            }
            let queries =
                EmbeddingSequence::new(repeated_rows(task.query_inputs.row(0), scaled_lq))?;
            let (_, map) = layer.forward(&queries, &task.key_embeddings)?;
            let ideal = ideal_path(scaled_lq, task.key_embeddings.len());
            total += alignment_error(&map.post_softmax, |m| ideal[m]);
            used += 1;
        }
        out.push(FactorEvaluation {
            factor,
            alignment_error: (used > 0).then(|| total / used as f64),
            skipped_tasks: skipped,
        });
    }
    Ok(out)
}

/// Parameter dump of a trained model together with its config — everything
/// needed to rebuild the layer and its evaluation sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl ModelCheckpoint {
    pub fn from_outcome(outcome: &TrainOutcome) -> Self {
        Self {
            config: outcome.config.clone(),
            wq: outcome.layer.wq.clone(),
            wk: outcome.layer.wk.clone(),
            wv: outcome.layer.wv.clone(),
            wo: outcome.layer.wo.clone(),
        }
    }

    /// Rebuild the layer and the held-out evaluation set it was scored on.
    pub fn restore(&self) -> Result<(CrossAttentionLayer, Vec<ToyAlignTask>)> {
        self.config.validate()?;
        let expected_proj = (self.config.d_model, self.config.d);
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if w.shape() != expected_proj {
                return Err(Error::ShapeMismatch {
                    op: name,
                    left: w.shape(),
                    right: expected_proj,
                });
            }
        }
        if self.wo.shape() != (self.config.d, self.config.d_model) {
            return Err(Error::ShapeMismatch {
                op: "wo",
                left: self.wo.shape(),
                right: (self.config.d, self.config.d_model),
            });
        }
        let layer = CrossAttentionLayer {
            d_model: self.config.d_model,
            cfg: self.config.rotary()?,
            wq: self.wq.clone(),
            wk: self.wk.clone(),
            wv: self.wv.clone(),
            wo: self.wo.clone(),
        };
        let mut rng = Rng::new(self.config.seed);
        let codebook = Codebook::generate(&mut rng, self.config.vocab, self.config.d_model);
        let eval_tasks = eval_task_set(&codebook, &self.config)?;
        Ok((layer, eval_tasks))
    }
}
