//! Rotation-based positional encodings for cross-attention, the relative
//! upper-bound analysis of their score structure, and a desk-scale synthetic
//! harness that trains a single cross-attention layer to learn monotonic
//! alignments.
//!
//! The crate is organized around six pieces:
//!
//! * [`matrix`], [`rng`], [`gradcheck`] — the numeric substrate: dense `f64`
//!   matrices, a portable seeded generator, and central-difference gradient
//!   checking.
//! * [`rotary`] — the absolute-position and length-aware rotation operators
//!   plus their closed-form inner products.
//! * [`bound`] — relative upper-bound grids over `(m, n)` and the ridge
//!   deviation statistic that quantifies their diagonal structure.
//! * [`attention`] — a single cross-attention layer with a manually derived
//!   backward pass, score-map extraction, and map averaging.
//! * [`toytask`] — synthetic monotonic alignment tasks, the deterministic
//!   training loop, and duration-rescaling evaluation.

pub mod attention;
pub mod bound;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod rng;
pub mod rotary;
pub mod toytask;

pub use attention::{
    alignment_error, average_maps, AttentionScoreMap, CrossAttentionLayer, ForwardCache, Gradients,
};
pub use bound::{bound_grid, relative_bound, ridge_deviation, BoundGrid, SjMode};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use rng::Rng;
pub use rotary::{
    apply_to_sequence, frequencies, position_angles, rotate_larope, rotate_rope,
    score_complex_larope, score_complex_rope, EmbeddingSequence, RotaryConfig, Variant,
    DEFAULT_BASE, DEFAULT_GAMMA,
};
pub use toytask::{
    eval_duration_scaling, eval_task_set, evaluate, generate_task, ideal_path, mse_and_grad,
    task_set, train, Codebook, EvalMetrics, FactorEvaluation, ModelCheckpoint, ToyAlignTask,
    TrainConfig, TrainOutcome, TrainRecord, EVAL_SEED_OFFSET, EVAL_TASK_COUNT,
};
