//! Relative upper-bound grids for rotated attention scores.
//!
//! The rotated inner product of a query at position `m` and a key at
//! position `n` is bounded (up to a data-dependent prefactor that this
//! module deliberately drops) by `sum_j S_j`, where the decaying form of
//! `S_j` is the magnitude of the partial phase sum
//! `|sum_{k<=j} e^{i*delta*theta_k}|` at relative distance `delta`.
//!
//! Evaluating the bound over every `(m, n)` cell shows where a rotation
//! variant concentrates attention capacity: the absolute-position variant
//! peaks along `m - n = 0`, a slope-one ridge that leaves the rescaled
//! diagonal whenever query and key lengths differ, while the length-aware
//! variant peaks along `m/L_q - n/L_k = 0` and stays diagonal for any
//! length combination.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rotary::{frequencies, RotaryConfig, Variant};

/// How each `S_j` term is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SjMode {
    /// `S_j = |sum_{k<=j} e^{i*delta*theta_k}|` — the decaying form that
    /// produces the ridge structure. Default.
    #[serde(rename = "partial-sum")]
    MagnitudeOfPartialSum,
    /// `S_j = sum_{k<=j} |e^{i*delta*theta_k}| = j + 1` — every term has unit
    /// modulus, so the bound is the constant `d/2*(d/2+1)/2` and carries no
    /// positional structure. Kept as a documented fidelity check.
    #[serde(rename = "magnitudes")]
    SumOfMagnitudes,
}

impl std::fmt::Display for SjMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SjMode::MagnitudeOfPartialSum => write!(f, "partial-sum"),
            SjMode::SumOfMagnitudes => write!(f, "magnitudes"),
        }
    }
}

/// `sum_j S_j` at a single relative distance.
///
/// In `SumOfMagnitudes` mode the unit moduli are summed analytically, so the
/// result is exactly `d/2*(d/2+1)/2` for every `delta`.
pub fn relative_bound(delta: f64, cfg: &RotaryConfig, mode: SjMode) -> f64 {
    let half = cfg.half_dim();
    match mode {
        SjMode::MagnitudeOfPartialSum => {
            let mut partial = Complex64::new(0.0, 0.0);
            let mut total = 0.0;
            for theta in frequencies(cfg) {
                partial += Complex64::cis(delta * theta);
                total += partial.norm();
            }
            total
        }
        SjMode::SumOfMagnitudes => (half * (half + 1) / 2) as f64,
    }
}

/// The bound evaluated over every `(m, n)` cell of an `lq x lk` grid.
#[derive(Debug, Clone)]
pub struct BoundGrid {
    pub lq: usize,
    pub lk: usize,
    pub cfg: RotaryConfig,
    pub sj_mode: SjMode,
    values: Matrix,
}

impl BoundGrid {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }
}

/// Evaluate the bound over the grid. The relative distance at cell `(m, n)`
/// is `m - n` for the absolute-position variant and
/// `gamma * (m/lq - n/lk)` for the length-aware one.
pub fn bound_grid(lq: usize, lk: usize, cfg: &RotaryConfig, mode: SjMode) -> Result<BoundGrid> {
    if lq == 0 || lk == 0 {
        return Err(Error::EmptySequence);
    }
    let mut values = Matrix::zeros(lq, lk);
    for m in 0..lq {
        for n in 0..lk {
            let delta = match cfg.variant {
                Variant::Rope => m as f64 - n as f64,
                Variant::Larope => cfg.gamma * (m as f64 / lq as f64 - n as f64 / lk as f64),
            };
            values[(m, n)] = relative_bound(delta, cfg, mode);
        }
    }
    Ok(BoundGrid {
        lq,
        lk,
        cfg: *cfg,
        sj_mode: mode,
        values,
    })
}

/// Mean normalized distance between each row's argmax and the
/// endpoints-aligned diagonal `n = m * (lk-1)/(lq-1)`, in `[0, 1]`.
///
/// Argmax ties break toward the lowest index. For the degenerate `lq = 1`
/// the ideal position is the key-axis midpoint `(lk-1)/2`.
pub fn ridge_deviation(grid: &BoundGrid) -> f64 {
    let lq = grid.lq;
    let lk = grid.lk;
    let mut total = 0.0;
    for m in 0..lq {
        let ideal = if lq == 1 {
            (lk as f64 - 1.0) / 2.0
        } else {
            m as f64 * (lk as f64 - 1.0) / (lq as f64 - 1.0)
        };
        let peak = grid.values.row_argmax(m) as f64;
        total += (peak - ideal).abs() / lk as f64;
    }
    total / lq as f64
}
