//! Rotary rotation operators.
//!
//! A `d`-dimensional vector is split into `d/2` two-dimensional subvectors
//! and each subvector `j` is rotated by an angle proportional to the rotation
//! frequency `theta_j = base^(-2j/d)`. Two variants are provided:
//!
//! * `Rope` rotates by `p * theta_j` for the absolute position `p`, so the
//!   inner product of two rotated vectors depends only on the positional
//!   difference.
//! * `Larope` rotates by `gamma * (p / L) * theta_j` for a position `p` in a
//!   sequence of length `L`, so inner products depend only on the difference
//!   of length-normalized indices. This keeps cross-attention score structure
//!   diagonal even when query and key lengths differ.
//!
//! Positions are 0-based, which makes `p = 0` the identity rotation, and the
//! normalized index `p / L` spans `[0, (L-1)/L]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which rotation operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rope,
    Larope,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Rope => write!(f, "rope"),
            Variant::Larope => write!(f, "larope"),
        }
    }
}

/// Head dimension, frequency base, length-normalization scale, and variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotaryConfig {
    /// Head dimension; even and at least 2.
    pub d: usize,
    /// Frequency base; greater than 1.
    pub base: f64,
    /// Scaling applied to the normalized index in the length-aware variant;
    /// positive.
    pub gamma: f64,
    pub variant: Variant,
}

/// Default frequency base.
pub const DEFAULT_BASE: f64 = 10_000.0;

/// Default scaling for the length-aware variant.
pub const DEFAULT_GAMMA: f64 = 10.0;

impl RotaryConfig {
    pub fn new(d: usize, base: f64, gamma: f64, variant: Variant) -> Result<Self> {
        if d < 2 || !d.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "head dimension d must be even and >= 2, got {d}"
            )));
        }
        if !base.is_finite() || base <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "base must be > 1, got {base}"
            )));
        }
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be > 0, got {gamma}"
            )));
        }
        Ok(Self {
            d,
            base,
            gamma,
            variant,
        })
    }

    /// Config with default base and gamma.
    pub fn with_defaults(d: usize, variant: Variant) -> Result<Self> {
        Self::new(d, DEFAULT_BASE, DEFAULT_GAMMA, variant)
    }

    pub fn half_dim(&self) -> usize {
        self.d / 2
    }
}

/// An `L x d` sequence of embedding rows at implicit positions `0..L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    values: Matrix,
}

impl EmbeddingSequence {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(Self { values })
    }

    /// Number of positions.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn row(&self, p: usize) -> &[f64] {
        self.values.row(p)
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }
}

/// Rotation frequencies `theta_j = base^(-2j/d)` for `j in 0..d/2`.
///
/// Entry 0 is exactly 1 and the sequence is strictly decreasing.
pub fn frequencies(cfg: &RotaryConfig) -> Vec<f64> {
    let d = cfg.d as f64;
    (0..cfg.half_dim())
        .map(|j| cfg.base.powf(-2.0 * j as f64 / d))
        .collect()
}

/// Per-subvector rotation angles for position `p`.
///
/// `Rope` ignores the sequence length; `Larope` uses the normalized index
/// `p / length` scaled by gamma.
pub fn position_angles(cfg: &RotaryConfig, p: usize, length: usize) -> Vec<f64> {
    let rate = match cfg.variant {
        Variant::Rope => p as f64,
        Variant::Larope => cfg.gamma * (p as f64 / length as f64),
    };
    frequencies(cfg).iter().map(|theta| rate * theta).collect()
}

/// Rotate each 2D subvector of `x` by the corresponding angle. Positive
/// `sign` rotates forward, negative applies the adjoint (inverse) rotation.
pub(crate) fn rotate_by_angles(x: &[f64], angles: &[f64], sign: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (j, &angle) in angles.iter().enumerate() {
        let (sin, cos) = (sign * angle).sin_cos();
        let a = x[2 * j];
        let b = x[2 * j + 1];
        out.push(a * cos - b * sin);
        out.push(a * sin + b * cos);
    }
    out
}

fn check_dim(cfg: &RotaryConfig, x: &[f64]) -> Result<()> {
    if x.len() != cfg.d {
        return Err(Error::DimensionMismatch {
            what: "rotation input",
            expected: cfg.d,
            got: x.len(),
        });
    }
    Ok(())
}

/// Rotate `x` at absolute position `p`: subvector `j` turns by `p * theta_j`.
pub fn rotate_rope(x: &[f64], p: usize, cfg: &RotaryConfig) -> Result<Vec<f64>> {
    check_dim(cfg, x)?;
    let rate = p as f64;
    let angles: Vec<f64> = frequencies(cfg).iter().map(|t| rate * t).collect();
    Ok(rotate_by_angles(x, &angles, 1.0))
}

/// Rotate `x` at position `p` of a sequence of length `length`: subvector
/// `j` turns by `gamma * (p / length) * theta_j`.
pub fn rotate_larope(x: &[f64], p: usize, length: usize, cfg: &RotaryConfig) -> Result<Vec<f64>> {
    check_dim(cfg, x)?;
    if length == 0 {
        return Err(Error::EmptySequence);
    }
    if p >= length {
        return Err(Error::PositionOutOfRange {
            position: p,
            length,
        });
    }
    let rate = cfg.gamma * (p as f64 / length as f64);
    let angles: Vec<f64> = frequencies(cfg).iter().map(|t| rate * t).collect();
    Ok(rotate_by_angles(x, &angles, 1.0))
}

/// Rotate every row of `seq` at its own position, per `cfg.variant`.
pub fn apply_to_sequence(seq: &EmbeddingSequence, cfg: &RotaryConfig) -> Result<EmbeddingSequence> {
    let length = seq.len();
    let mut out = Matrix::zeros(length, seq.values().cols());
    for p in 0..length {
        let rotated = match cfg.variant {
            Variant::Rope => rotate_rope(seq.row(p), p, cfg)?,
            Variant::Larope => rotate_larope(seq.row(p), p, length, cfg)?,
        };
        out.set_row(p, &rotated)?;
    }
    EmbeddingSequence::new(out)
}

/// Subvector `j` of `x` viewed as the complex number `x_{2j} + i*x_{2j+1}`.
fn subvector(x: &[f64], j: usize) -> Complex64 {
    Complex64::new(x[2 * j], x[2 * j + 1])
}

fn score_complex(q: &[f64], k: &[f64], cfg: &RotaryConfig, relative: f64) -> f64 {
    frequencies(cfg)
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            (subvector(q, j) * subvector(k, j).conj() * Complex64::cis(relative * theta)).re
        })
        .sum()
}

/// Closed-form rotated inner product for the absolute-position variant:
/// `Re[sum_j q_j k_j^* e^{i(m-n)theta_j}]`. Equals
/// `dot(rotate_rope(q, m), rotate_rope(k, n))`.
pub fn score_complex_rope(
    q: &[f64],
    k: &[f64],
    m: usize,
    n: usize,
    cfg: &RotaryConfig,
) -> Result<f64> {
    check_dim(cfg, q)?;
    check_dim(cfg, k)?;
    Ok(score_complex(q, k, cfg, m as f64 - n as f64))
}

/// Closed-form rotated inner product for the length-aware variant:
/// `Re[sum_j q_j k_j^* e^{i*gamma*(m/Lq - n/Lk)*theta_j}]`. Equals
/// `dot(rotate_larope(q, m, lq), rotate_larope(k, n, lk))`.
pub fn score_complex_larope(
    q: &[f64],
    k: &[f64],
    m: usize,
    lq: usize,
    n: usize,
    lk: usize,
    cfg: &RotaryConfig,
) -> Result<f64> {
    check_dim(cfg, q)?;
    check_dim(cfg, k)?;
    if lq == 0 || lk == 0 {
        return Err(Error::EmptySequence);
    }
    if m >= lq {
        return Err(Error::PositionOutOfRange {
            position: m,
            length: lq,
        });
    }
    if n >= lk {
        return Err(Error::PositionOutOfRange {
            position: n,
            length: lk,
        });
    }
    let relative = cfg.gamma * (m as f64 / lq as f64 - n as f64 / lk as f64);
    Ok(score_complex(q, k, cfg, relative))
}
