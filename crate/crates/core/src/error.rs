use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the numeric kernel, rotation operators, and the
/// training harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two matrices were combined with incompatible shapes.
    #[error("shape mismatch in {op}: left is {}x{}, right is {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A vector or matrix dimension does not match what the operation needs.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration value violated its constraint.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A position index fell outside its sequence.
    #[error("position {position} out of range for sequence of length {length}")]
    PositionOutOfRange { position: usize, length: usize },

    /// A sequence must hold at least one position.
    #[error("sequence must have length >= 1")]
    EmptySequence,

    /// An operation over a collection received nothing to work on.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A computation produced or encountered a non-finite value.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Map averaging was asked to drop every key column.
    #[error("key exclusion set removes all {0} key columns")]
    AllKeysExcluded(usize),
}
