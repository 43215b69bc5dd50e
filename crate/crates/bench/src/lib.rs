//! Shared fixtures for the criterion benchmarks.

use larope_core::{CrossAttentionLayer, EmbeddingSequence, Rng, RotaryConfig, Variant};

pub fn rotary_cfg(d: usize, variant: Variant) -> RotaryConfig {
    RotaryConfig::with_defaults(d, variant).expect("valid benchmark config")
}

pub fn random_vec(seed: u64, len: usize) -> Vec<f64> {
    Rng::new(seed).normal_vec(len, 1.0)
}

pub fn random_sequence(seed: u64, rows: usize, cols: usize) -> EmbeddingSequence {
    EmbeddingSequence::new(Rng::new(seed).normal_matrix(rows, cols, 1.0))
        .expect("non-empty benchmark sequence")
}

pub fn attention_fixture(
    d_model: usize,
    d: usize,
    lq: usize,
    lk: usize,
    variant: Variant,
) -> (CrossAttentionLayer, EmbeddingSequence, EmbeddingSequence) {
    let mut rng = Rng::new(7);
    let layer = CrossAttentionLayer::init(d_model, rotary_cfg(d, variant), &mut rng);
    let queries = EmbeddingSequence::new(rng.normal_matrix(lq, d_model, 1.0)).unwrap();
    let keys = EmbeddingSequence::new(rng.normal_matrix(lk, d_model, 1.0)).unwrap();
    (layer, queries, keys)
}
