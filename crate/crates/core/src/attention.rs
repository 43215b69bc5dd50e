//! A single cross-attention layer with a pluggable rotation variant and a
//! manually derived backward pass.
//!
//! Queries play the role of frame-like features and keys the role of
//! token-like embeddings. Rotations are applied to the projected Q and K
//! (query rows with their position in the query sequence, key rows with
//! their position in the key sequence), scores are scaled by `1/sqrt(d)`
//! before the row softmax, and attention is full: no masking.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::rotary::{position_angles, rotate_by_angles, EmbeddingSequence, RotaryConfig};

/// Pre- and post-softmax score matrices from one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionScoreMap {
    /// `L_q x L_k` scaled-dot scores before normalization.
    pub pre_softmax: Matrix,
    /// `L_q x L_k` attention weights; each row sums to 1.
    pub post_softmax: Matrix,
}

/// Single-head cross-attention parameters.
#[derive(Debug, Clone)]
pub struct CrossAttentionLayer {
    pub d_model: usize,
    pub cfg: RotaryConfig,
    /// `d_model x d` query projection.
    pub wq: Matrix,
    /// `d_model x d` key projection.
    pub wk: Matrix,
    /// `d_model x d` value projection.
    pub wv: Matrix,
    /// `d x d_model` output projection.
    pub wo: Matrix,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    queries: Matrix,
    keys: Matrix,
    q_rot: Matrix,
    k_rot: Matrix,
    post: Matrix,
    values: Matrix,
    context: Matrix,
    /// `L_q x d_model` layer output.
    pub output: Matrix,
    /// Score map captured during the pass.
    pub map: AttentionScoreMap,
}

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub queries: Matrix,
    pub keys: Matrix,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.wq.is_finite()
            && self.wk.is_finite()
            && self.wv.is_finite()
            && self.wo.is_finite()
            && self.queries.is_finite()
            && self.keys.is_finite()
    }
}

impl CrossAttentionLayer {
    /// Initialize all projections uniformly in `[-1/sqrt(d_model), 1/sqrt(d_model)]`.
    pub fn init(d_model: usize, cfg: RotaryConfig, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d_model as f64).sqrt();
        Self {
            d_model,
            cfg,
            wq: rng.uniform_matrix(d_model, cfg.d, -bound, bound),
            wk: rng.uniform_matrix(d_model, cfg.d, -bound, bound),
            wv: rng.uniform_matrix(d_model, cfg.d, -bound, bound),
            wo: rng.uniform_matrix(cfg.d, d_model, -bound, bound),
        }
    }

    fn score_scale(&self) -> f64 {
        1.0 / (self.cfg.d as f64).sqrt()
    }

    fn check_inputs(&self, queries: &EmbeddingSequence, keys: &EmbeddingSequence) -> Result<()> {
        for (what, seq) in [("queries", queries), ("keys", keys)] {
            if seq.values().cols() != self.d_model {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: self.d_model,
                    got: seq.values().cols(),
                });
            }
        }
        Ok(())
    }

    fn rotate_rows(&self, projected: &Matrix, length: usize) -> Matrix {
        let mut out = Matrix::zeros(projected.rows(), projected.cols());
        for p in 0..projected.rows() {
            let angles = position_angles(&self.cfg, p, length);
            let rotated = rotate_by_angles(projected.row(p), &angles, 1.0);
            out.set_row(p, &rotated).expect("same width");
        }
        out
    }

    /// Rotation is linear, so its adjoint is the rotation by negated angles.
    fn rotate_rows_adjoint(&self, grads: &Matrix, length: usize) -> Matrix {
        let mut out = Matrix::zeros(grads.rows(), grads.cols());
        for p in 0..grads.rows() {
            let angles = position_angles(&self.cfg, p, length);
            let rotated = rotate_by_angles(grads.row(p), &angles, -1.0);
            out.set_row(p, &rotated).expect("same width");
        }
        out
    }

    /// Forward pass returning the output sequence and the score map.
    pub fn forward(
        &self,
        queries: &EmbeddingSequence,
        keys: &EmbeddingSequence,
    ) -> Result<(EmbeddingSequence, AttentionScoreMap)> {
        let cache = self.forward_cached(queries, keys)?;
        Ok((EmbeddingSequence::new(cache.output)?, cache.map))
    }

    /// Forward pass that keeps the activations needed by [`Self::backward`].
    pub fn forward_cached(
        &self,
        queries: &EmbeddingSequence,
        keys: &EmbeddingSequence,
    ) -> Result<ForwardCache> {
        self.check_inputs(queries, keys)?;
        let lq = queries.len();
        let lk = keys.len();

        let q_rot = self.rotate_rows(&queries.values().matmul(&self.wq)?, lq);
        let k_rot = self.rotate_rows(&keys.values().matmul(&self.wk)?, lk);
        let pre = q_rot.matmul(&k_rot.transpose())?;
        let post = pre.row_softmax(self.score_scale());
        let values = keys.values().matmul(&self.wv)?;
        let context = post.matmul(&values)?;
        let output = context.matmul(&self.wo)?;

        Ok(ForwardCache {
            queries: queries.values().clone(),
            keys: keys.values().clone(),
            q_rot,
            k_rot,
            post: post.clone(),
            values,
            context,
            output,
            map: AttentionScoreMap {
                pre_softmax: pre,
                post_softmax: post,
            },
        })
    }

    /// Exact reverse-mode gradients of the forward composition.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<Gradients> {
        if grad_output.shape() != cache.output.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: grad_output.shape(),
                right: cache.output.shape(),
            });
        }
        let lq = cache.queries.rows();
        let lk = cache.keys.rows();

        // output = context * wo
        let grad_wo = cache.context.transpose().matmul(grad_output)?;
        let grad_context = grad_output.matmul(&self.wo.transpose())?;

        // context = post * values
        let grad_post = grad_context.matmul(&cache.values.transpose())?;
        let grad_values = cache.post.transpose().matmul(&grad_context)?;
        let grad_wv = cache.keys.transpose().matmul(&grad_values)?;
        let grad_keys_value_path = grad_values.matmul(&self.wv.transpose())?;

        // post = softmax(scale * pre), rowwise
        let scale = self.score_scale();
        let mut grad_pre = Matrix::zeros(lq, lk);
        for r in 0..lq {
            let a = cache.post.row(r);
            let g = grad_post.row(r);
            let inner: f64 = a.iter().zip(g).map(|(ai, gi)| ai * gi).sum();
            let row = grad_pre.row_mut(r);
            for n in 0..lk {
                row[n] = scale * a[n] * (g[n] - inner);
            }
        }

        // pre = q_rot * k_rot^T
        let grad_q_rot = grad_pre.matmul(&cache.k_rot)?;
        let grad_k_rot = grad_pre.transpose().matmul(&cache.q_rot)?;

        // rotation adjoint, then the projections
        let grad_q = self.rotate_rows_adjoint(&grad_q_rot, lq);
        let grad_k = self.rotate_rows_adjoint(&grad_k_rot, lk);
        let grad_wq = cache.queries.transpose().matmul(&grad_q)?;
        let grad_wk = cache.keys.transpose().matmul(&grad_k)?;
        let grad_queries = grad_q.matmul(&self.wq.transpose())?;
        let grad_keys = grad_k
            .matmul(&self.wk.transpose())?
            .add(&grad_keys_value_path)?;

        Ok(Gradients {
            wq: grad_wq,
            wk: grad_wk,
            wv: grad_wv,
            wo: grad_wo,
            queries: grad_queries,
            keys: grad_keys,
        })
    }
}

/// Elementwise mean of post-softmax maps with the excluded key columns
/// removed and each row renormalized to sum 1.
pub fn average_maps(maps: &[AttentionScoreMap], exclude_keys: &BTreeSet<usize>) -> Result<Matrix> {
    let first = maps.first().ok_or(Error::EmptyInput("average_maps"))?;
    let (lq, lk) = first.post_softmax.shape();
    for map in maps {
        if map.post_softmax.shape() != (lq, lk) {
            return Err(Error::ShapeMismatch {
                op: "average_maps",
                left: (lq, lk),
                right: map.post_softmax.shape(),
            });
        }
    }
    if let Some(&bad) = exclude_keys.iter().find(|&&k| k >= lk) {
        return Err(Error::PositionOutOfRange {
            position: bad,
            length: lk,
        });
    }
    let kept: Vec<usize> = (0..lk).filter(|k| !exclude_keys.contains(k)).collect();
    if kept.is_empty() {
        return Err(Error::AllKeysExcluded(lk));
    }

    let mut out = Matrix::zeros(lq, kept.len());
    let inv = 1.0 / maps.len() as f64;
    for m in 0..lq {
        for (j, &n) in kept.iter().enumerate() {
            out[(m, j)] = maps.iter().map(|map| map.post_softmax[(m, n)]).sum::<f64>() * inv;
        }
        let total: f64 = out.row(m).iter().sum();
        for v in out.row_mut(m) {
            *v /= total;
        }
    }
    Ok(out)
}

/// Mean normalized distance between each row's argmax and the ideal key
/// index, in `[0, 1]`. Ties break toward the lowest index.
pub fn alignment_error(map: &Matrix, ideal: impl Fn(usize) -> usize) -> f64 {
    let lk = map.cols() as f64;
    let mut total = 0.0;
    for m in 0..map.rows() {
        let peak = map.row_argmax(m) as f64;
        total += (peak - ideal(m) as f64).abs() / lk;
    }
    total / map.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rotary::{rotate_rope, score_complex_larope, score_complex_rope, Variant};

    fn seq(m: Matrix) -> EmbeddingSequence {
        EmbeddingSequence::new(m).unwrap()
    }

    fn layer(d_model: usize, d: usize, variant: Variant, seed: u64) -> CrossAttentionLayer {
        let cfg = RotaryConfig::with_defaults(d, variant).unwrap();
        CrossAttentionLayer::init(d_model, cfg, &mut Rng::new(seed))
    }

    #[test]
    fn single_key_gets_all_attention() {
        let mut rng = Rng::new(1);
        let layer = layer(4, 4, Variant::Larope, 1);
        let queries = seq(rng.normal_matrix(1, 4, 1.0));
        let keys = seq(rng.normal_matrix(1, 4, 1.0));
        let (_, map) = layer.forward(&queries, &keys).unwrap();
        assert_eq!(map.post_softmax[(0, 0)], 1.0);
    }

    #[test]
    fn matching_key_wins_with_identity_projections() {
        let cfg = RotaryConfig::with_defaults(2, Variant::Rope).unwrap();
        let layer = CrossAttentionLayer {
            d_model: 2,
            cfg,
            wq: Matrix::identity(2),
            wk: Matrix::identity(2),
            wv: Matrix::identity(2),
            wo: Matrix::identity(2),
        };
        let queries = seq(Matrix::from_rows(&[&[1.0, 0.0]]).unwrap());
        let keys = seq(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let (_, map) = layer.forward(&queries, &keys).unwrap();
        assert_eq!(map.post_softmax.row_argmax(0), 0);
    }

    #[test]
    fn pre_softmax_matches_complex_form_scores() {
        let mut rng = Rng::new(2);
        for variant in [Variant::Rope, Variant::Larope] {
            let layer = layer(6, 8, variant, 3);
            let queries = seq(rng.normal_matrix(5, 6, 1.0));
            let keys = seq(rng.normal_matrix(7, 6, 1.0));
            let cache = layer.forward_cached(&queries, &keys).unwrap();
            let q_proj = queries.values().matmul(&layer.wq).unwrap();
            let k_proj = keys.values().matmul(&layer.wk).unwrap();
            for m in 0..5 {
                for n in 0..7 {
                    let want = match variant {
                        Variant::Rope => {
                            score_complex_rope(q_proj.row(m), k_proj.row(n), m, n, &layer.cfg)
                                .unwrap()
                        }
                        Variant::Larope => score_complex_larope(
                            q_proj.row(m),
                            k_proj.row(n),
                            m,
                            5,
                            n,
                            7,
                            &layer.cfg,
                        )
                        .unwrap(),
                    };
                    assert!((cache.map.pre_softmax[(m, n)] - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(4);
        let layer = layer(6, 4, Variant::Larope, 5);
        let queries = seq(rng.normal_matrix(4, 6, 1.0));
        let keys = seq(rng.normal_matrix(3, 6, 1.0));
        let a = layer.forward_cached(&queries, &keys).unwrap();
        let b = layer.forward_cached(&queries, &keys).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.map.post_softmax, b.map.post_softmax);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = Rng::new(5);
        let pre = rng.normal_matrix(3, 6, 1.0);
        let shifted = pre.map(|v| v + 3.75);
        let a = pre.row_softmax(0.5);
        let b = shifted.row_softmax(0.5);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn variant_equivalence_at_gamma_equal_length() {
        let mut rng = Rng::new(6);
        let l = 5;
        let cfg_la = RotaryConfig::new(4, 10_000.0, l as f64, Variant::Larope).unwrap();
        let mut layer_la = CrossAttentionLayer::init(6, cfg_la, &mut Rng::new(7));
        let queries = seq(rng.normal_matrix(l, 6, 1.0));
        let keys = seq(rng.normal_matrix(l, 6, 1.0));
        let out_la = layer_la.forward_cached(&queries, &keys).unwrap();
        layer_la.cfg.variant = Variant::Rope;
        let out_ro = layer_la.forward_cached(&queries, &keys).unwrap();
        for (x, y) in out_la.output.data().iter().zip(out_ro.output.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = Rng::new(8);
        let layer = layer(6, 4, Variant::Rope, 9);
        let queries = seq(rng.normal_matrix(4, 6, 1.0));
        let keys = seq(rng.normal_matrix(3, 6, 1.0));
        let cache = layer.forward_cached(&queries, &keys).unwrap();
        let grads = layer.backward(&cache, &Matrix::zeros(4, 6)).unwrap();
        assert_eq!(grads.wq.max_abs(), 0.0);
        assert_eq!(grads.wk.max_abs(), 0.0);
        assert_eq!(grads.wv.max_abs(), 0.0);
        assert_eq!(grads.wo.max_abs(), 0.0);
        assert_eq!(grads.queries.max_abs(), 0.0);
        assert_eq!(grads.keys.max_abs(), 0.0);
    }

    /// Loss = sum(output). Replaces one parameter matrix, reruns the forward
    /// pass, and sums — the independent path for grad_check.
    fn sum_loss_replacing(
        layer: &CrossAttentionLayer,
        queries: &EmbeddingSequence,
        keys: &EmbeddingSequence,
        which: &str,
        replacement: &Matrix,
    ) -> f64 {
        let mut probe = layer.clone();
        match which {
            "wq" => probe.wq = replacement.clone(),
            "wk" => probe.wk = replacement.clone(),
            "wv" => probe.wv = replacement.clone(),
            "wo" => probe.wo = replacement.clone(),
            _ => unreachable!(),
        }
        probe.forward_cached(queries, keys).unwrap().output.sum()
    }

    #[test]
    fn parameter_gradients_pass_central_difference_check() {
        for variant in [Variant::Rope, Variant::Larope] {
            let mut rng = Rng::new(10);
            let layer = layer(6, 4, variant, 11);
            let queries = seq(rng.normal_matrix(5, 6, 1.0));
            let keys = seq(rng.normal_matrix(7, 6, 1.0));
            let cache = layer.forward_cached(&queries, &keys).unwrap();
            let ones = Matrix::from_vec(5, 6, vec![1.0; 30]).unwrap();
            let grads = layer.backward(&cache, &ones).unwrap();
            for (name, param, grad) in [
                ("wq", &layer.wq, &grads.wq),
                ("wk", &layer.wk, &grads.wk),
                ("wv", &layer.wv, &grads.wv),
                ("wo", &layer.wo, &grads.wo),
            ] {
                let err = grad_check(
                    |x| sum_loss_replacing(&layer, &queries, &keys, name, x),
                    param,
                    grad,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{variant:?} {name}: max rel err {err}");
            }
        }
    }

    #[test]
    fn input_gradients_pass_central_difference_check() {
        let mut rng = Rng::new(12);
        let layer = layer(5, 4, Variant::Larope, 13);
        let queries = seq(rng.normal_matrix(4, 5, 1.0));
        let keys = seq(rng.normal_matrix(6, 5, 1.0));
        let cache = layer.forward_cached(&queries, &keys).unwrap();
        let ones = Matrix::from_vec(4, 5, vec![1.0; 20]).unwrap();
        let grads = layer.backward(&cache, &ones).unwrap();

        let err_q = grad_check(
            |x| {
                layer
                    .forward_cached(&seq(x.clone()), &keys)
                    .unwrap()
                    .output
                    .sum()
            },
            queries.values(),
            &grads.queries,
            1e-5,
        )
        .unwrap();
        assert!(err_q < 1e-4, "queries: max rel err {err_q}");

        let err_k = grad_check(
            |x| {
                layer
                    .forward_cached(&queries, &seq(x.clone()))
                    .unwrap()
                    .output
                    .sum()
            },
            keys.values(),
            &grads.keys,
            1e-5,
        )
        .unwrap();
        assert!(err_k < 1e-4, "keys: max rel err {err_k}");
    }

    #[test]
    fn rotation_adjoint_matches_finite_differences() {
        // f(x) = dot(rotate(x, p), u); the x-gradient is u rotated by the
        // negated angles.
        let mut rng = Rng::new(14);
        let cfg = RotaryConfig::with_defaults(8, Variant::Rope).unwrap();
        let x = Matrix::from_vec(1, 8, rng.normal_vec(8, 1.0)).unwrap();
        let u = rng.normal_vec(8, 1.0);
        let p = 6;
        let angles = position_angles(&cfg, p, 1);
        let analytic = Matrix::from_vec(1, 8, rotate_by_angles(&u, &angles, -1.0)).unwrap();
        let err = grad_check(
            |m| {
                rotate_rope(m.row(0), p, &cfg)
                    .unwrap()
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn average_of_single_map_is_the_map() {
        let mut rng = Rng::new(15);
        let post = rng.uniform_matrix(3, 4, 0.0, 1.0).row_softmax(1.0);
        let map = AttentionScoreMap {
            pre_softmax: Matrix::zeros(3, 4),
            post_softmax: post.clone(),
        };
        let avg = average_maps(&[map], &BTreeSet::new()).unwrap();
        for (a, b) in avg.data().iter().zip(post.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn average_of_two_maps_is_their_mean() {
        let mut rng = Rng::new(16);
        let a = rng.uniform_matrix(2, 3, 0.0, 1.0).row_softmax(1.0);
        let b = rng.uniform_matrix(2, 3, 0.0, 1.0).row_softmax(1.0);
        let maps = [
            AttentionScoreMap {
                pre_softmax: Matrix::zeros(2, 3),
                post_softmax: a.clone(),
            },
            AttentionScoreMap {
                pre_softmax: Matrix::zeros(2, 3),
                post_softmax: b.clone(),
            },
        ];
        let avg = average_maps(&maps, &BTreeSet::new()).unwrap();
        // With no exclusions the mean of row-stochastic maps is already
        // row-stochastic, so renormalization is a no-op.
        for m in 0..2 {
            for n in 0..3 {
                let want = 0.5 * (a[(m, n)] + b[(m, n)]);
                assert!((avg[(m, n)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excluding_a_uniform_column_renormalizes() {
        let post = Matrix::from_vec(2, 4, vec![0.25; 8]).unwrap();
        let map = AttentionScoreMap {
            pre_softmax: Matrix::zeros(2, 4),
            post_softmax: post,
        };
        let avg = average_maps(&[map], &BTreeSet::from([2])).unwrap();
        assert_eq!(avg.shape(), (2, 3));
        for v in avg.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn excluding_every_key_is_an_error() {
        let map = AttentionScoreMap {
            pre_softmax: Matrix::zeros(1, 2),
            post_softmax: Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap(),
        };
        let res = average_maps(&[map], &BTreeSet::from([0, 1]));
        assert!(matches!(res, Err(Error::AllKeysExcluded(2))));
    }

    #[test]
    fn averaged_rows_sum_to_one() {
        let mut rng = Rng::new(17);
        let maps: Vec<AttentionScoreMap> = (0..3)
            .map(|_| AttentionScoreMap {
                pre_softmax: Matrix::zeros(4, 6),
                post_softmax: rng.uniform_matrix(4, 6, -1.0, 1.0).row_softmax(1.0),
            })
            .collect();
        let avg = average_maps(&maps, &BTreeSet::from([1, 4])).unwrap();
        for m in 0..4 {
            let s: f64 = avg.row(m).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_error_zero_on_ideal_path() {
        let mut map = Matrix::zeros(3, 5);
        for (m, n) in [(0usize, 0usize), (1, 2), (2, 4)] {
            map[(m, n)] = 1.0;
        }
        let ideal = [0usize, 2, 4];
        assert_eq!(alignment_error(&map, |m| ideal[m]), 0.0);
    }

    #[test]
    fn alignment_error_uniform_map_tie_breaks_at_zero() {
        let l = 4;
        let map = Matrix::from_vec(l, l, vec![1.0 / l as f64; l * l]).unwrap();
        let got = alignment_error(&map, |m| m);
        let want: f64 = (0..l).map(|m| m as f64 / l as f64).sum::<f64>() / l as f64;
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn alignment_error_matches_row_scan_oracle() {
        let mut rng = Rng::new(18);
        let map = rng.uniform_matrix(6, 9, 0.0, 1.0).row_softmax(1.0);
        let ideal = |m: usize| (m * 8) / 5;
        let got = alignment_error(&map, ideal);
        let mut want = 0.0;
        for m in 0..6 {
            let row = map.row(m);
            let mut best = 0;
            for n in 1..9 {
                if row[n] > row[best] {
                    best = n;
                }
            }
            want += (best as f64 - ideal(m) as f64).abs() / 9.0;
        }
        want /= 6.0;
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = Rng::new(19);
        let layer = layer(6, 4, Variant::Rope, 20);
        let queries = seq(rng.normal_matrix(4, 5, 1.0));
        let keys = seq(rng.normal_matrix(3, 6, 1.0));
        assert!(layer.forward(&queries, &keys).is_err());
    }
}
