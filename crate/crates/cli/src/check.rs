//! The fast invariant suite behind `larope check`.
//!
//! Each property pits the library against arithmetic done here from scratch
//! (own frequency table, own 2x2 rotations, own complex products), so a
//! defect on either side surfaces as a disagreement. The hidden
//! `--inject-freq-fault` flag perturbs the suite's frequency table, which
//! must trip the agreement properties — used to prove the suite can fail.

use larope_core::{
    grad_check, rotate_larope, rotate_rope, score_complex_larope, score_complex_rope,
    CrossAttentionLayer, EmbeddingSequence, Matrix, Rng, RotaryConfig, Variant, DEFAULT_BASE,
};

use crate::CliError;

struct PropertyOutcome {
    name: &'static str,
    cases: usize,
    max_err: f64,
    tol: f64,
}

impl PropertyOutcome {
    fn passed(&self) -> bool {
        self.max_err <= self.tol
    }
}

/// Frequency table computed independently of the library; `fault` shifts
/// one entry to simulate a defect.
fn oracle_frequencies(d: usize, base: f64, fault: f64) -> Vec<f64> {
    let mut thetas: Vec<f64> = (0..d / 2)
        .map(|j| base.powf(-2.0 * j as f64 / d as f64))
        .collect();
    if fault != 0.0 {
        let idx = 1.min(thetas.len() - 1);
        thetas[idx] += fault;
    }
    thetas
}

fn oracle_rotate(x: &[f64], rate: f64, thetas: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (j, theta) in thetas.iter().enumerate() {
        let angle = rate * theta;
        let (s, c) = (angle.sin(), angle.cos());
        out[2 * j] = c * x[2 * j] - s * x[2 * j + 1];
        out[2 * j + 1] = s * x[2 * j] + c * x[2 * j + 1];
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_preservation(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [2usize, 4, 8, 16, 64][i % 5];
        let x = rng.normal_vec(d, 1.0);
        let cfg = RotaryConfig::with_defaults(d, Variant::Rope).unwrap();
        let p = rng.uniform_usize(0, 400);
        max_err = max_err.max((norm(&rotate_rope(&x, p, &cfg).unwrap()) - norm(&x)).abs());
        let cfg = RotaryConfig::with_defaults(d, Variant::Larope).unwrap();
        let l = rng.uniform_usize(1, 64);
        let q = rng.uniform_usize(0, l - 1);
        max_err = max_err.max((norm(&rotate_larope(&x, q, l, &cfg).unwrap()) - norm(&x)).abs());
    }
    PropertyOutcome {
        name: "rotation norm preservation",
        cases,
        max_err,
        tol: 1e-12,
    }
}

fn shift_invariance(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [4usize, 8, 16, 64][i % 4];
        let cfg = RotaryConfig::with_defaults(d, Variant::Rope).unwrap();
        let q = rng.normal_vec(d, 1.0);
        let k = rng.normal_vec(d, 1.0);
        let (m, n, s) = (
            rng.uniform_usize(0, 200),
            rng.uniform_usize(0, 200),
            rng.uniform_usize(0, 300),
        );
        let a = dot(
            &rotate_rope(&q, m, &cfg).unwrap(),
            &rotate_rope(&k, n, &cfg).unwrap(),
        );
        let b = dot(
            &rotate_rope(&q, m + s, &cfg).unwrap(),
            &rotate_rope(&k, n + s, &cfg).unwrap(),
        );
        max_err = max_err.max((a - b).abs());
    }
    PropertyOutcome {
        name: "rope shift invariance",
        cases,
        max_err,
        tol: 1e-9,
    }
}

fn normalized_distance_invariance(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [4usize, 8, 16, 64][i % 4];
        let cfg = RotaryConfig::with_defaults(d, Variant::Larope).unwrap();
        let q = rng.normal_vec(d, 1.0);
        let k = rng.normal_vec(d, 1.0);
        let lq = rng.uniform_usize(2, 48);
        let lk = rng.uniform_usize(2, 48);
        let m = rng.uniform_usize(0, lq - 1);
        let n = rng.uniform_usize(0, lk - 1);
        let alpha = rng.uniform_usize(2, 4);
        let a = dot(
            &rotate_larope(&q, m, lq, &cfg).unwrap(),
            &rotate_larope(&k, n, lk, &cfg).unwrap(),
        );
        let b = dot(
            &rotate_larope(&q, alpha * m, alpha * lq, &cfg).unwrap(),
            &rotate_larope(&k, alpha * n, alpha * lk, &cfg).unwrap(),
        );
        max_err = max_err.max((a - b).abs());
    }
    PropertyOutcome {
        name: "larope normalized-distance invariance",
        cases,
        max_err,
        tol: 1e-9,
    }
}

fn reduction_at_gamma_l(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [4usize, 8, 16, 32][i % 4];
        let l = rng.uniform_usize(1, 64);
        let p = rng.uniform_usize(0, l - 1);
        let cfg = RotaryConfig::new(d, DEFAULT_BASE, l as f64, Variant::Larope).unwrap();
        let x = rng.normal_vec(d, 1.0);
        let a = rotate_larope(&x, p, l, &cfg).unwrap();
        let b = rotate_rope(&x, p, &cfg).unwrap();
        for (u, v) in a.iter().zip(&b) {
            max_err = max_err.max((u - v).abs());
        }
    }
    PropertyOutcome {
        name: "larope reduction at gamma=L",
        cases,
        max_err,
        tol: 1e-12,
    }
}

fn rope_complex_agreement(rng: &mut Rng, cases: usize, fault: f64) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [4usize, 8, 16, 64][i % 4];
        let cfg = RotaryConfig::with_defaults(d, Variant::Rope).unwrap();
        let thetas = oracle_frequencies(d, cfg.base, fault);
        let q = rng.normal_vec(d, 1.0);
        let k = rng.normal_vec(d, 1.0);
        let m = rng.uniform_usize(0, 300);
        let n = rng.uniform_usize(0, 300);
        let closed = score_complex_rope(&q, &k, m, n, &cfg).unwrap();
        let direct = dot(
            &oracle_rotate(&q, m as f64, &thetas),
            &oracle_rotate(&k, n as f64, &thetas),
        );
        max_err = max_err.max((closed - direct).abs());
    }
    PropertyOutcome {
        name: "rope complex-form agreement",
        cases,
        max_err,
        tol: 1e-9,
    }
}

fn larope_complex_agreement(rng: &mut Rng, cases: usize, fault: f64) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for i in 0..cases {
        let d = [4usize, 8, 16, 64][i % 4];
        let cfg = RotaryConfig::with_defaults(d, Variant::Larope).unwrap();
        let thetas = oracle_frequencies(d, cfg.base, fault);
        let q = rng.normal_vec(d, 1.0);
        let k = rng.normal_vec(d, 1.0);
        let lq = rng.uniform_usize(1, 128);
        let lk = rng.uniform_usize(1, 128);
        let m = rng.uniform_usize(0, lq - 1);
        let n = rng.uniform_usize(0, lk - 1);
        let closed = score_complex_larope(&q, &k, m, lq, n, lk, &cfg).unwrap();
        let direct = dot(
            &oracle_rotate(&q, cfg.gamma * m as f64 / lq as f64, &thetas),
            &oracle_rotate(&k, cfg.gamma * n as f64 / lk as f64, &thetas),
        );
        max_err = max_err.max((closed - direct).abs());
    }
    PropertyOutcome {
        name: "larope complex-form agreement",
        cases,
        max_err,
        tol: 1e-9,
    }
}

fn softmax_normalization(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let mut max_err = 0.0_f64;
    for _ in 0..cases {
        let rows = rng.uniform_usize(1, 6);
        let cols = rng.uniform_usize(1, 10);
        let m = rng.uniform_matrix(rows, cols, -1e4, 1e4);
        let s = m.row_softmax(1.0 / (cols as f64).sqrt());
        for r in 0..rows {
            let total: f64 = s.row(r).iter().sum();
            max_err = max_err.max((total - 1.0).abs());
        }
    }
    PropertyOutcome {
        name: "softmax row normalization",
        cases,
        max_err,
        tol: 1e-12,
    }
}

fn attention_gradients(rng: &mut Rng, cases: usize) -> PropertyOutcome {
    let rounds = (cases / 32).max(2);
    let mut max_err = 0.0_f64;
    for _ in 0..rounds {
        for variant in [Variant::Rope, Variant::Larope] {
            let cfg = RotaryConfig::with_defaults(4, variant).unwrap();
            let layer = CrossAttentionLayer::init(6, cfg, rng);
            let queries = EmbeddingSequence::new(rng.normal_matrix(5, 6, 1.0)).unwrap();
            let keys = EmbeddingSequence::new(rng.normal_matrix(7, 6, 1.0)).unwrap();
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
                    |x| {
                        let mut probe = layer.clone();
                        match name {
                            "wq" => probe.wq = x.clone(),
                            "wk" => probe.wk = x.clone(),
                            "wv" => probe.wv = x.clone(),
                            _ => probe.wo = x.clone(),
                        }
                        probe.forward_cached(&queries, &keys).unwrap().output.sum()
                    },
                    param,
                    grad,
                    1e-5,
                )
                .unwrap();
                max_err = max_err.max(err);
            }
        }
    }
    PropertyOutcome {
        name: "cross-attention gradient check",
        cases: rounds * 8,
        max_err,
        tol: 1e-4,
    }
}

pub fn run(seed: u64, cases: usize, inject_freq_fault: bool) -> Result<(), CliError> {
    if cases == 0 {
        return Err(CliError::Usage("--cases must be >= 1".into()));
    }
    let fault = if inject_freq_fault { 1e-3 } else { 0.0 };
    let mut rng = Rng::new(seed);

    let outcomes = vec![
        norm_preservation(&mut rng, cases),
        shift_invariance(&mut rng, cases),
        normalized_distance_invariance(&mut rng, cases),
        reduction_at_gamma_l(&mut rng, cases),
        rope_complex_agreement(&mut rng, cases, fault),
        larope_complex_agreement(&mut rng, cases, fault),
        softmax_normalization(&mut rng, cases),
        attention_gradients(&mut rng, cases),
    ];

    let mut failed = Vec::new();
    for outcome in &outcomes {
        let status = if outcome.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {name}: cases={cases} max_err={err:.3e} tol={tol:.0e}",
            name = outcome.name,
            cases = outcome.cases,
            err = outcome.max_err,
            tol = outcome.tol,
        );
        if !outcome.passed() {
            failed.push(outcome.name.to_string());
        }
    }
    println!(
        "properties run: {}, passed: {}",
        outcomes.len(),
        outcomes.len() - failed.len()
    );

    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}
