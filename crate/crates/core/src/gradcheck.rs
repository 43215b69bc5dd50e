//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Compare an analytic gradient against central differences of `f` at `x`.
///
/// Returns the maximum over entries of
/// `|central_difference - analytic| / (|analytic| + 1e-8)`, where the
/// central difference of entry `i` is `(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)`.
/// Errors if `f` evaluates to a non-finite value anywhere in the stencil.
pub fn grad_check<F>(f: F, x: &Matrix, analytic: &Matrix, eps: f64) -> Result<f64>
where
    F: Fn(&Matrix) -> f64,
{
    if x.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: x.shape(),
            right: analytic.shape(),
        });
    }
    let mut max_rel = 0.0_f64;
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + eps;
            let plus = f(&probe);
            probe[(r, c)] = orig - eps;
            let minus = f(&probe);
            probe[(r, c)] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("grad_check objective"));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (numeric - analytic[(r, c)]).abs() / (analytic[(r, c)].abs() + 1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
