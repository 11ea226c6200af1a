//! Central finite differences, the reference every backward pass is
//! checked against.

use crate::numerics::Matrix;

pub const DEFAULT_STEP: f64 = 1e-6;

/// `(f(x + h e) - f(x - h e)) / 2h` for every entry of `x`.
pub fn finite_difference_gradient(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||)` in the Frobenius norm, falling back to the
/// absolute difference when both gradients are below `1e-10`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = analytic
        .sub(numeric)
        .expect("relative_error: shapes must agree")
        .frobenius_norm();
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}
