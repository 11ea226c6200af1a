//! Layer primitives with explicit forward and backward passes.
//!
//! Every backward function returns exact analytic gradients for the matching
//! forward. Conventions at non-differentiable points are fixed: the ReLU
//! gradient at exactly zero is zero, and max-pool ties route to the lowest
//! row index.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Gradients of a fully-connected layer `x W + b`.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub d_x: Matrix,
    pub d_w: Matrix,
    pub d_b: Matrix,
}

/// `x W + b`, with `b` a `1 x O` row broadcast over the batch.
pub fn matmul_bias(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::shape(
            "matmul_bias",
            format!("bias {}x{} for {} outputs", b.rows(), b.cols(), w.cols()),
        ));
    }
    let mut out = x.matmul(w)?;
    let bias = b.as_slice();
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

pub fn matmul_bias_backward(x: &Matrix, w: &Matrix, d_out: &Matrix) -> Result<LinearGrads> {
    if d_out.rows() != x.rows() || d_out.cols() != w.cols() {
        return Err(Error::shape(
            "matmul_bias_backward",
            format!(
                "d_out {}x{} for input {}x{} and weight {}x{}",
                d_out.rows(),
                d_out.cols(),
                x.rows(),
                x.cols(),
                w.rows(),
                w.cols()
            ),
        ));
    }
    Ok(LinearGrads {
        d_x: d_out.matmul_t(w)?,
        d_w: x.t_matmul(d_out)?,
        d_b: d_out.column_sums(),
    })
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Masks `d_out` where the forward input was `<= 0`.
pub fn relu_backward(x: &Matrix, d_out: &Matrix) -> Result<Matrix> {
    x.ensure_same_shape(d_out, "relu_backward")?;
    let data = x
        .as_slice()
        .iter()
        .zip(d_out.as_slice())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Result of a column-wise max over rows.
#[derive(Debug, Clone)]
pub struct MaxPool {
    /// `1 x D` maxima.
    pub out: Matrix,
    /// Winning row per column.
    pub argmax: Vec<usize>,
    pub input_rows: usize,
}

pub fn row_maxpool(x: &Matrix) -> Result<MaxPool> {
    row_maxpool_masked(x, None)
}

/// Max over the rows selected by `mask` (all rows when `None`). A mask that
/// selects nothing yields a zero output whose backward is also zero.
pub fn row_maxpool_masked(x: &Matrix, mask: Option<&[bool]>) -> Result<MaxPool> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput { op: "row_maxpool" });
    }
    let cols = x.cols();
    let mut out = Matrix::zeros(1, cols);
    let mut argmax = vec![usize::MAX; cols];
    for c in 0..cols {
        let mut best = f64::NEG_INFINITY;
        for r in 0..x.rows() {
            if mask.is_some_and(|m| !m[r]) {
                continue;
            }
            let v = x[(r, c)];
            if v > best {
                best = v;
                argmax[c] = r;
            }
        }
        if argmax[c] != usize::MAX {
            out[(0, c)] = best;
        }
    }
    Ok(MaxPool {
        out,
        argmax,
        input_rows: x.rows(),
    })
}

pub fn row_maxpool_backward(pool: &MaxPool, d_out: &Matrix) -> Result<Matrix> {
    if d_out.rows() != 1 || d_out.cols() != pool.argmax.len() {
        return Err(Error::shape(
            "row_maxpool_backward",
            format!(
                "d_out {}x{} for {} pooled columns",
                d_out.rows(),
                d_out.cols(),
                pool.argmax.len()
            ),
        ));
    }
    let mut d_x = Matrix::zeros(pool.input_rows, pool.argmax.len());
    for (c, &r) in pool.argmax.iter().enumerate() {
        if r != usize::MAX {
            d_x[(r, c)] = d_out[(0, c)];
        }
    }
    Ok(d_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature running statistics of a batch-norm layer, each `1 x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Matrix,
    pub var: Matrix,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: Matrix::zeros(1, dim),
            var: Matrix::filled(1, dim, 1.0),
        }
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub d_x: Matrix,
    pub d_gamma: Matrix,
    pub d_beta: Matrix,
}

/// Batch normalisation over the batch dimension.
///
/// Train mode uses the biased batch variance inside `sqrt(var + eps)` and
/// updates `stats` with momentum [`BN_MOMENTUM`], storing the unbiased
/// variance in the running estimate. Eval mode normalises by `stats` and
/// leaves them untouched.
pub fn batchnorm1d(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
    mode: Mode,
    stats: &mut RunningStats,
) -> Result<(Matrix, BatchNormCache)> {
    let (b, d) = x.shape();
    for (name, m) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &stats.mean),
    ] {
        if m.shape() != (1, d) {
            return Err(Error::shape(
                "batchnorm1d",
                format!("{name} is {}x{}, expected 1x{d}", m.rows(), m.cols()),
            ));
        }
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::BatchTooSmall {
                    op: "batchnorm1d",
                    got: b,
                    min: 2,
                });
            }
            let mean = x.column_sums().scale(1.0 / b as f64);
            let mut var = Matrix::zeros(1, d);
            for r in 0..b {
                for c in 0..d {
                    let dv = x[(r, c)] - mean[(0, c)];
                    var[(0, c)] += dv * dv;
                }
            }
            let var = var.scale(1.0 / b as f64);
            let unbiased = b as f64 / (b as f64 - 1.0);
            for c in 0..d {
                stats.mean[(0, c)] =
                    (1.0 - BN_MOMENTUM) * stats.mean[(0, c)] + BN_MOMENTUM * mean[(0, c)];
                stats.var[(0, c)] =
                    (1.0 - BN_MOMENTUM) * stats.var[(0, c)] + BN_MOMENTUM * var[(0, c)] * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<f64> = var
        .as_slice()
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mut x_hat = Matrix::zeros(b, d);
    let mut out = Matrix::zeros(b, d);
    for r in 0..b {
        for c in 0..d {
            let h = (x[(r, c)] - mean[(0, c)]) * inv_std[c];
            x_hat[(r, c)] = h;
            out[(r, c)] = gamma[(0, c)] * h + beta[(0, c)];
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
        },
    ))
}

pub fn batchnorm1d_backward(
    cache: &BatchNormCache,
    gamma: &Matrix,
    d_out: &Matrix,
) -> Result<BatchNormGrads> {
    cache
        .x_hat
        .ensure_same_shape(d_out, "batchnorm1d_backward")?;
    let (b, d) = d_out.shape();
    let d_beta = d_out.column_sums();
    let mut d_gamma = Matrix::zeros(1, d);
    for r in 0..b {
        for c in 0..d {
            d_gamma[(0, c)] += d_out[(r, c)] * cache.x_hat[(r, c)];
        }
    }
    let mut d_x = Matrix::zeros(b, d);
    match cache.mode {
        Mode::Eval => {
            for r in 0..b {
                for c in 0..d {
                    d_x[(r, c)] = d_out[(r, c)] * gamma[(0, c)] * cache.inv_std[c];
                }
            }
        }
        Mode::Train => {
            // dx = gamma * inv_std / B * (B*dy - sum(dy) - x_hat * sum(dy * x_hat))
            let n = b as f64;
            for c in 0..d {
                let k = gamma[(0, c)] * cache.inv_std[c] / n;
                for r in 0..b {
                    d_x[(r, c)] = k
                        * (n * d_out[(r, c)]
                            - d_beta[(0, c)]
                            - cache.x_hat[(r, c)] * d_gamma[(0, c)]);
                }
            }
        }
    }
    Ok(BatchNormGrads {
        d_x,
        d_gamma,
        d_beta,
    })
}
