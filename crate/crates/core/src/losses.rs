//! Contrastive InfoNCE loss between NHA and LTA representations, and the
//! softmax negative log-likelihood used by the supervised baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoNceVariant {
    /// Positive pair excluded from the denominator: for row `i` the
    /// normaliser runs over `j != i` only. The per-row loss can be negative.
    PaperExact,
    /// Usual cross-entropy form: the denominator includes `j == i`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfoNceConfig {
    pub temperature: f64,
    pub variant: InfoNceVariant,
    pub reduction: Reduction,
    /// Average the NHA-to-LTA and LTA-to-NHA directions.
    pub symmetric: bool,
    /// Unit-normalise rows before the dot product.
    pub l2_normalize: bool,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            variant: InfoNceVariant::PaperExact,
            reduction: Reduction::Sum,
            symmetric: false,
            l2_normalize: false,
        }
    }
}

impl InfoNceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub d_nha: Matrix,
    pub d_lta: Matrix,
}

/// InfoNCE over a batch of positive pairs `(v_nha[i], v_lta[i])` with all
/// other in-batch rows as negatives. Logits are `v_nha[i] . v_lta[j] / tau`.
pub fn info_nce(v_nha: &Matrix, v_lta: &Matrix, cfg: &InfoNceConfig) -> Result<InfoNceOutput> {
    cfg.validate()?;
    v_nha.ensure_same_shape(v_lta, "info_nce")?;
    let b = v_nha.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall {
            op: "info_nce",
            got: b,
            min: 2,
        });
    }

    let (a, a_norms) = maybe_normalize(v_nha, cfg.l2_normalize);
    let (c, c_norms) = maybe_normalize(v_lta, cfg.l2_normalize);
    let tau = cfg.temperature;
    let logits = a.matmul_t(&c)?.scale(1.0 / tau);

    let mut d_logits = Matrix::zeros(b, b);
    let mut loss = directional(&logits, cfg.variant, &mut d_logits, false);
    if cfg.symmetric {
        loss += directional(&logits, cfg.variant, &mut d_logits, true);
        loss *= 0.5;
        d_logits = d_logits.scale(0.5);
    }
    if cfg.reduction == Reduction::Mean {
        loss /= b as f64;
        d_logits = d_logits.scale(1.0 / b as f64);
    }

    let d_a = d_logits.matmul(&c)?.scale(1.0 / tau);
    let d_c = d_logits.t_matmul(&a)?.scale(1.0 / tau);
    let d_nha = match &a_norms {
        Some(n) => normalize_backward(&a, n, &d_a),
        None => d_a,
    };
    let d_lta = match &c_norms {
        Some(n) => normalize_backward(&c, n, &d_c),
        None => d_c,
    };
    Ok(InfoNceOutput { loss, d_nha, d_lta })
}

/// One direction of the loss, summed over anchors. With `transpose` the
/// anchors are columns (LTA rows) instead of rows. Gradients are added into
/// `d_logits`.
fn directional(
    logits: &Matrix,
    variant: InfoNceVariant,
    d_logits: &mut Matrix,
    transpose: bool,
) -> f64 {
    let b = logits.rows();
    let at = |i: usize, j: usize| {
        if transpose {
            logits[(j, i)]
        } else {
            logits[(i, j)]
        }
    };
    let mut total = 0.0;
    let mut probs = vec![0.0; b];
    for i in 0..b {
        let included = |j: usize| variant == InfoNceVariant::Standard || j != i;
        let max = (0..b)
            .filter(|&j| included(j))
            .map(|j| at(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..b {
            probs[j] = if included(j) {
                (at(i, j) - max).exp()
            } else {
                0.0
            };
            z += probs[j];
        }
        let lse = max + z.ln();
        total += lse - at(i, i);
        for (j, p) in probs.iter().enumerate() {
            let g = p / z - if j == i { 1.0 } else { 0.0 };
            if transpose {
                d_logits[(j, i)] += g;
            } else {
                d_logits[(i, j)] += g;
            }
        }
    }
    total
}

fn maybe_normalize(v: &Matrix, enabled: bool) -> (Matrix, Option<Vec<f64>>) {
    if !enabled {
        return (v.clone(), None);
    }
    let mut out = v.clone();
    let mut norms = Vec::with_capacity(v.rows());
    for r in 0..v.rows() {
        let n = v
            .row(r)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        out.row_mut(r).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    (out, Some(norms))
}

/// Gradient through `u = v / |v|` given `u`, `|v|` and `dL/du`.
fn normalize_backward(u: &Matrix, norms: &[f64], d_u: &Matrix) -> Matrix {
    let mut d_v = Matrix::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let proj = crate::numerics::dot(u.row(r), d_u.row(r));
        for c in 0..u.cols() {
            d_v[(r, c)] = (d_u[(r, c)] - u[(r, c)] * proj) / norms[r];
        }
    }
    d_v
}

#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    pub d_logits: Matrix,
}

/// Mean over the batch of `-log softmax(logits)[target]`.
pub fn softmax_nll(logits: &Matrix, targets: &[usize]) -> Result<NllOutput> {
    let (b, c) = logits.shape();
    if targets.len() != b {
        return Err(Error::shape(
            "softmax_nll",
            format!("{} targets for {b} rows", targets.len()),
        ));
    }
    if b == 0 {
        return Err(Error::EmptyInput { op: "softmax_nll" });
    }
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(b, c);
    for (r, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::IndexOutOfRange {
                what: "classes",
                index: t,
                len: c,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += max + z.ln() - row[t];
        for j in 0..c {
            let p = (row[j] - max).exp() / z;
            d_logits[(r, j)] = (p - if j == t { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(NllOutput {
        loss: loss / b as f64,
        d_logits,
    })
}
