//! Similarity-based prediction and validation accuracy, similarity-matrix
//! diagnostics, and the paired two-tailed t statistic.

use std::io::Write;

use crate::components::{Apn, Component, Lta, Nha, ToyVqa};
use crate::data::{Task, Triplet};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// LTA representations of every candidate answer.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerBank {
    pub answers: Vec<String>,
    /// `C x S`.
    pub reps: Matrix,
    apn_digest: String,
    lta_digest: String,
}

impl AnswerBank {
    pub fn build(task: &Task, apn: &Apn, lta: &Lta) -> Result<Self> {
        if task.answers.is_empty() {
            return Err(Error::Data("answer list is empty".into()));
        }
        let tokens: Vec<Vec<usize>> = task
            .answers
            .iter()
            .map(|a| task.tokenize_answer(a))
            .collect();
        let (v_apn, _) = apn.forward(&tokens)?;
        let (reps, _) = lta.forward(&v_apn)?;
        Ok(Self {
            answers: task.answers.clone(),
            reps,
            apn_digest: apn.params().digest(),
            lta_digest: lta.params().digest(),
        })
    }

    /// Builds a bank from explicit representations. It is never considered
    /// fresh with respect to any component pair.
    pub fn from_reps(answers: Vec<String>, reps: Matrix) -> Result<Self> {
        if answers.len() != reps.rows() {
            return Err(Error::shape(
                "AnswerBank::from_reps",
                format!("{} answers for {} rows", answers.len(), reps.rows()),
            ));
        }
        Ok(Self {
            answers,
            reps,
            apn_digest: String::new(),
            lta_digest: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Whether the cached representations came from exactly these
    /// parameters.
    pub fn is_fresh(&self, apn: &Apn, lta: &Lta) -> bool {
        self.apn_digest == apn.params().digest() && self.lta_digest == lta.params().digest()
    }
}

/// Index of the answer whose representation has the largest dot product
/// with `v_nha`; ties go to the lowest index.
pub fn predict_answer(v_nha: &[f64], bank: &AnswerBank) -> Result<usize> {
    if bank.is_empty() {
        return Err(Error::Data("answer bank is empty".into()));
    }
    if v_nha.len() != bank.reps.cols() {
        return Err(Error::shape(
            "predict_answer",
            format!(
                "query of width {} for bank width {}",
                v_nha.len(),
                bank.reps.cols()
            ),
        ));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..bank.len() {
        let s = dot(v_nha, bank.reps.row(c));
        if s > best.1 {
            best = (c, s);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Breakdown by the synthetic latent class.
    pub per_class: Vec<ClassAccuracy>,
}

/// Runs VQA then NHA (eval mode) on each validation example and scores the
/// prediction against the full answer bank.
pub fn val_accuracy(
    vqa: &ToyVqa,
    nha: &Nha,
    bank: &AnswerBank,
    task: &Task,
    validation: &[Triplet],
) -> Result<AccuracyReport> {
    if validation.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut correct = 0;
    let mut per_class: Vec<ClassAccuracy> = Vec::new();
    for chunk in validation.chunks(256) {
        let refs: Vec<&Triplet> = chunk.iter().collect();
        let batch = task.batch(&refs)?;
        let (v_vqa, _) = vqa.forward(&batch.images, &batch.questions)?;
        let v_nha = nha.infer(&v_vqa)?;
        for (r, t) in chunk.iter().enumerate() {
            let truth = bank
                .answers
                .iter()
                .position(|a| *a == t.answer)
                .ok_or_else(|| Error::Data(format!("answer {:?} missing from bank", t.answer)))?;
            let hit = predict_answer(v_nha.row(r), bank)? == truth;
            correct += usize::from(hit);
            if per_class.len() <= t.class_id {
                per_class.extend(
                    (per_class.len()..=t.class_id).map(|class_id| ClassAccuracy {
                        class_id,
                        correct: 0,
                        total: 0,
                    }),
                );
            }
            per_class[t.class_id].total += 1;
            per_class[t.class_id].correct += usize::from(hit);
        }
    }
    Ok(AccuracyReport {
        accuracy: correct as f64 / validation.len() as f64,
        correct,
        total: validation.len(),
        per_class,
    })
}

/// Fraction of rows whose best match inside the batch is their own pair.
/// Diagnostic only: it is much easier than scoring against every answer.
pub fn batch_local_accuracy(v_nha: &Matrix, v_lta: &Matrix) -> Result<f64> {
    let bank = AnswerBank::from_reps(
        (0..v_lta.rows()).map(|i| i.to_string()).collect(),
        v_lta.clone(),
    )?;
    let mut hits = 0;
    for r in 0..v_nha.rows() {
        hits += usize::from(predict_answer(v_nha.row(r), &bank)? == r);
    }
    Ok(hits as f64 / v_nha.rows().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub matrix: Matrix,
    pub mean_diag: f64,
    pub mean_offdiag: f64,
}

impl SimilarityMatrix {
    pub fn gap(&self) -> f64 {
        self.mean_diag - self.mean_offdiag
    }

    /// Header-less CSV, one line per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.matrix.rows() {
            let line: Vec<String> = self.matrix.row(r).iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// `M[i][j] = v_nha[i] . v_lta[j]` with diagonal and off-diagonal means.
pub fn similarity_matrix(v_nha: &Matrix, v_lta: &Matrix) -> Result<SimilarityMatrix> {
    v_nha.ensure_same_shape(v_lta, "similarity_matrix")?;
    let matrix = v_nha.matmul_t(v_lta)?;
    let b = matrix.rows();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                diag += matrix[(i, j)];
            } else {
                off += matrix[(i, j)];
            }
        }
    }
    let n_off = b * b.saturating_sub(1);
    Ok(SimilarityMatrix {
        matrix,
        mean_diag: if b > 0 { diag / b as f64 } else { 0.0 },
        mean_offdiag: if n_off > 0 { off / n_off as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
}

impl TTest {
    /// Two-tailed decision against a critical value for `df`.
    pub fn is_significant(&self, critical: f64) -> bool {
        self.t.abs() > critical
    }
}

/// Two-tailed critical value of Student's t at alpha 0.05 and 6 degrees of
/// freedom, as used for comparing seven model variants.
pub const T_CRITICAL_DF6: f64 = 2.477;

/// Paired t statistic `mean(d) / (sd(d) / sqrt(n))` with `d = a - b` and the
/// `n - 1` sample standard deviation.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "paired_t_test",
            format!("{} vs {} samples", a.len(), b.len()),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    Ok(TTest {
        t: mean / (var.sqrt() / (n as f64).sqrt()),
        df: n - 1,
    })
}
