//! Label ranking average precision and evaluation loss.

use crate::corpus::ToneVector;
use crate::error::{Error, Result};
use crate::neuralnet::ProbVector;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Ground truth `y` and scores `f`, both `n_samples × n_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    y: Vec<Vec<bool>>,
    f: Vec<Vec<f64>>,
    n_labels: usize,
}

impl EvalBatch {
    pub fn new(y: Vec<Vec<bool>>, f: Vec<Vec<f64>>) -> Result<Self> {
        if y.len() != f.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} label rows vs {} score rows",
                y.len(),
                f.len()
            )));
        }
        let n_labels = y.first().map_or(0, Vec::len);
        for (i, (yr, fr)) in y.iter().zip(&f).enumerate() {
            if yr.len() != n_labels || fr.len() != n_labels {
                return Err(Error::ShapeMismatch(format!(
                    "row {i}: {} labels and {} scores, expected {n_labels}",
                    yr.len(),
                    fr.len()
                )));
            }
            if fr.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("row {i}: non-finite score")));
            }
        }
        Ok(EvalBatch { y, f, n_labels })
    }

    pub fn from_tones(targets: &[ToneVector], scores: &[ProbVector]) -> Result<Self> {
        Self::new(
            targets.iter().map(|t| t.0.to_vec()).collect(),
            scores.iter().map(|p| p.0.to_vec()).collect(),
        )
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }
}

/// Precision contribution of one sample. Samples with no positive label, or
/// with every label positive, score 1.
pub fn sample_lrap(y: &[bool], f: &[f64]) -> f64 {
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == y.len() {
        return 1.0;
    }
    let mut total = 0.0;
    for (j, _) in y.iter().enumerate().filter(|(_, &b)| b) {
        let fj = f[j];
        let rank = f.iter().filter(|&&fk| fk >= fj).count();
        let hits = y.iter().zip(f).filter(|(&yk, &fk)| yk && fk >= fj).count();
        total += hits as f64 / rank as f64;
    }
    total / n_pos as f64
}

/// Mean of [`sample_lrap`] over the batch. Ties count against a label: every
/// label scored `>=` it counts towards its rank.
pub fn lrap(batch: &EvalBatch) -> Result<f64> {
    if batch.n_samples() == 0 {
        return Err(Error::Empty("evaluation batch"));
    }
    let sum: f64 = batch
        .y
        .iter()
        .zip(&batch.f)
        .map(|(y, f)| sample_lrap(y, f))
        .sum();
    Ok(sum / batch.n_samples() as f64)
}

/// Mean binary cross-entropy of probability scores against the labels.
///
/// Scores must lie in `[0, 1]`; they are clamped to `[1e-12, 1 - 1e-12]`.
pub fn eval_loss(batch: &EvalBatch) -> Result<f64> {
    if batch.n_samples() == 0 {
        return Err(Error::Empty("evaluation batch"));
    }
    let mut total = 0.0;
    for (i, (y, f)) in batch.y.iter().zip(&batch.f).enumerate() {
        for (&yk, &p) in y.iter().zip(f) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ShapeMismatch(format!(
                    "row {i}: probability {p} outside [0, 1]"
                )));
            }
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= if yk { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / (batch.n_samples() * batch.n_labels) as f64)
}
