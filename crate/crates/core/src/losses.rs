//! Weighted focal loss, mean per-class accuracy and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxcore::{OrientationClass, NUM_CLASSES};

/// Predictions are clipped to `[PROB_CLIP, 1]` before taking logarithms.
pub const PROB_CLIP: f64 = 1e-7;

/// Class weights (S, D, N) used for whole-slice segmentation training.
pub const SEGMENTATION_WEIGHTS: [f64; NUM_CLASSES] = [16.0 / 41.0, 24.0 / 41.0, 1.0 / 41.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub weights: Vec<f64>,
}

impl FocalLossConfig {
    pub fn new(gamma: f64, weights: Vec<f64>) -> Result<Self> {
        let cfg = Self { gamma, weights };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain categorical cross-entropy over `n` classes.
    pub fn cross_entropy(n: usize) -> Self {
        Self {
            gamma: 0.0,
            weights: vec![1.0; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Argument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.weights.is_empty() {
            return Err(Error::Argument("weight vector is empty".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Argument(format!(
                "weights must be non-negative, got {:?}",
                self.weights
            )));
        }
        Ok(())
    }
}

fn check_inputs(pred: &[f64], truth: &[f64], cfg: &FocalLossConfig) -> Result<usize> {
    cfg.validate()?;
    let n = cfg.n_classes();
    if pred.len() != n || truth.len() != n {
        return Err(Error::Argument(format!(
            "expected {n} classes, got prediction of {} and truth of {}",
            pred.len(),
            truth.len()
        )));
    }
    let ones = truth.iter().filter(|&&t| t == 1.0).count();
    let zeros = truth.iter().filter(|&&t| t == 0.0).count();
    if ones != 1 || zeros != n - 1 {
        return Err(Error::Argument(format!("truth {truth:?} is not one-hot")));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::Argument(format!("non-finite prediction {pred:?}")));
    }
    Ok(truth.iter().position(|&t| t == 1.0).expect("one-hot"))
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0)
}

/// `-sum_i w_i (1 - p_i)^gamma y_i ln p_i` for one prediction.
pub fn focal_loss(pred: &[f64], truth: &[f64], cfg: &FocalLossConfig) -> Result<f64> {
    let t = check_inputs(pred, truth, cfg)?;
    let p = clip(pred[t]);
    Ok(-cfg.weights[t] * (1.0 - p).powf(cfg.gamma) * p.ln())
}

/// Mean focal loss over a batch.
pub fn focal_loss_batch(preds: &[Vec<f64>], truths: &[Vec<f64>], cfg: &FocalLossConfig) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Argument(format!(
            "batch sizes differ or are empty: {} vs {}",
            preds.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        total += focal_loss(p, t, cfg)?;
    }
    Ok(total / preds.len() as f64)
}

/// Derivative of the focal loss with respect to each predicted probability.
///
/// Entries whose prediction was clipped have zero derivative.
pub fn focal_loss_gradient(pred: &[f64], truth: &[f64], cfg: &FocalLossConfig) -> Result<Vec<f64>> {
    let t = check_inputs(pred, truth, cfg)?;
    let mut grad = vec![0.0; cfg.n_classes()];
    grad[t] = true_class_derivative(pred[t], cfg.weights[t], cfg.gamma);
    Ok(grad)
}

fn true_class_derivative(raw: f64, weight: f64, gamma: f64) -> f64 {
    if raw < PROB_CLIP || raw > 1.0 {
        return 0.0;
    }
    let q = 1.0 - raw;
    let focal_term = if q > 0.0 && gamma > 0.0 {
        gamma * q.powf(gamma - 1.0) * raw.ln()
    } else {
        0.0
    };
    weight * (focal_term - q.powf(gamma) / raw)
}

/// Loss and gradient with respect to the logits feeding a softmax.
///
/// Returns `(loss, d loss / d logits)` for the true class `target`.
pub fn focal_loss_softmax(probs: &[f32], target: usize, cfg: &FocalLossConfig) -> (f64, Vec<f32>) {
    let p = clip(probs[target] as f64);
    let w = cfg.weights[target];
    let loss = -w * (1.0 - p).powf(cfg.gamma) * p.ln();
    let g_true = true_class_derivative(probs[target] as f64, w, cfg.gamma);
    // softmax Jacobian: dz_i = p_i * (g_i - sum_j g_j p_j), with g nonzero only at target
    let dot = g_true * probs[target] as f64;
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let gi = if i == target { g_true } else { 0.0 };
            (pi as f64 * (gi - dot)) as f32
        })
        .collect();
    (loss, grad)
}

/// Mean of per-class recalls over the classes present in `truth`.
///
/// Classes that never occur in `truth` are left out of the mean.
pub fn mean_class_accuracy_n(pred: &[usize], truth: &[usize], n: usize) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "need equal non-empty label sequences, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut correct = vec![0usize; n];
    let mut total = vec![0usize; n];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n || t >= n {
            return Err(Error::Argument(format!("label out of range 0..{n}")));
        }
        total[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    let present: Vec<usize> = (0..n).filter(|&j| total[j] > 0).collect();
    if present.len() < n {
        log::warn!(
            "mean class accuracy over {} of {n} classes; absent classes excluded",
            present.len()
        );
    }
    let sum: f64 = present
        .iter()
        .map(|&j| correct[j] as f64 / total[j] as f64)
        .sum();
    Ok(sum / present.len() as f64)
}

pub fn mean_class_accuracy(pred: &[OrientationClass], truth: &[OrientationClass]) -> Result<f64> {
    let p: Vec<usize> = pred.iter().map(|c| c.index()).collect();
    let t: Vec<usize> = truth.iter().map(|c| c.index()).collect();
    mean_class_accuracy_n(&p, &t, NUM_CLASSES)
}

/// Count matrix with truth along rows and prediction along columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.n + pred]
    }

    pub fn row(&self, truth: usize) -> &[usize] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Argument("label sequences differ in length".into()));
    }
    let mut counts = vec![0usize; n * n];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n || t >= n {
            return Err(Error::Argument(format!(
                "label ({t}, {p}) out of range 0..{n}"
            )));
        }
        counts[t * n + p] += 1;
    }
    Ok(ConfusionMatrix { n, counts })
}
