//! Linear probe: multinomial logistic regression on frozen embeddings,
//! full-batch gradient descent with L2 penalty, model selection by best
//! validation Macro-F1.

use rand_chacha::ChaCha8Rng;

use crate::error::{HecoError, Result};
use crate::eval::metrics::classification_metrics;
use crate::eval::Split;
use crate::tensor::{glorot_init, Matrix};

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub lr: f64,
    pub l2: f64,
    pub steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.05,
            l2: 1e-4,
            steps: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub w: Matrix,
    pub b: Matrix,
    pub best_val_macro_f1: f64,
}

impl TrainedProbe {
    /// Class scores (softmax probabilities) for a set of rows.
    pub fn scores(&self, embeddings: &Matrix, rows: &[usize]) -> Matrix {
        let c = self.w.cols();
        let mut out = Matrix::zeros(rows.len(), c);
        for (r, &i) in rows.iter().enumerate() {
            let x = embeddings.row(i);
            let mut logits = vec![0.0; c];
            for (j, l) in logits.iter_mut().enumerate() {
                *l = self.b.get(0, j)
                    + x.iter()
                        .enumerate()
                        .map(|(k, &v)| v * self.w.get(k, j))
                        .sum::<f64>();
            }
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            for (j, l) in logits.iter().enumerate() {
                out.set(r, j, l / sum);
            }
        }
        out
    }

    pub fn predict(&self, embeddings: &Matrix, rows: &[usize]) -> Vec<usize> {
        let scores = self.scores(embeddings, rows);
        (0..rows.len())
            .map(|r| {
                (0..scores.cols())
                    .max_by(|&a, &b| scores.get(r, a).partial_cmp(&scores.get(r, b)).unwrap())
                    .unwrap()
            })
            .collect()
    }
}

/// Fit the probe on `split.train`, selecting the step with the best
/// validation Macro-F1. Test labels are never consulted here.
pub fn train_linear_probe(
    embeddings: &Matrix,
    labels: &[usize],
    split: &Split,
    classes: usize,
    cfg: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedProbe> {
    if labels.len() != embeddings.rows() {
        return Err(HecoError::Contract("labels misaligned with embeddings".into()));
    }
    let mut seen = vec![false; classes];
    for &i in &split.train {
        let c = labels[i];
        if c >= classes {
            return Err(HecoError::Data(format!("label {c} out of range")));
        }
        seen[c] = true;
    }
    if seen.iter().any(|&s| !s) {
        return Err(HecoError::Data(
            "some class is absent from the probe training split".into(),
        ));
    }
    let d = embeddings.cols();
    let n = split.train.len() as f64;
    // Small random init so repeated evaluation runs differ; scaled down to
    // stay near the zero-init optimum path.
    let mut w = glorot_init(d, classes, rng).scale(0.1);
    let mut b = Matrix::zeros(1, classes);

    let val_truth: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
    let mut best: Option<TrainedProbe> = None;

    // L2 is applied as a proximal shrinkage step, which stays stable for
    // arbitrarily large penalties and collapses to uniform predictions in the
    // fully regularized limit.
    let shrink = 1.0 / (1.0 + cfg.lr * cfg.l2);

    for _ in 0..cfg.steps {
        // Forward on train.
        let mut gw = Matrix::zeros(d, classes);
        let mut gb = Matrix::zeros(1, classes);
        for &i in &split.train {
            let x = embeddings.row(i);
            let mut logits = vec![0.0; classes];
            for (j, l) in logits.iter_mut().enumerate() {
                *l = b.get(0, j)
                    + x.iter().enumerate().map(|(k, &v)| v * w.get(k, j)).sum::<f64>();
            }
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            for j in 0..classes {
                let p = logits[j] / sum;
                let delta = (p - f64::from(labels[i] == j)) / n;
                gb.set(0, j, gb.get(0, j) + delta);
                for (k, &v) in x.iter().enumerate() {
                    gw.set(k, j, gw.get(k, j) + delta * v);
                }
            }
        }
        for (pw, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *pw = (*pw - cfg.lr * g) * shrink;
        }
        for (pb, g) in b.as_mut_slice().iter_mut().zip(gb.as_slice()) {
            *pb -= cfg.lr * g;
        }

        let candidate = TrainedProbe {
            w: w.clone(),
            b: b.clone(),
            best_val_macro_f1: 0.0,
        };
        let val_pred = candidate.predict(embeddings, &split.val);
        let val_scores = candidate.scores(embeddings, &split.val);
        let m = classification_metrics(&val_pred, &val_scores, &val_truth)?;
        if best
            .as_ref()
            .map_or(true, |b| m.macro_f1 > b.best_val_macro_f1)
        {
            best = Some(TrainedProbe {
                best_val_macro_f1: m.macro_f1,
                ..candidate
            });
        }
    }
    best.ok_or_else(|| HecoError::Contract("probe ran zero steps".into()))
}
