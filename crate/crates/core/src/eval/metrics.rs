//! Classification metrics for the linear probe: Macro-F1, Micro-F1 and
//! macro-averaged one-vs-rest AUC.

use crate::error::{HecoError, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub auc: f64,
}

/// Compute all three metrics. `scores` holds one column of class scores per
/// class; macro averages run over the classes present in `truth`.
pub fn classification_metrics(
    pred: &[usize],
    scores: &Matrix,
    truth: &[usize],
) -> Result<ClassificationMetrics> {
    if pred.len() != truth.len() || scores.rows() != truth.len() {
        return Err(HecoError::Contract(format!(
            "misaligned metric inputs: {} preds, {} rows of scores, {} labels",
            pred.len(),
            scores.rows(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(HecoError::Contract("empty metric inputs".into()));
    }
    let classes = scores.cols();
    if pred.iter().chain(truth).any(|&c| c >= classes) {
        return Err(HecoError::Data(format!(
            "class id outside the {classes} score columns"
        )));
    }
    let mut present: Vec<usize> = truth.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(HecoError::Contract(
            "AUC is undefined for single-class ground truth".into(),
        ));
    }

    let mut f1_sum = 0.0;
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1;
        }
    }
    for &c in &present {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fnn = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
    }
    let macro_f1 = f1_sum / present.len() as f64;
    // With one prediction per sample, global TP/FP/FN micro-F1 reduces to
    // accuracy.
    let micro_f1 = correct as f64 / truth.len() as f64;

    let mut auc_sum = 0.0;
    let mut auc_classes = 0usize;
    for &c in &present {
        let col: Vec<f64> = (0..truth.len()).map(|r| scores.get(r, c)).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if let Some(auc) = binary_auc(&col, &pos) {
            auc_sum += auc;
            auc_classes += 1;
        }
    }
    if auc_classes == 0 {
        return Err(HecoError::Contract("no class admits a one-vs-rest AUC".into()));
    }
    let auc = auc_sum / auc_classes as f64;
    Ok(ClassificationMetrics {
        macro_f1,
        micro_f1,
        auc,
    })
}

/// Mann-Whitney AUC with midranks for ties. None when either class is empty.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&i| positive[i]).map(|i| ranks[i]).sum();
    Some((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot_scores(pred: &[usize], classes: usize) -> Matrix {
        let mut m = Matrix::zeros(pred.len(), classes);
        for (r, &c) in pred.iter().enumerate() {
            m.set(r, c, 1.0);
        }
        m
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let m = classification_metrics(&truth, &onehot_scores(&truth, 3), &truth).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.micro_f1, 1.0);
        assert_eq!(m.auc, 1.0);
    }

    #[test]
    fn hand_computed_confusion() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 1, 1];
        let m = classification_metrics(&pred, &onehot_scores(&pred, 2), &truth).unwrap();
        assert!((m.micro_f1 - 0.75).abs() < 1e-12);
        let expect = (2.0 / 3.0 + 4.0 / 5.0) / 2.0;
        assert!((m.macro_f1 - expect).abs() < 1e-12);
    }

    #[test]
    fn inverted_scores_flip_auc() {
        let truth = vec![0, 0, 1, 1, 1, 0];
        let mut scores = Matrix::zeros(6, 2);
        let vals = [0.9, 0.4, 0.8, 0.35, 0.77, 0.2];
        for (r, &v) in vals.iter().enumerate() {
            scores.set(r, 1, v);
            scores.set(r, 0, -v);
        }
        let pred: Vec<usize> = vals.iter().map(|&v| usize::from(v > 0.5)).collect();
        let m = classification_metrics(&pred, &scores, &truth).unwrap();
        let mut inv = Matrix::zeros(6, 2);
        for (r, &v) in vals.iter().enumerate() {
            inv.set(r, 1, -v);
            inv.set(r, 0, v);
        }
        let m2 = classification_metrics(&pred, &inv, &truth).unwrap();
        assert!((m.auc + m2.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_truth_is_an_error() {
        let truth = vec![1, 1, 1];
        let pred = vec![1, 0, 1];
        assert!(classification_metrics(&pred, &onehot_scores(&pred, 2), &truth).is_err());
    }

    #[test]
    fn tied_scores_use_midranks() {
        let truth = vec![0, 1, 0, 1];
        let mut scores = Matrix::zeros(4, 2);
        for r in 0..4 {
            scores.set(r, 1, 0.5);
            scores.set(r, 0, 0.5);
        }
        let pred = vec![0, 0, 0, 0];
        // All-tied scores rank at chance.
        let err = classification_metrics(&pred, &scores, &truth);
        assert!((err.unwrap().auc - 0.5).abs() < 1e-12);
    }
}
