//! Classification metrics: macro F1, AUC (Mann-Whitney form) and accuracy.

use crate::error::{Error, Result};

/// Unweighted mean over classes of per-class F1. A class absent from both
/// predictions and truth contributes F1 = 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument {
            op: "macro_f1",
            message: format!("{} predictions for {} labels", pred.len(), truth.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument {
            op: "macro_f1",
            message: "need at least one sample".into(),
        });
    }
    for &v in pred.iter().chain(truth) {
        if v >= num_classes {
            return Err(Error::InvalidArgument {
                op: "macro_f1",
                message: format!("class index {v} out of range for {num_classes} classes"),
            });
        }
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            total += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(total / num_classes as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counted as 1/2 (Mann-Whitney). Labels are 0 (negative) / 1 (positive).
/// Errors when only one class is present.
pub fn auc(scores: &[f64], truth: &[usize]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidArgument {
            op: "auc",
            message: format!("{} scores for {} labels", scores.len(), truth.len()),
        });
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument {
            op: "auc",
            message: "AUC is undefined without both a positive and a negative label".into(),
        });
    }

    // Rank-sum formulation with average ranks for ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // items i..=j share the average 1-based rank
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if truth[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}
