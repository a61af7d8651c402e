//! Worst-group, weighted and mean accuracy, binary AUROC, loss gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_state::{LossVector, SimplexWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub per_group_accuracy: Vec<f64>,
    pub worst: f64,
    /// Weighted by training-split group proportions.
    pub weighted_average: f64,
    pub mean: f64,
    pub weights_used: Vec<f64>,
}

impl GroupMetrics {
    /// Aggregates already-computed per-group accuracies.
    pub fn from_accuracies(acc: Vec<f64>, train_weights: &SimplexWeights) -> Result<Self> {
        let w = train_weights.as_slice();
        if w.len() != acc.len() {
            return Err(Error::Shape {
                context: "train weights",
                expected: acc.len(),
                got: w.len(),
            });
        }
        if acc.is_empty() {
            return Err(Error::invalid("per_group_accuracy", "no groups"));
        }
        let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let weighted_average = acc.iter().zip(w).map(|(a, w)| a * w).sum();
        Ok(Self {
            per_group_accuracy: acc,
            worst,
            weighted_average,
            mean,
            weights_used: w.to_vec(),
        })
    }
}

pub fn group_accuracy(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    train_weights: &SimplexWeights,
) -> Result<GroupMetrics> {
    if predictions.len() != labels.len() || groups.len() != labels.len() {
        return Err(Error::Shape {
            context: "predictions/labels/groups",
            expected: labels.len(),
            got: if predictions.len() != labels.len() {
                predictions.len()
            } else {
                groups.len()
            },
        });
    }
    let k = train_weights.as_slice().len();
    let mut correct = vec![0usize; k];
    let mut size = vec![0usize; k];
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(groups) {
        if g >= k {
            return Err(Error::invalid("groups", format!("group id {g} out of range 0..{k}")));
        }
        size[g] += 1;
        correct[g] += usize::from(p == y);
    }
    if let Some(g) = size.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup { group: g });
    }
    let acc = correct.iter().zip(&size).map(|(&c, &s)| c as f64 / s as f64).collect();
    GroupMetrics::from_accuracies(acc, train_weights)
}

/// Mann–Whitney AUROC with average ranks for tied scores.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "auroc scores",
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::invalid(format!("labels[{i}]"), "binary labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores", "NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("labels", "both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        let pos = order[i..=j].iter().filter(|&&t| labels[t] == 1).count();
        pos_rank_sum += avg * pos as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

pub fn loss_gap(losses: &LossVector) -> f64 {
    losses.max() - losses.min()
}
