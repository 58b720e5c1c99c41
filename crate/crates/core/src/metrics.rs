//! Confusion matrices and Macro/Micro-F1.
//!
//! A class that never occurs in either the truth or the predictions has F1 = 0
//! and still counts in the macro average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: nodes of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|c| self.counts[c][c]).sum()
    }

    /// F1 of class `c`, with 0/0 taken as 0.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.counts[c][c] as f64;
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let actual: u64 = self.counts[c].iter().sum();
        // 2PR/(P+R) simplifies to 2tp/(predicted + actual).
        let denom = (predicted + actual) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (row, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        for label in [p, t] {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: label as i64,
                    num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

pub fn macro_micro_f1(cm: &ConfusionMatrix) -> Result<F1Scores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let c = cm.num_classes();
    let macro_f1 = (0..c).map(|k| cm.class_f1(k)).sum::<f64>() / c as f64;
    let micro_f1 = cm.correct() as f64 / total as f64;
    Ok(F1Scores { macro_f1, micro_f1 })
}

/// Scores over the nodes where both `truth` is labeled and `mask` (if given) is set.
pub fn masked_f1(
    pred: &[usize],
    truth: &[Option<usize>],
    mask: Option<&[bool]>,
    num_classes: usize,
) -> Result<F1Scores> {
    let (p, t): (Vec<usize>, Vec<usize>) = pred
        .iter()
        .zip(truth)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .filter_map(|(_, (&p, t))| t.map(|t| (p, t)))
        .unzip();
    macro_micro_f1(&confusion(&p, &t, num_classes)?)
}
