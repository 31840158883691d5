//! Accuracy, confusion matrices, ROC/AUC and inter-rater Jaccard matrices.

mod roc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use roc::{roc_binary, roc_csv, roc_multiclass, trapezoid_area, MulticlassRoc, RocCurve, RocPoint};

fn check_labels(values: &[usize], k: usize, what: &str) -> Result<()> {
    match values.iter().find(|&&v| v >= k) {
        Some(v) => Err(Error::InvalidArgument(format!(
            "{what} {v} out of range for {k} classes"
        ))),
        None => Ok(()),
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("accuracy", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Counts indexed `[true][predicted]`, with a row-normalized view. Rows
/// without support stay zero and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    pub zero_support: Vec<bool>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("confusion", labels.len(), predictions.len()));
    }
    check_labels(labels, k, "label")?;
    check_labels(predictions, k, "prediction")?;
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l][p] += 1;
    }
    let zero_support: Vec<bool> = counts.iter().map(|row| row.iter().sum::<u64>() == 0).collect();
    let normalized = counts
        .iter()
        .map(|row| {
            let n = row.iter().sum::<u64>();
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        counts,
        normalized,
        zero_support,
    })
}

/// `J[i][j] = |A_i & B_j| / |A_i | B_j|` where `A_i` are the items rater A
/// put in class `i`; 0/0 is taken as 0.
pub fn jaccard_matrix(a: &[usize], b: &[usize], k: usize) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() {
        return Err(Error::shape("jaccard", a.len(), b.len()));
    }
    check_labels(a, k, "rater A label")?;
    check_labels(b, k, "rater B label")?;
    let mut both = vec![vec![0u64; k]; k];
    let mut count_a = vec![0u64; k];
    let mut count_b = vec![0u64; k];
    for (&x, &y) in a.iter().zip(b) {
        both[x][y] += 1;
        count_a[x] += 1;
        count_b[y] += 1;
    }
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let union = count_a[i] + count_b[j] - both[i][j];
                    if union == 0 {
                        0.0
                    } else {
                        both[i][j] as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Everything reported for one evaluation run. `jaccard` compares the true
/// labels (rows) with the model's predictions (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub accuracy: f64,
    pub confusion_counts: Vec<Vec<u64>>,
    pub confusion_normalized: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_per_class: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_macro: Option<f64>,
    pub jaccard: Vec<Vec<f64>>,
    pub class_counts: Vec<u64>,
    pub zero_support_rows: Vec<bool>,
}

/// Assembles a bundle from per-sample class probabilities. Binary tasks
/// score with the class-1 probability; larger tasks use one-vs-rest.
/// Returns the bundle and the ROC curves it was computed from.
pub fn bundle(probabilities: &[Vec<f64>], labels: &[usize], k: usize) -> Result<(MetricsBundle, Vec<RocCurve>)> {
    if probabilities.len() != labels.len() {
        return Err(Error::shape("metrics", labels.len(), probabilities.len()));
    }
    let predictions: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
    let cm = confusion(&predictions, labels, k)?;
    let mut b = MetricsBundle {
        accuracy: accuracy(&predictions, labels)?,
        class_counts: cm.counts.iter().map(|r| r.iter().sum()).collect(),
        confusion_counts: cm.counts,
        confusion_normalized: cm.normalized,
        zero_support_rows: cm.zero_support,
        auc: None,
        auc_per_class: None,
        auc_macro: None,
        jaccard: jaccard_matrix(labels, &predictions, k)?,
    };
    let curves = if k == 2 {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[1]).collect();
        let c = roc_binary(&scores, labels)?;
        b.auc = Some(c.auc);
        vec![c]
    } else {
        let m = roc_multiclass(probabilities, labels, k)?;
        b.auc_per_class = Some(m.per_class.iter().map(|c| c.auc).collect());
        b.auc_macro = Some(m.macro_auc);
        m.per_class
    };
    Ok((b, curves))
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
