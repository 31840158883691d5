use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ManifestRecord;
use crate::error::{Error, Result};
use crate::pgm::Gray8;

/// Classification task: three quality grades, or poor vs. acceptable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Three,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Three => 3,
        }
    }

    /// Task label for a three-grade label (already range checked).
    pub fn map(self, label: usize) -> usize {
        match self {
            Task::Binary => label.min(1),
            Task::Three => label,
        }
    }

    pub fn from_classes(k: usize) -> Result<Self> {
        match k {
            2 => Ok(Task::Binary),
            3 => Ok(Task::Three),
            _ => Err(Error::InvalidArgument(format!("no task with {k} classes"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Three => "three",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "three" => Ok(Task::Three),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Which label a record contributes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPolicy {
    #[default]
    RaterA,
    RaterB,
    MeanRound,
}

impl LabelPolicy {
    pub fn label(self, record: &ManifestRecord) -> usize {
        match self {
            LabelPolicy::RaterA => record.rater_a,
            LabelPolicy::RaterB => record.rater_b,
            LabelPolicy::MeanRound => (record.rater_a + record.rater_b).div_ceil(2),
        }
    }
}

impl FromStr for LabelPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rater-a" | "rater_a" => Ok(LabelPolicy::RaterA),
            "rater-b" | "rater_b" => Ok(LabelPolicy::RaterB),
            "mean-round" | "mean_round" => Ok(LabelPolicy::MeanRound),
            other => Err(Error::InvalidArgument(format!("unknown label policy {other:?}"))),
        }
    }
}

/// Merges diagnostic (1) and excellent (2) into one class. Errors name the
/// position of the first invalid label.
pub fn binarize_labels(labels: &[i64]) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            0 => Ok(0),
            1 | 2 => Ok(1),
            _ => Err(Error::LabelOutOfRange {
                id: format!("#{i}"),
                label: l,
            }),
        })
        .collect()
}

/// 8-bit pixels scaled by 1/255.
pub fn normalize_image(img: &Gray8) -> Vec<f32> {
    img.pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

/// Combines two raters' labels; mean-round rounds halves up.
pub fn aggregate_raters(a: &[usize], b: &[usize], policy: LabelPolicy) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape("aggregate raters", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| match policy {
            LabelPolicy::RaterA => x,
            LabelPolicy::RaterB => y,
            LabelPolicy::MeanRound => (x + y).div_ceil(2),
        })
        .collect())
}

/// Per-class counts under `task` of the labels chosen by `policy`.
pub fn class_distribution(records: &[ManifestRecord], task: Task, policy: LabelPolicy) -> Vec<usize> {
    let mut counts = vec![0; task.num_classes()];
    for r in records {
        counts[task.map(policy.label(r))] += 1;
    }
    counts
}
