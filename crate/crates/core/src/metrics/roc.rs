use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// From (0, 0) at threshold +inf to (1, 1) at the lowest score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// `num / den` rounded half-to-even onto the grid of multiples of 2^-53.
/// On that grid `1 - x` is exact and rounding is symmetric, so the area of
/// the complementary curve is exactly one minus this one.
fn grid_ratio(num: u128, den: u128) -> f64 {
    const BITS: u32 = 53;
    let scaled = num << BITS;
    let mut q = scaled / den;
    let r = scaled % den;
    match (2 * r).cmp(&den) {
        Ordering::Greater => q += 1,
        Ordering::Equal => q += q & 1,
        Ordering::Less => {}
    }
    q as f64 / (1u128 << BITS) as f64
}

/// ROC curve with one point per distinct score. The area is the trapezoid
/// rule evaluated in exact integer arithmetic, which equals the pairwise
/// statistic P(s+ > s-) + P(s+ = s-)/2.
pub fn roc_binary(scores: &[f64], labels: &[usize]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc", scores.len(), labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!(
            "binary ROC labels must be 0 or 1, found {l}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("ROC scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        let only = labels.first().copied().unwrap_or(0);
        return Err(Error::AucUndefined(only));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: grid_ratio(twice_area, 2 * pos * neg),
    })
}

/// One-vs-rest curves over probability columns, with the unweighted mean
/// of their areas.
#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassRoc {
    pub per_class: Vec<RocCurve>,
    pub macro_auc: f64,
}

pub fn roc_multiclass(probabilities: &[Vec<f64>], labels: &[usize], k: usize) -> Result<MulticlassRoc> {
    if probabilities.len() != labels.len() {
        return Err(Error::shape("multiclass roc", probabilities.len(), labels.len()));
    }
    for (i, row) in probabilities.iter().enumerate() {
        if row.len() != k {
            return Err(Error::shape("probability row", k, row.len()));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probability row {i} sums to {sum}")));
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {l} out of range for {k} classes"
        )));
    }
    let missing: Vec<usize> = (0..k).filter(|c| !labels.contains(c)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }
    let per_class = (0..k)
        .map(|c| {
            let scores: Vec<f64> = probabilities.iter().map(|row| row[c]).collect();
            let onehot: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
            roc_binary(&scores, &onehot)
        })
        .collect::<Result<Vec<_>>>()?;
    let macro_auc = per_class.iter().map(|c| c.auc).sum::<f64>() / k as f64;
    Ok(MulticlassRoc { per_class, macro_auc })
}

/// Trapezoid area under stored points, in floating point.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn roc_csv(points: &[RocPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("roc buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let s = [0.9, 0.8, 0.3, 0.1];
        assert_eq!(roc_binary(&s, &[1, 1, 0, 0]).unwrap().auc, 1.0);
        assert_eq!(roc_binary(&s, &[0, 0, 1, 1]).unwrap().auc, 0.0);
        assert_eq!(roc_binary(&[0.6, 0.4, 0.6, 0.4], &[1, 1, 0, 0]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_binary(&[0.1, 0.2], &[1, 1]), Err(Error::AucUndefined(1))));
    }

    #[test]
    fn grid_rounding_is_symmetric() {
        for (num, den) in [(1u128, 3u128), (2, 3), (5, 7), (1, 2), (123, 1000)] {
            assert_eq!(grid_ratio(den - num, den), 1.0 - grid_ratio(num, den));
        }
    }

    #[test]
    fn csv_header() {
        let c = roc_binary(&[0.2, 0.7], &[0, 1]).unwrap();
        let text = String::from_utf8(roc_csv(&c.points).unwrap()).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\n"), "{text}");
    }

    #[test]
    fn missing_class_is_listed() {
        let p = vec![vec![0.5, 0.5, 0.0]; 2];
        match roc_multiclass(&p, &[0, 0], 3) {
            Err(Error::MissingClasses(m)) => assert_eq!(m, vec![1, 2]),
            other => panic!("{other:?}"),
        }
    }
}
