use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

#[derive(Clone, Debug)]
pub struct SoftmaxCrossEntropy<T> {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    /// `(batch, K, 1, 1)` class probabilities.
    pub probabilities: Tensor4<T>,
    /// d(loss)/d(logits), `(p - onehot) / batch`.
    pub grad: Tensor4<T>,
}

/// Numerically stable row softmax of a `(batch, K, 1, 1)` logit tensor.
pub fn softmax<T: Real>(logits: &Tensor4<T>) -> Tensor4<T> {
    let d = logits.dims();
    let mut out = logits.clone();
    for b in 0..d.batch {
        let row = out.item_mut(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn softmax_cross_entropy<T: Real>(logits: &Tensor4<T>, labels: &[usize]) -> Result<SoftmaxCrossEntropy<T>> {
    let d = logits.dims();
    let k = d.item_len();
    if labels.len() != d.batch {
        return Err(Error::shape(
            "softmax cross-entropy",
            format!("{} labels", d.batch),
            format!("{} labels", labels.len()),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            id: format!("batch[{i}]"),
            label: l as i64,
        });
    }
    let probabilities = softmax(logits);
    let inv_batch = T::lit(1.0 / d.batch as f64);
    let mut grad = probabilities.clone();
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        // log p via log-sum-exp for accuracy when p underflows
        let row = logits.item(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss -= row[label].as_f64() - lse;
        let g = grad.item_mut(b);
        g[label] = g[label] - T::one();
        for v in g.iter_mut() {
            *v = *v * inv_batch;
        }
    }
    Ok(SoftmaxCrossEntropy {
        loss: loss / d.batch as f64,
        probabilities,
        grad,
    })
}

/// Builds a `(batch, K, 1, 1)` logit tensor from rows.
pub fn logits_from_rows<T: Real>(rows: &[Vec<T>]) -> Option<Tensor4<T>> {
    let k = rows.first()?.len();
    if rows.iter().any(|r| r.len() != k) {
        return None;
    }
    Tensor4::from_vec(Dims::new(rows.len(), k, 1, 1), rows.iter().flatten().copied().collect())
}
