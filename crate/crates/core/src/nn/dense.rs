use crate::error::{Error, Result};
use crate::nn::kernels::{axpy, dot};
use crate::tensor::{Dims, Real, Tensor4};

/// Fully-connected head mapping each flattened batch item to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseGrad<T> {
    pub fn zeros_like(layer: &DenseLayer<T>) -> Self {
        Self {
            weights: vec![T::zero(); layer.weights.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.dims().item_len() != self.in_features {
            return Err(Error::shape(
                "dense",
                format!("{} features per item", self.in_features),
                x.dims(),
            ));
        }
        Ok(())
    }

    /// Logits as a `(batch, out_features, 1, 1)` tensor.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let batch = x.dims().batch;
        let mut out = Tensor4::zeros(Dims::new(batch, self.out_features, 1, 1));
        for b in 0..batch {
            let features = x.item(b);
            let logits = out.item_mut(b);
            for (k, l) in logits.iter_mut().enumerate() {
                let row = &self.weights[k * self.in_features..(k + 1) * self.in_features];
                *l = dot(row, features) + self.bias[k];
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>, grad: &mut DenseGrad<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let batch = x.dims().batch;
        let expected = Dims::new(batch, self.out_features, 1, 1);
        if grad_out.dims() != expected {
            return Err(Error::shape("dense backward", expected, grad_out.dims()));
        }
        let mut grad_in = Tensor4::zeros(x.dims());
        for b in 0..batch {
            let features = x.item(b);
            let g = grad_out.item(b);
            let gi = grad_in.item_mut(b);
            for (k, &gk) in g.iter().enumerate() {
                grad.bias[k] = grad.bias[k] + gk;
                let span = k * self.in_features..(k + 1) * self.in_features;
                axpy(gk, features, &mut grad.weights[span.clone()]);
                axpy(gk, &self.weights[span], gi);
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[[f64; 2]]) -> Tensor4<f64> {
        let data = rows.iter().flatten().copied().collect();
        Tensor4::from_vec(Dims::new(rows.len(), 2, 1, 1), data).unwrap()
    }

    #[test]
    fn bias_only_head() {
        let mut layer = DenseLayer::<f64>::zeros(2, 2);
        layer.bias = vec![0.3, -0.3];
        let y = layer.forward(&features(&[[1.0, 2.0], [-4.0, 9.0]])).unwrap();
        assert_eq!(y.data(), &[0.3, -0.3, 0.3, -0.3]);
    }

    #[test]
    fn identity_weights_pass_features() {
        let mut layer = DenseLayer::<f64>::zeros(2, 2);
        layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        let y = layer.forward(&features(&[[5.0, 7.0]])).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
    }

    #[test]
    fn matrix_vector_product() {
        let mut layer = DenseLayer::<f64>::zeros(2, 2);
        layer.weights = vec![1.0, 2.0, 3.0, 4.0];
        let y = layer.forward(&features(&[[1.0, 1.0]])).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn feature_count_mismatch() {
        let layer = DenseLayer::<f64>::zeros(3, 2);
        assert!(matches!(
            layer.forward(&features(&[[1.0, 1.0]])),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
