use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Per-channel statistics of one training batch; `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrad<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNormGrad<T> {
    pub fn zeros_like(layer: &BatchNormLayer<T>) -> Self {
        Self {
            gamma: vec![T::zero(); layer.channels()],
            beta: vec![T::zero(); layer.channels()],
        }
    }
}

impl<T: Real> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.dims().channels != self.channels() {
            return Err(Error::shape(
                "batchnorm",
                format!("{} channels", self.channels()),
                x.dims(),
            ));
        }
        Ok(())
    }

    pub fn forward_inference(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let d = x.dims();
        let plane = d.plane();
        let mut out = x.clone();
        for b in 0..d.batch {
            let item = out.item_mut(b);
            for c in 0..d.channels {
                let inv = T::one() / (self.running_var[c] + T::lit(self.epsilon)).sqrt();
                let scale = self.gamma[c] * inv;
                let shift = self.beta[c] - self.running_mean[c] * scale;
                for v in &mut item[c * plane..(c + 1) * plane] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(out)
    }

    /// Normalizes with batch statistics. The layer itself is not mutated;
    /// the returned [`BatchStats`] feed [`BatchNormLayer::update_running`].
    #[allow(clippy::needless_range_loop)]
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BatchNormCache<T>, BatchStats)> {
        self.check(x)?;
        let d = x.dims();
        let plane = d.plane();
        let population = d.batch * plane;
        if population < 2 {
            return Err(Error::DegenerateBatch(population));
        }
        let n = population as f64;
        let mut stats = BatchStats {
            mean: vec![0.0; d.channels],
            var: vec![0.0; d.channels],
        };
        let mut normalized = Tensor4::zeros(d);
        let mut inv_std = vec![T::zero(); d.channels];
        for c in 0..d.channels {
            let channel = |b: usize| &x.item(b)[c * plane..(c + 1) * plane];
            let mean = (0..d.batch).flat_map(channel).map(|v| v.as_f64()).sum::<f64>() / n;
            let ss = (0..d.batch)
                .flat_map(channel)
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>();
            let var = ss / n;
            stats.mean[c] = mean;
            stats.var[c] = ss / (n - 1.0);
            let inv = T::lit(1.0 / (var + self.epsilon).sqrt());
            let m = T::lit(mean);
            inv_std[c] = inv;
            for b in 0..d.batch {
                let src = channel(b);
                let dst = &mut normalized.item_mut(b)[c * plane..(c + 1) * plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v - m) * inv;
                }
            }
        }
        let mut out = normalized.clone();
        for b in 0..d.batch {
            let item = out.item_mut(b);
            for c in 0..d.channels {
                let (g, be) = (self.gamma[c], self.beta[c]);
                for v in &mut item[c * plane..(c + 1) * plane] {
                    *v = *v * g + be;
                }
            }
        }
        Ok((out, BatchNormCache { normalized, inv_std }, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for c in 0..self.channels() {
            let rm = self.running_mean[c].as_f64();
            let rv = self.running_var[c].as_f64();
            self.running_mean[c] = T::lit((1.0 - m) * rm + m * stats.mean[c]);
            self.running_var[c] = T::lit(((1.0 - m) * rv + m * stats.var[c]).max(0.0));
        }
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor4<T>,
        grad: &mut BatchNormGrad<T>,
    ) -> Result<Tensor4<T>> {
        let d = cache.normalized.dims();
        if grad_out.dims() != d {
            return Err(Error::shape("batchnorm backward", d, grad_out.dims()));
        }
        let plane = d.plane();
        let n = T::lit((d.batch * plane) as f64);
        let mut grad_in = Tensor4::zeros(d);
        for c in 0..d.channels {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..d.batch {
                let dy = &grad_out.item(b)[c * plane..(c + 1) * plane];
                let xh = &cache.normalized.item(b)[c * plane..(c + 1) * plane];
                for (&g, &h) in dy.iter().zip(xh) {
                    sum_dy = sum_dy + g;
                    sum_dy_xhat = sum_dy_xhat + g * h;
                }
            }
            grad.gamma[c] = grad.gamma[c] + sum_dy_xhat;
            grad.beta[c] = grad.beta[c] + sum_dy;
            let k = self.gamma[c] * cache.inv_std[c] / n;
            for b in 0..d.batch {
                let dy = &grad_out.item(b)[c * plane..(c + 1) * plane];
                let xh = &cache.normalized.item(b)[c * plane..(c + 1) * plane];
                let dst = &mut grad_in.item_mut(b)[c * plane..(c + 1) * plane];
                for ((o, &g), &h) in dst.iter_mut().zip(dy).zip(xh) {
                    *o = k * (n * g - sum_dy - h * sum_dy_xhat);
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, seed: u64, scale: f64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len()).map(|_| rng.random_range(-scale..scale) + 1.5).collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let bn = BatchNormLayer::<f64>::new(3);
        let x = random(Dims::new(4, 3, 4, 4), 7, 10.0);
        let (y, _, _) = bn.forward_train(&x).unwrap();
        let plane = 16;
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.item(b)[c * plane..(c + 1) * plane].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let mut bn = BatchNormLayer::<f64>::new(2);
        bn.gamma = vec![0.0, 0.0];
        bn.beta = vec![0.25, -3.0];
        let x = random(Dims::new(2, 2, 3, 3), 1, 5.0);
        let (y, _, _) = bn.forward_train(&x).unwrap();
        for b in 0..2 {
            assert!(y.item(b)[..9].iter().all(|&v| v == 0.25));
            assert!(y.item(b)[9..].iter().all(|&v| v == -3.0));
        }
    }

    #[test]
    fn inference_with_unit_stats_scales_by_epsilon_term() {
        let bn = BatchNormLayer::<f64>::new(1);
        let x = random(Dims::new(1, 1, 2, 2), 3, 1.0);
        let y = bn.forward_inference(&x).unwrap();
        let k = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a * k - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_element_population_is_an_error() {
        let bn = BatchNormLayer::<f32>::new(1);
        let x = Tensor4::zeros(Dims::new(1, 1, 1, 1));
        assert!(matches!(bn.forward_train(&x), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut bn = BatchNormLayer::<f64>::new(1);
        bn.update_running(&BatchStats {
            mean: vec![2.0],
            var: vec![3.0],
        });
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - 1.2).abs() < 1e-12);
    }
}
