//! Basic residual block: two 3x3 conv+BN stages, ReLU after the skip add.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::batchnorm::{BatchNormCache, BatchNormGrad, BatchNormLayer, BatchStats};
use crate::nn::conv::{ConvGrad, ConvLayer};
use crate::tensor::{Dims, Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T = f32> {
    pub conv1: ConvLayer<T>,
    pub bn1: BatchNormLayer<T>,
    pub conv2: ConvLayer<T>,
    pub bn2: BatchNormLayer<T>,
    /// 1x1 projection used when the block changes stride or width.
    pub projection: Option<(ConvLayer<T>, BatchNormLayer<T>)>,
}

#[derive(Clone, Debug)]
pub struct ResidualCache<T> {
    input: Tensor4<T>,
    hidden: Tensor4<T>,
    bn1: BatchNormCache<T>,
    bn2: BatchNormCache<T>,
    projection: Option<BatchNormCache<T>>,
    output: Tensor4<T>,
}

#[derive(Clone, Debug)]
pub struct ResidualGrad<T> {
    pub conv1: ConvGrad<T>,
    pub bn1: BatchNormGrad<T>,
    pub conv2: ConvGrad<T>,
    pub bn2: BatchNormGrad<T>,
    pub projection: Option<(ConvGrad<T>, BatchNormGrad<T>)>,
}

impl<T: Real> ResidualGrad<T> {
    pub fn zeros_like(block: &ResidualBlock<T>) -> Self {
        Self {
            conv1: ConvGrad::zeros_like(&block.conv1),
            bn1: BatchNormGrad::zeros_like(&block.bn1),
            conv2: ConvGrad::zeros_like(&block.conv2),
            bn2: BatchNormGrad::zeros_like(&block.bn2),
            projection: block
                .projection
                .as_ref()
                .map(|(c, b)| (ConvGrad::zeros_like(c), BatchNormGrad::zeros_like(b))),
        }
    }
}

fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.dims() != b.dims() {
        return Err(Error::shape("residual add", a.dims(), b.dims()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor4::from_vec(a.dims(), data).expect("same length"))
}

impl<T: Real> ResidualCache<T> {
    /// Both ReLU outputs of the block, in forward order.
    pub fn relu_outputs(&self) -> [&Tensor4<T>; 2] {
        [&self.hidden, &self.output]
    }
}

impl<T: Real> ResidualBlock<T> {
    pub fn he_init<R: Rng>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = ConvLayer::he_init(in_channels, out_channels, (3, 3), stride, (1, 1), rng);
        let conv2 = ConvLayer::he_init(out_channels, out_channels, (3, 3), 1, (1, 1), rng);
        let projection = (stride != 1 || in_channels != out_channels).then(|| {
            (
                ConvLayer::he_init(in_channels, out_channels, (1, 1), stride, (0, 0), rng),
                BatchNormLayer::new(out_channels),
            )
        });
        Self {
            conv1,
            bn1: BatchNormLayer::new(out_channels),
            conv2,
            bn2: BatchNormLayer::new(out_channels),
            projection,
        }
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        let mid = self.conv1.output_dims(input)?;
        let out = self.conv2.output_dims(mid)?;
        let skip = match &self.projection {
            Some((conv, _)) => conv.output_dims(input)?,
            None => input,
        };
        if skip != out {
            return Err(Error::shape("residual shortcut", out, skip));
        }
        Ok(out)
    }

    pub fn forward_inference(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let h = relu(&self.bn1.forward_inference(&self.conv1.forward(x)?)?);
        let main = self.bn2.forward_inference(&self.conv2.forward(&h)?)?;
        let skip = match &self.projection {
            Some((conv, bn)) => bn.forward_inference(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok(relu(&add(&main, &skip)?))
    }

    /// Train-mode forward. Batch statistics are appended to `stats` in the
    /// order bn1, bn2, projection.
    pub fn forward_train(&self, x: &Tensor4<T>, stats: &mut Vec<BatchStats>) -> Result<(Tensor4<T>, ResidualCache<T>)> {
        let (a, bn1, s1) = self.bn1.forward_train(&self.conv1.forward(x)?)?;
        let hidden = relu(&a);
        let (main, bn2, s2) = self.bn2.forward_train(&self.conv2.forward(&hidden)?)?;
        stats.push(s1);
        stats.push(s2);
        let (skip, projection) = match &self.projection {
            Some((conv, bn)) => {
                let (s, cache, sp) = bn.forward_train(&conv.forward(x)?)?;
                stats.push(sp);
                (s, Some(cache))
            }
            None => (x.clone(), None),
        };
        let output = relu(&add(&main, &skip)?);
        let cache = ResidualCache {
            input: x.clone(),
            hidden,
            bn1,
            bn2,
            projection,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    pub fn update_running<'a>(&mut self, stats: &mut impl Iterator<Item = &'a BatchStats>) {
        let mut next = |bn: &mut BatchNormLayer<T>| {
            if let Some(s) = stats.next() {
                bn.update_running(s);
            }
        };
        next(&mut self.bn1);
        next(&mut self.bn2);
        if let Some((_, bn)) = self.projection.as_mut() {
            next(bn);
        }
    }

    pub fn backward(
        &self,
        cache: &ResidualCache<T>,
        grad_out: &Tensor4<T>,
        grad: &mut ResidualGrad<T>,
    ) -> Result<Tensor4<T>> {
        let g = relu_backward(&cache.output, grad_out)?;
        let d_conv2 = self.bn2.backward(&cache.bn2, &g, &mut grad.bn2)?;
        let d_hidden = self
            .conv2
            .backward(&cache.hidden, &d_conv2, &mut grad.conv2, true)?
            .expect("input grad requested");
        let d_bn1 = relu_backward(&cache.hidden, &d_hidden)?;
        let d_conv1 = self.bn1.backward(&cache.bn1, &d_bn1, &mut grad.bn1)?;
        let d_main = self
            .conv1
            .backward(&cache.input, &d_conv1, &mut grad.conv1, true)?
            .expect("input grad requested");
        let d_skip = match (&self.projection, &cache.projection, grad.projection.as_mut()) {
            (Some((conv, bn)), Some(bn_cache), Some((gc, gb))) => {
                let d = bn.backward(bn_cache, &g, gb)?;
                conv.backward(&cache.input, &d, gc, true)?
                    .expect("input grad requested")
            }
            _ => g,
        };
        add(&d_main, &d_skip)
    }
}
