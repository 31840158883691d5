//! Layer graphs, the two network builders, forward and backward passes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{flatten, global_avg_pool, global_avg_pool_backward, relu, relu_backward};
use crate::nn::batchnorm::{BatchNormCache, BatchNormGrad, BatchNormLayer, BatchStats};
use crate::nn::conv::{ConvGrad, ConvLayer};
use crate::nn::dense::{DenseGrad, DenseLayer};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::residual::{ResidualBlock, ResidualCache, ResidualGrad};
use crate::rng;
use crate::tensor::{Dims, Real, Tensor4};

/// Default ConvNet-4 channel plan.
pub const DEFAULT_CHANNEL_PLAN: [usize; 4] = [8, 16, 32, 32];
pub const DEFAULT_RESNET_BASE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[serde(rename = "convnet4")]
    ConvNet4,
    #[serde(rename = "resnet10lite")]
    ResNet10Lite,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::ConvNet4 => "convnet4",
            Architecture::ResNet10Lite => "resnet10lite",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convnet4" => Ok(Architecture::ConvNet4),
            "resnet10" | "resnet10lite" => Ok(Architecture::ResNet10Lite),
            other => Err(Error::InvalidArgument(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv(ConvLayer<T>),
    Relu,
    BatchNorm(BatchNormLayer<T>),
    Dense(DenseLayer<T>),
    Residual(Box<ResidualBlock<T>>),
    GlobalAvgPool,
    Flatten,
}

impl<T: Real> Layer<T> {
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        match self {
            Layer::Conv(c) => c.output_dims(input),
            Layer::Relu => Ok(input),
            Layer::BatchNorm(bn) if bn.channels() != input.channels => {
                Err(Error::shape("batchnorm", format!("{} channels", bn.channels()), input))
            }
            Layer::BatchNorm(_) => Ok(input),
            Layer::Dense(d) if d.in_features != input.item_len() => Err(Error::shape(
                "dense",
                format!("{} features per item", d.in_features),
                input,
            )),
            Layer::Dense(d) => Ok(Dims::new(input.batch, d.out_features, 1, 1)),
            Layer::Residual(r) => r.output_dims(input),
            Layer::GlobalAvgPool => Ok(Dims::new(input.batch, input.channels, 1, 1)),
            Layer::Flatten => Ok(Dims::new(input.batch, input.item_len(), 1, 1)),
        }
    }

    /// Whether this layer's output is an activation-capture point.
    fn is_capture_point(&self) -> bool {
        matches!(self, Layer::Relu | Layer::Residual(_))
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let v = |xs: &[T]| xs.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        let conv = |c: &ConvLayer<T>| ConvLayer {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
            weights: v(&c.weights),
            bias: v(&c.bias),
        };
        let bn = |b: &BatchNormLayer<T>| BatchNormLayer {
            gamma: v(&b.gamma),
            beta: v(&b.beta),
            running_mean: v(&b.running_mean),
            running_var: v(&b.running_var),
            epsilon: b.epsilon,
            momentum: b.momentum,
        };
        match self {
            Layer::Conv(c) => Layer::Conv(conv(c)),
            Layer::Relu => Layer::Relu,
            Layer::BatchNorm(b) => Layer::BatchNorm(bn(b)),
            Layer::Dense(d) => Layer::Dense(DenseLayer {
                in_features: d.in_features,
                out_features: d.out_features,
                weights: v(&d.weights),
                bias: v(&d.bias),
            }),
            Layer::Residual(r) => Layer::Residual(Box::new(ResidualBlock {
                conv1: conv(&r.conv1),
                bn1: bn(&r.bn1),
                conv2: conv(&r.conv2),
                bn2: bn(&r.bn2),
                projection: r.projection.as_ref().map(|(c, b)| (conv(c), bn(b))),
            })),
            Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            Layer::Flatten => Layer::Flatten,
        }
    }
}

enum LayerCache<T> {
    Conv(Tensor4<T>),
    Relu(Tensor4<T>),
    BatchNorm(BatchNormCache<T>),
    Dense(Tensor4<T>),
    Residual(Box<ResidualCache<T>>),
    GlobalAvgPool(Dims),
    Flatten(Dims),
}

enum LayerGrad<T> {
    Conv(ConvGrad<T>),
    BatchNorm(BatchNormGrad<T>),
    Dense(DenseGrad<T>),
    Residual(Box<ResidualGrad<T>>),
}

/// Saved forward state for exactly one backward pass.
pub struct Tape<T> {
    caches: Vec<LayerCache<T>>,
}

pub struct ForwardPass<T> {
    /// `(batch, num_classes, 1, 1)`.
    pub logits: Tensor4<T>,
    /// Post-ReLU activations (residual block outputs count) when captured.
    pub activations: Vec<Tensor4<T>>,
    /// Per-batchnorm statistics in layer order; empty in inference mode.
    pub batch_stats: Vec<BatchStats>,
    pub tape: Option<Tape<T>>,
}

/// Parameter gradients, one buffer per parameter tensor in
/// [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub struct Backprop<T> {
    pub loss: f64,
    pub logits: Tensor4<T>,
    pub probabilities: Tensor4<T>,
    pub grads: Gradients<T>,
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub arch: Architecture,
    /// ConvNet-4: four widths; ResNet-10-lite: `[base_channels]`.
    pub channels: Vec<usize>,
    pub input_size: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Optimizer steps applied so far.
    pub steps: u64,
    layers: Vec<Layer<T>>,
}

fn check_classes(num_classes: usize) -> Result<()> {
    if !(2..=3).contains(&num_classes) {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be 2 or 3, got {num_classes}"
        )));
    }
    Ok(())
}

/// ConvNet-4: (conv -> ReLU -> batchnorm) x4 with kernels 10, 7, 3, 3 at
/// stride 2, then flatten and a zero-initialized dense head.
pub fn build_convnet4<T: Real>(
    num_classes: usize,
    input_size: usize,
    channel_plan: [usize; 4],
    seed: u64,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    if input_size == 0 || !input_size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "convnet4 input size must be a positive multiple of 16, got {input_size}"
        )));
    }
    if channel_plan.contains(&0) {
        return Err(Error::InvalidArgument("channel plan entries must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for (&out_ch, (k, p)) in channel_plan.iter().zip([(10, 4), (7, 3), (3, 1), (3, 1)]) {
        layers.push(Layer::Conv(ConvLayer::he_init(
            in_ch,
            out_ch,
            (k, k),
            2,
            (p, p),
            &mut rng,
        )));
        layers.push(Layer::Relu);
        layers.push(Layer::BatchNorm(BatchNormLayer::new(out_ch)));
        in_ch = out_ch;
    }
    let side = input_size / 16;
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(DenseLayer::zeros(in_ch * side * side, num_classes)));
    Network::new(
        Architecture::ConvNet4,
        channel_plan.to_vec(),
        input_size,
        num_classes,
        seed,
        layers,
    )
}

/// ResNet-10-lite: 7x7 stride-2 stem, four single-block stages (widths
/// doubling, stages 2-4 at stride 2 with projection shortcuts), global
/// average pooling and a zero-initialized dense head.
pub fn build_resnet10lite<T: Real>(
    num_classes: usize,
    input_size: usize,
    base_channels: usize,
    seed: u64,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    if input_size == 0 || !input_size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "resnet10lite input size must be a positive multiple of 16, got {input_size}"
        )));
    }
    if base_channels == 0 {
        return Err(Error::InvalidArgument("base_channels must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let mut layers = vec![
        Layer::Conv(ConvLayer::he_init(1, base_channels, (7, 7), 2, (3, 3), &mut rng)),
        Layer::BatchNorm(BatchNormLayer::new(base_channels)),
        Layer::Relu,
    ];
    let mut in_ch = base_channels;
    for stage in 0..4 {
        let out_ch = base_channels << stage;
        let stride = if stage == 0 { 1 } else { 2 };
        layers.push(Layer::Residual(Box::new(ResidualBlock::he_init(
            in_ch, out_ch, stride, &mut rng,
        ))));
        in_ch = out_ch;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(DenseLayer::zeros(in_ch, num_classes)));
    Network::new(
        Architecture::ResNet10Lite,
        vec![base_channels],
        input_size,
        num_classes,
        seed,
        layers,
    )
}

/// Builds either architecture from its tag and stored channel list.
pub fn build<T: Real>(
    arch: Architecture,
    num_classes: usize,
    input_size: usize,
    channels: &[usize],
    seed: u64,
) -> Result<Network<T>> {
    match (arch, channels) {
        (Architecture::ConvNet4, &[a, b, c, d]) => build_convnet4(num_classes, input_size, [a, b, c, d], seed),
        (Architecture::ResNet10Lite, &[base]) => build_resnet10lite(num_classes, input_size, base, seed),
        _ => Err(Error::InvalidArgument(format!(
            "channel list {channels:?} does not fit architecture {arch}"
        ))),
    }
}

impl<T: Real> Network<T> {
    fn new(
        arch: Architecture,
        channels: Vec<usize>,
        input_size: usize,
        num_classes: usize,
        seed: u64,
        layers: Vec<Layer<T>>,
    ) -> Result<Self> {
        let net = Self {
            arch,
            channels,
            input_size,
            num_classes,
            seed,
            steps: 0,
            layers,
        };
        let out = net.shapes(Dims::new(1, 1, input_size, input_size))?;
        let last = *out.last().expect("non-empty layer list");
        if last != Dims::new(1, num_classes, 1, 1) {
            return Err(Error::shape("network head", Dims::new(1, num_classes, 1, 1), last));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(batch, 1, self.input_size, self.input_size)
    }

    /// Output dims after every layer.
    pub fn shapes(&self, input: Dims) -> Result<Vec<Dims>> {
        let mut d = input;
        self.layers
            .iter()
            .map(|l| {
                d = l.output_dims(d)?;
                Ok(d)
            })
            .collect()
    }

    /// Conv and dense layers, counting the two convs inside each residual
    /// block but not projection shortcuts.
    pub fn weighted_layer_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(_) | Layer::Dense(_) => 1,
                Layer::Residual(_) => 2,
                _ => 0,
            })
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            channels: self.channels.clone(),
            input_size: self.input_size,
            num_classes: self.num_classes,
            seed: self.seed,
            steps: self.steps,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Trainable parameter tensors in canonical order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weights[..], &c.bias[..]]),
                Layer::BatchNorm(b) => out.extend([&b.gamma[..], &b.beta[..]]),
                Layer::Dense(d) => out.extend([&d.weights[..], &d.bias[..]]),
                Layer::Residual(r) => {
                    out.extend([&r.conv1.weights[..], &r.conv1.bias[..]]);
                    out.extend([&r.bn1.gamma[..], &r.bn1.beta[..]]);
                    out.extend([&r.conv2.weights[..], &r.conv2.bias[..]]);
                    out.extend([&r.bn2.gamma[..], &r.bn2.beta[..]]);
                    if let Some((c, b)) = &r.projection {
                        out.extend([&c.weights[..], &c.bias[..], &b.gamma[..], &b.beta[..]]);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Index of the layer owning each tensor of [`Network::params`].
    pub fn param_owners(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let n = match layer {
                Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense(_) => 2,
                Layer::Residual(r) => 8 + 4 * usize::from(r.projection.is_some()),
                _ => 0,
            };
            out.extend(std::iter::repeat_n(i, n));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weights[..], &mut c.bias[..]]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma[..], &mut b.beta[..]]),
                Layer::Dense(d) => out.extend([&mut d.weights[..], &mut d.bias[..]]),
                Layer::Residual(r) => {
                    let r = &mut **r;
                    out.extend([&mut r.conv1.weights[..], &mut r.conv1.bias[..]]);
                    out.extend([&mut r.bn1.gamma[..], &mut r.bn1.beta[..]]);
                    out.extend([&mut r.conv2.weights[..], &mut r.conv2.bias[..]]);
                    out.extend([&mut r.bn2.gamma[..], &mut r.bn2.beta[..]]);
                    if let Some((c, b)) = &mut r.projection {
                        out.extend([&mut c.weights[..], &mut c.bias[..], &mut b.gamma[..], &mut b.beta[..]]);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameters plus batchnorm running statistics, in checkpoint order:
    /// batchnorm layers contribute gamma, beta, running mean, running var.
    pub fn state(&self) -> Vec<&[T]> {
        fn bn<'a, T>(out: &mut Vec<&'a [T]>, b: &'a BatchNormLayer<T>) {
            out.extend([&b.gamma[..], &b.beta[..], &b.running_mean[..], &b.running_var[..]]);
        }
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weights[..], &c.bias[..]]),
                Layer::BatchNorm(b) => bn(&mut out, b),
                Layer::Dense(d) => out.extend([&d.weights[..], &d.bias[..]]),
                Layer::Residual(r) => {
                    out.extend([&r.conv1.weights[..], &r.conv1.bias[..]]);
                    bn(&mut out, &r.bn1);
                    out.extend([&r.conv2.weights[..], &r.conv2.bias[..]]);
                    bn(&mut out, &r.bn2);
                    if let Some((c, b)) = &r.projection {
                        out.extend([&c.weights[..], &c.bias[..]]);
                        bn(&mut out, b);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut [T]> {
        fn bn<'a, T>(out: &mut Vec<&'a mut [T]>, b: &'a mut BatchNormLayer<T>) {
            out.extend([
                &mut b.gamma[..],
                &mut b.beta[..],
                &mut b.running_mean[..],
                &mut b.running_var[..],
            ]);
        }
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weights[..], &mut c.bias[..]]),
                Layer::BatchNorm(b) => bn(&mut out, b),
                Layer::Dense(d) => out.extend([&mut d.weights[..], &mut d.bias[..]]),
                Layer::Residual(r) => {
                    let r = &mut **r;
                    out.extend([&mut r.conv1.weights[..], &mut r.conv1.bias[..]]);
                    bn(&mut out, &mut r.bn1);
                    out.extend([&mut r.conv2.weights[..], &mut r.conv2.bias[..]]);
                    bn(&mut out, &mut r.bn2);
                    if let Some((c, b)) = &mut r.projection {
                        out.extend([&mut c.weights[..], &mut c.bias[..]]);
                        bn(&mut out, b);
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn check_input(&self, batch: &Tensor4<T>) -> Result<()> {
        let d = batch.dims();
        let expected = self.input_dims(d.batch);
        if d != expected || d.batch == 0 {
            return Err(Error::shape("network input", expected, d));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor4<T>, mode: Mode, capture: bool) -> Result<ForwardPass<T>> {
        self.check_input(batch)?;
        self.run(0, batch.clone(), mode, capture, None)
    }

    /// Runs layers `start..` on `x`, which must be the input of layer
    /// `start`. When `inputs` is given, the input of every layer run is
    /// pushed onto it.
    fn run(
        &self,
        start: usize,
        mut x: Tensor4<T>,
        mode: Mode,
        capture: bool,
        mut inputs: Option<&mut Vec<Tensor4<T>>>,
    ) -> Result<ForwardPass<T>> {
        let train = mode == Mode::Train;
        let mut activations = Vec::new();
        let mut batch_stats = Vec::new();
        let mut caches = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        for layer in &self.layers[start..] {
            if let Some(inputs) = inputs.as_mut() {
                inputs.push(x.clone());
            }
            let (y, cache) = match layer {
                Layer::Conv(c) => (c.forward(&x)?, LayerCache::Conv(x)),
                Layer::Relu => {
                    let y = relu(&x);
                    let cache = LayerCache::Relu(if train { y.clone() } else { x });
                    (y, cache)
                }
                Layer::BatchNorm(bn) if train => {
                    let (y, cache, stats) = bn.forward_train(&x)?;
                    batch_stats.push(stats);
                    (y, LayerCache::BatchNorm(cache))
                }
                Layer::BatchNorm(bn) => {
                    let y = bn.forward_inference(&x)?;
                    (y, LayerCache::Relu(x))
                }
                Layer::Dense(d) => (d.forward(&x)?, LayerCache::Dense(x)),
                Layer::Residual(r) if train => {
                    let (y, cache) = r.forward_train(&x, &mut batch_stats)?;
                    (y, LayerCache::Residual(Box::new(cache)))
                }
                Layer::Residual(r) => (r.forward_inference(&x)?, LayerCache::Relu(x)),
                Layer::GlobalAvgPool => (global_avg_pool(&x), LayerCache::GlobalAvgPool(x.dims())),
                Layer::Flatten => {
                    let d = x.dims();
                    (flatten(x), LayerCache::Flatten(d))
                }
            };
            if capture && layer.is_capture_point() {
                activations.push(y.clone());
            }
            if train {
                caches.push(cache);
            }
            x = y;
        }
        Ok(ForwardPass {
            logits: x,
            activations,
            batch_stats,
            tape: train.then_some(Tape { caches }),
        })
    }

    /// Mean softmax cross-entropy of a batch; train mode uses batch statistics.
    pub fn loss(&self, batch: &Tensor4<T>, labels: &[usize], mode: Mode) -> Result<f64> {
        let pass = self.forward(batch, mode, false)?;
        Ok(softmax_cross_entropy(&pass.logits, labels)?.loss)
    }

    /// Train-mode loss together with the on/off pattern of every ReLU unit
    /// (residual-internal ones included). Finite-difference probes whose
    /// pattern differs from the unperturbed one straddle a kink.
    pub fn loss_and_relu_pattern(&self, batch: &Tensor4<T>, labels: &[usize]) -> Result<(f64, Vec<bool>)> {
        self.check_input(batch)?;
        self.loss_and_relu_pattern_from(0, batch, labels)
    }

    /// Train-mode input of every layer, for resuming with
    /// [`Network::loss_and_relu_pattern_from`].
    pub fn layer_inputs(&self, batch: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        self.run(0, batch.clone(), Mode::Train, false, Some(&mut inputs))?;
        Ok(inputs)
    }

    /// As [`Network::loss_and_relu_pattern`], resuming at layer `start` whose
    /// train-mode input is `input`. The pattern covers layers `start..` only.
    pub fn loss_and_relu_pattern_from(
        &self,
        start: usize,
        input: &Tensor4<T>,
        labels: &[usize],
    ) -> Result<(f64, Vec<bool>)> {
        let pass = self.run(start, input.clone(), Mode::Train, false, None)?;
        let loss = softmax_cross_entropy(&pass.logits, labels)?.loss;
        let mut pattern = Vec::new();
        let mut push = |t: &Tensor4<T>| pattern.extend(t.data().iter().map(|&v| v > T::zero()));
        for cache in &pass.tape.expect("train mode records a tape").caches {
            match cache {
                LayerCache::Relu(out) => push(out),
                LayerCache::Residual(r) => r.relu_outputs().into_iter().for_each(&mut push),
                _ => {}
            }
        }
        Ok((loss, pattern))
    }

    /// Train-mode forward plus reverse pass. Running statistics are not
    /// touched; apply [`Backprop::batch_stats`] via [`Network::update_running`].
    pub fn backprop(&self, batch: &Tensor4<T>, labels: &[usize]) -> Result<Backprop<T>> {
        let pass = self.forward(batch, Mode::Train, false)?;
        let ce = softmax_cross_entropy(&pass.logits, labels)?;
        let tape = pass.tape.expect("train mode records a tape");
        let mut grads: Vec<Option<LayerGrad<T>>> = (0..self.layers.len()).map(|_| None).collect();
        let mut g = ce.grad;
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            g = match (layer, cache) {
                (Layer::Conv(c), LayerCache::Conv(input)) => {
                    let mut lg = ConvGrad::zeros_like(c);
                    let gi = c.backward(input, &g, &mut lg, i > 0)?;
                    grads[i] = Some(LayerGrad::Conv(lg));
                    match gi {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                (Layer::Relu, LayerCache::Relu(out)) => relu_backward(out, &g)?,
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(cache)) => {
                    let mut lg = BatchNormGrad::zeros_like(bn);
                    let gi = bn.backward(cache, &g, &mut lg)?;
                    grads[i] = Some(LayerGrad::BatchNorm(lg));
                    gi
                }
                (Layer::Dense(d), LayerCache::Dense(input)) => {
                    let mut lg = DenseGrad::zeros_like(d);
                    let gi = d.backward(input, &g, &mut lg)?;
                    grads[i] = Some(LayerGrad::Dense(lg));
                    gi
                }
                (Layer::Residual(r), LayerCache::Residual(cache)) => {
                    let mut lg = ResidualGrad::zeros_like(r);
                    let gi = r.backward(cache, &g, &mut lg)?;
                    grads[i] = Some(LayerGrad::Residual(Box::new(lg)));
                    gi
                }
                (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool(d)) => global_avg_pool_backward(*d, &g)?,
                (Layer::Flatten, LayerCache::Flatten(d)) => g
                    .reshape(*d)
                    .ok_or_else(|| Error::shape("flatten backward", d, "mismatched length"))?,
                _ => unreachable!("tape out of sync with layer list"),
            };
        }
        let mut tensors = Vec::new();
        for (layer, grad) in self.layers.iter().zip(grads) {
            match (layer, grad) {
                (Layer::Conv(c), g) => {
                    let g = match g {
                        Some(LayerGrad::Conv(g)) => g,
                        _ => ConvGrad::zeros_like(c),
                    };
                    tensors.extend([g.weights, g.bias]);
                }
                (Layer::BatchNorm(_), Some(LayerGrad::BatchNorm(g))) => tensors.extend([g.gamma, g.beta]),
                (Layer::Dense(_), Some(LayerGrad::Dense(g))) => tensors.extend([g.weights, g.bias]),
                (Layer::Residual(_), Some(LayerGrad::Residual(g))) => {
                    let g = *g;
                    tensors.extend([g.conv1.weights, g.conv1.bias, g.bn1.gamma, g.bn1.beta]);
                    tensors.extend([g.conv2.weights, g.conv2.bias, g.bn2.gamma, g.bn2.beta]);
                    if let Some((c, b)) = g.projection {
                        tensors.extend([c.weights, c.bias, b.gamma, b.beta]);
                    }
                }
                (Layer::Relu | Layer::GlobalAvgPool | Layer::Flatten, _) => {}
                _ => unreachable!("every weighted layer is reached by the reverse pass"),
            }
        }
        Ok(Backprop {
            loss: ce.loss,
            logits: pass.logits,
            probabilities: ce.probabilities,
            grads: Gradients { tensors },
            batch_stats: pass.batch_stats,
        })
    }

    /// Blends batch statistics from a train-mode pass into the running
    /// statistics, in layer order.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            match layer {
                Layer::BatchNorm(bn) => {
                    if let Some(s) = it.next() {
                        bn.update_running(s);
                    }
                }
                Layer::Residual(r) => r.update_running(&mut it),
                _ => {}
            }
        }
    }
}
