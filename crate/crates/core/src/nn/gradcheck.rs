//! Central finite-difference checks of the analytic gradients, run in f64.
//!
//! The finite-difference side only ever calls forward passes, so it is
//! independent of the reverse-mode code it checks. Relative error is taken
//! per parameter tensor as `|a - n|_2 / max(|a|_2, |n|_2, FLOOR)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::batchnorm::BatchNormLayer;
use crate::nn::conv::{ConvGrad, ConvLayer};
use crate::nn::dense::{DenseGrad, DenseLayer};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::network::{build_convnet4, build_resnet10lite, Layer, Network};
use crate::rng;
use crate::tensor::{Dims, Tensor4};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor, so tensors whose true gradient is zero (for example a
/// conv bias feeding straight into batchnorm) compare on absolute error.
pub const FLOOR: f64 = 1e-6;

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(FLOOR)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let plus = f(x);
            x[i] = orig - STEP;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub draws: usize,
    pub worst: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

fn worst(errors: impl IntoIterator<Item = f64>) -> f64 {
    errors.into_iter().fold(0.0, f64::max)
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(dims, data).expect("length matches")
}

fn fill_normal(rng: &mut ChaCha8Rng, xs: &mut [f64], mean: f64, std: f64) {
    let normal = Normal::new(mean, std).expect("valid normal");
    for x in xs {
        *x = normal.sample(rng);
    }
}

/// Weighted sum of outputs, so every output element carries a distinct
/// upstream gradient.
fn projected(y: &Tensor4<f64>, proj: &[f64]) -> f64 {
    y.data().iter().zip(proj).map(|(a, b)| a * b).sum()
}

pub fn check_conv(draws: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, 0x6c01);
    let mut errors = Vec::new();
    for _ in 0..draws {
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..k);
        let size = rng.random_range(k.max(4)..=10);
        let mut layer = ConvLayer::<f64>::zeros(cin, cout, (k, k), stride, (pad, pad));
        fill_normal(&mut rng, &mut layer.weights, 0.0, 0.5);
        fill_normal(&mut rng, &mut layer.bias, 0.0, 0.5);
        let mut x = random_tensor(&mut rng, Dims::new(2, cin, size, size));
        let out_dims = layer.output_dims(x.dims())?;
        let mut proj = vec![0.0; out_dims.len()];
        fill_normal(&mut rng, &mut proj, 0.0, 1.0);
        let upstream = Tensor4::from_vec(out_dims, proj.clone()).expect("length matches");

        let mut grad = ConvGrad::zeros_like(&layer);
        let gx = layer.backward(&x, &upstream, &mut grad, true)?.expect("requested");

        let mut w = layer.weights.clone();
        let nw = numeric_gradient(&mut w, |w| {
            let mut l = layer.clone();
            l.weights.copy_from_slice(w);
            projected(&l.forward(&x).expect("shape checked"), &proj)
        });
        let mut b = layer.bias.clone();
        let nb = numeric_gradient(&mut b, |b| {
            let mut l = layer.clone();
            l.bias.copy_from_slice(b);
            projected(&l.forward(&x).expect("shape checked"), &proj)
        });
        let dims = x.dims();
        let nx = numeric_gradient(x.data_mut(), |xs| {
            let t = Tensor4::from_vec(dims, xs.to_vec()).expect("length matches");
            projected(&layer.forward(&t).expect("shape checked"), &proj)
        });
        errors.push(relative_error(&grad.weights, &nw));
        errors.push(relative_error(&grad.bias, &nb));
        errors.push(relative_error(gx.data(), &nx));
    }
    Ok(CheckReport {
        name: "conv2d".into(),
        draws,
        worst: worst(errors),
    })
}

pub fn check_batchnorm(draws: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, 0x6c02);
    let mut errors = Vec::new();
    for _ in 0..draws {
        let channels = rng.random_range(1..=3);
        let size = rng.random_range(2..=6);
        let mut layer = BatchNormLayer::<f64>::new(channels);
        fill_normal(&mut rng, &mut layer.gamma, 1.0, 0.3);
        fill_normal(&mut rng, &mut layer.beta, 0.0, 0.3);
        let mut x = random_tensor(&mut rng, Dims::new(2, channels, size, size));
        let mut proj = vec![0.0; x.dims().len()];
        fill_normal(&mut rng, &mut proj, 0.0, 1.0);
        let upstream = Tensor4::from_vec(x.dims(), proj.clone()).expect("length matches");

        let (_, cache, _) = layer.forward_train(&x)?;
        let mut grad = crate::nn::batchnorm::BatchNormGrad::zeros_like(&layer);
        let gx = layer.backward(&cache, &upstream, &mut grad)?;

        let eval =
            |l: &BatchNormLayer<f64>, t: &Tensor4<f64>| projected(&l.forward_train(t).expect("valid batch").0, &proj);
        let mut g = layer.gamma.clone();
        let ng = numeric_gradient(&mut g, |g| {
            let mut l = layer.clone();
            l.gamma.copy_from_slice(g);
            eval(&l, &x)
        });
        let mut b = layer.beta.clone();
        let nb = numeric_gradient(&mut b, |b| {
            let mut l = layer.clone();
            l.beta.copy_from_slice(b);
            eval(&l, &x)
        });
        let dims = x.dims();
        let nx = numeric_gradient(x.data_mut(), |xs| {
            eval(&layer, &Tensor4::from_vec(dims, xs.to_vec()).expect("length"))
        });
        errors.push(relative_error(&grad.gamma, &ng));
        errors.push(relative_error(&grad.beta, &nb));
        errors.push(relative_error(gx.data(), &nx));
    }
    Ok(CheckReport {
        name: "batchnorm (train)".into(),
        draws,
        worst: worst(errors),
    })
}

pub fn check_dense(draws: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, 0x6c03);
    let mut errors = Vec::new();
    for _ in 0..draws {
        let features = rng.random_range(1..=12);
        let classes = rng.random_range(2..=3);
        let mut layer = DenseLayer::<f64>::zeros(features, classes);
        fill_normal(&mut rng, &mut layer.weights, 0.0, 0.5);
        fill_normal(&mut rng, &mut layer.bias, 0.0, 0.5);
        let mut x = random_tensor(&mut rng, Dims::new(2, features, 1, 1));
        let mut proj = vec![0.0; 2 * classes];
        fill_normal(&mut rng, &mut proj, 0.0, 1.0);
        let upstream = Tensor4::from_vec(Dims::new(2, classes, 1, 1), proj.clone()).expect("length");
        let mut grad = DenseGrad::zeros_like(&layer);
        let gx = layer.backward(&x, &upstream, &mut grad)?;

        let mut w = layer.weights.clone();
        let nw = numeric_gradient(&mut w, |w| {
            let mut l = layer.clone();
            l.weights.copy_from_slice(w);
            projected(&l.forward(&x).expect("shape"), &proj)
        });
        let mut b = layer.bias.clone();
        let nb = numeric_gradient(&mut b, |b| {
            let mut l = layer.clone();
            l.bias.copy_from_slice(b);
            projected(&l.forward(&x).expect("shape"), &proj)
        });
        let dims = x.dims();
        let nx = numeric_gradient(x.data_mut(), |xs| {
            let t = Tensor4::from_vec(dims, xs.to_vec()).expect("length");
            projected(&layer.forward(&t).expect("shape"), &proj)
        });
        errors.push(relative_error(&grad.weights, &nw));
        errors.push(relative_error(&grad.bias, &nb));
        errors.push(relative_error(gx.data(), &nx));
    }
    Ok(CheckReport {
        name: "dense".into(),
        draws,
        worst: worst(errors),
    })
}

pub fn check_softmax_ce(draws: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, 0x6c04);
    let mut errors = Vec::new();
    for _ in 0..draws {
        let classes = rng.random_range(2..=3);
        let batch = rng.random_range(1..=4);
        let mut logits = random_tensor(&mut rng, Dims::new(batch, classes, 1, 1));
        logits = logits.map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let analytic = softmax_cross_entropy(&logits, &labels)?.grad;
        let dims = logits.dims();
        let numeric = numeric_gradient(logits.data_mut(), |z| {
            let t = Tensor4::from_vec(dims, z.to_vec()).expect("length");
            softmax_cross_entropy(&t, &labels).expect("labels valid").loss
        });
        errors.push(relative_error(analytic.data(), &numeric));
    }
    Ok(CheckReport {
        name: "softmax cross-entropy".into(),
        draws,
        worst: worst(errors),
    })
}

/// Randomizes every trainable parameter so the check is not trivially zero:
/// He-scaled conv weights, small biases, gamma near one, a random dense head.
pub fn randomize(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    fn conv(c: &mut ConvLayer<f64>, rng: &mut ChaCha8Rng) {
        let fan_in = (c.in_channels * c.kernel.0 * c.kernel.1) as f64;
        fill_normal(rng, &mut c.weights, 0.0, (2.0 / fan_in).sqrt());
        fill_normal(rng, &mut c.bias, 0.0, 0.1);
    }
    fn bn(b: &mut BatchNormLayer<f64>, rng: &mut ChaCha8Rng) {
        fill_normal(rng, &mut b.gamma, 1.0, 0.2);
        fill_normal(rng, &mut b.beta, 0.0, 0.2);
    }
    for layer in net.layers_mut() {
        match layer {
            Layer::Conv(c) => conv(c, rng),
            Layer::BatchNorm(b) => bn(b, rng),
            Layer::Dense(d) => {
                fill_normal(rng, &mut d.weights, 0.0, 0.25);
                fill_normal(rng, &mut d.bias, 0.0, 0.5);
            }
            Layer::Residual(r) => {
                conv(&mut r.conv1, rng);
                bn(&mut r.bn1, rng);
                conv(&mut r.conv2, rng);
                bn(&mut r.bn2, rng);
                if let Some((c, b)) = r.projection.as_mut() {
                    conv(c, rng);
                    bn(b, rng);
                }
            }
            _ => {}
        }
    }
}

/// Per-tensor relative errors of a whole network against finite differences
/// of its train-mode loss, plus the number of coordinates skipped because a
/// probe crossed a ReLU kink (central differences are meaningless there).
/// Probes rerun the network from the layer owning the perturbed tensor.
pub fn check_network(net: &Network<f64>, batch: &Tensor4<f64>, labels: &[usize]) -> Result<(Vec<f64>, usize)> {
    let analytic = net.backprop(batch, labels)?.grads;
    let inputs = net.layer_inputs(batch)?;
    let owners = net.param_owners();
    let mut probe = net.clone();
    let mut errors = Vec::with_capacity(analytic.tensors.len());
    let mut skipped = 0;
    for (i, a) in analytic.tensors.iter().enumerate() {
        let start = owners[i];
        let (_, base_pattern) = net.loss_and_relu_pattern_from(start, &inputs[start], labels)?;
        let values = probe.params()[i].to_vec();
        let mut kept_a = Vec::with_capacity(a.len());
        let mut kept_n = Vec::with_capacity(a.len());
        for (j, &orig) in values.iter().enumerate() {
            let mut eval = |v: f64| {
                probe.params_mut()[i][j] = v;
                probe.loss_and_relu_pattern_from(start, &inputs[start], labels)
            };
            let (plus, p_plus) = eval(orig + STEP)?;
            let (minus, p_minus) = eval(orig - STEP)?;
            probe.params_mut()[i][j] = orig;
            if p_plus != base_pattern || p_minus != base_pattern {
                skipped += 1;
                continue;
            }
            kept_a.push(a[j]);
            kept_n.push((plus - minus) / (2.0 * STEP));
        }
        // Scale by the whole tensor so a few surviving tiny entries are not
        // judged against their own magnitude.
        let diff = kept_a
            .iter()
            .zip(&kept_n)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = norm(a).max(norm(&kept_n)).max(FLOOR);
        errors.push(diff / scale);
    }
    Ok((errors, skipped))
}

/// Draws whose batch puts some batchnorm channel at a tiny but nonzero
/// variance are redrawn: there the normalized output bends on a scale far
/// below the probe step, so central differences stop measuring the gradient.
/// Exactly zero variance (a dead channel) is kept; its gradient is zero.
pub const MIN_CHANNEL_VARIANCE: f64 = 1e-3;

fn well_conditioned(net: &Network<f64>, batch: &Tensor4<f64>, labels: &[usize]) -> Result<bool> {
    let stats = net.backprop(batch, labels)?.batch_stats;
    Ok(stats
        .iter()
        .flat_map(|s| &s.var)
        .all(|&v| v == 0.0 || v >= MIN_CHANNEL_VARIANCE))
}

/// Batch size of the whole-network checks. With 16x16 input the last
/// batchnorm layers see a 1x1 map, so their population is the batch alone.
/// At two samples every channel normalizes to +-1 and the upstream gradient
/// is carried by epsilon only; small populations in general bend the loss
/// enough for the truncation error of a 1e-3 probe to reach the tolerance.
pub const NETWORK_BATCH: usize = 32;

/// Whole-network check for ConvNet-4 or ResNet-10-lite at 16x16 input.
pub fn check_architecture(resnet: bool, draws: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, if resnet { 0x6c06 } else { 0x6c05 });
    let mut errors = Vec::new();
    let (mut skipped, mut redrawn) = (0, 0);
    let mut draw = 0;
    while draw < draws {
        let classes = 2 + draw % 2;
        let net_seed = seed + (draw + redrawn) as u64;
        let mut net: Network<f64> = if resnet {
            build_resnet10lite(classes, 16, 2, net_seed)?
        } else {
            build_convnet4(classes, 16, [2, 3, 3, 3], net_seed)?
        };
        randomize(&mut net, &mut rng);
        let batch = random_tensor(&mut rng, net.input_dims(NETWORK_BATCH));
        let labels: Vec<usize> = (0..NETWORK_BATCH).map(|i| i % classes).collect();
        if !well_conditioned(&net, &batch, &labels)? {
            redrawn += 1;
            continue;
        }
        let (e, s) = check_network(&net, &batch, &labels)?;
        errors.extend(e);
        skipped += s;
        draw += 1;
    }
    log::debug!("{skipped} kink-straddling coordinates skipped, {redrawn} draws redrawn");
    Ok(CheckReport {
        name: if resnet { "resnet10lite@16" } else { "convnet4@16" }.into(),
        draws,
        worst: worst(errors),
    })
}

/// The full suite used by the `gradcheck` command and the acceptance tests.
pub fn run_suite(draws: usize, seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_conv(draws, seed)?,
        check_batchnorm(draws, seed)?,
        check_dense(draws, seed)?,
        check_softmax_ce(draws, seed)?,
        check_architecture(false, draws, seed)?,
        check_architecture(true, draws, seed)?,
    ])
}
