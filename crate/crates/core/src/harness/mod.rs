//! Training loop, evaluation, checkpoints and model inspection.

mod analysis;
mod checkpoint;

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelPolicy, Manifest, Split, Task};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsBundle, RocCurve};
use crate::nn::{build, AdamConfig, AdamState, Architecture, Mode, Network, DEFAULT_CHANNEL_PLAN, DEFAULT_RESNET_BASE};
use crate::rng;
use crate::tensor::{Dims, Tensor4};

pub use analysis::{
    export_activations, flag_suspect_labels, layer_discriminability, suspects_from, SuspectLabel, DEFAULT_TAU,
};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_VERSION, MAGIC};

/// Images per inference forward pass. Inference-mode batchnorm treats
/// samples independently, so results do not depend on this value.
const INFERENCE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub arch: Architecture,
    pub task: Task,
    pub input_size: usize,
    pub eval_interval: u64,
    /// ConvNet-4: four widths; ResNet-10-lite: `[base_channels]`.
    pub channels: Vec<usize>,
    pub label_policy: LabelPolicy,
}

impl TrainConfig {
    pub fn new(arch: Architecture, task: Task, seed: u64) -> Self {
        let channels = match arch {
            Architecture::ConvNet4 => DEFAULT_CHANNEL_PLAN.to_vec(),
            Architecture::ResNet10Lite => vec![DEFAULT_RESNET_BASE],
        };
        Self {
            steps: 10_000,
            batch_size: 32,
            lr: 1e-3,
            seed,
            arch,
            task,
            input_size: 64,
            eval_interval: 100,
            channels,
            label_policy: LabelPolicy::RaterA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidArgument(format!(
                "steps, batch size and eval interval must be >= 1, got {}, {}, {}",
                self.steps, self.batch_size, self.eval_interval
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Images of one split with their task labels, in manifest order.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub size: usize,
}

impl LabeledSet {
    pub fn load(manifest: &Manifest, split: Split, size: usize, task: Task, policy: LabelPolicy) -> Result<Self> {
        let loaded = manifest.load_split(split, size)?;
        let mut set = LabeledSet {
            ids: Vec::with_capacity(loaded.len()),
            images: Vec::with_capacity(loaded.len()),
            labels: Vec::with_capacity(loaded.len()),
            size,
        };
        for (record, pixels) in loaded {
            set.ids.push(record.id.clone());
            set.labels.push(task.map(policy.label(record)));
            set.images.push(pixels);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the selected images into a `(n, 1, size, size)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor4<f32> {
        let data = indices.iter().flat_map(|&i| self.images[i].iter().copied()).collect();
        Tensor4::from_vec(Dims::new(indices.len(), 1, self.size, self.size), data).expect("images share one size")
    }
}

/// Stacks flat images of side `size` into a batch tensor.
pub fn image_batch(images: &[&[f32]], size: usize) -> Result<Tensor4<f32>> {
    let data: Vec<f32> = images.iter().flat_map(|i| i.iter().copied()).collect();
    Tensor4::from_vec(Dims::new(images.len(), 1, size, size), data)
        .ok_or_else(|| Error::shape("image batch", format!("{size}x{size} images"), "other pixel count"))
}

/// Inference-mode class probabilities, softmax taken in f64.
pub fn predict(net: &Network, images: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_CHUNK) {
        let refs: Vec<&[f32]> = chunk.iter().map(|v| v.as_slice()).collect();
        let logits = net
            .forward(&image_batch(&refs, net.input_size)?, Mode::Inference, false)?
            .logits;
        for b in 0..chunk.len() {
            let row: Vec<f64> = logits.item(b).iter().map(|&v| v as f64).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            out.push(exp.into_iter().map(|e| e / sum).collect());
        }
    }
    Ok(out)
}

/// Accuracy and mean cross-entropy of probabilities against labels.
fn score(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
    let predictions: Vec<usize> = probabilities.iter().map(|p| metrics::argmax(p)).collect();
    let acc = metrics::accuracy(&predictions, labels)?;
    let loss = probabilities
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64;
    Ok((acc, loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
}

/// Full-split inference-mode accuracy and loss at step 0, every
/// `eval_interval` steps and the final step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(p)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(format!("curve buffer: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Shuffle-and-cycle batch sampler: a fresh permutation each pass over the
/// data, with batches running across pass boundaries so every batch is full.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: rng::stream(seed, rng::STREAM_SHUFFLE),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Trains a fresh network on the train split, recording curves against
/// the train and eval splits. Fully determined by the config and data.
pub fn train(config: &TrainConfig, manifest: &Manifest) -> Result<(Network, TrainingCurve)> {
    config.validate()?;
    let load = |split| LabeledSet::load(manifest, split, config.input_size, config.task, config.label_policy);
    let train_set = load(Split::Train)?;
    let eval_set = load(Split::Eval)?;
    train_on(config, &train_set, &eval_set)
}

/// [`train`] on already loaded splits.
pub fn train_on(
    config: &TrainConfig,
    train_set: &LabeledSet,
    eval_set: &LabeledSet,
) -> Result<(Network, TrainingCurve)> {
    config.validate()?;
    for set in [train_set, eval_set] {
        if set.is_empty() {
            return Err(Error::EmptySplit("training input".into()));
        }
        if set.size != config.input_size {
            return Err(Error::shape("training images", config.input_size, set.size));
        }
    }
    let k = config.task.num_classes();
    let mut net = build::<f32>(config.arch, k, config.input_size, &config.channels, config.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut sampler = Sampler::new(train_set.len(), config.seed);
    let mut curve = TrainingCurve::default();

    let mut record = |net: &Network, step: u64| -> Result<()> {
        let (train_acc, train_loss) = score(&predict(net, &train_set.images)?, &train_set.labels)?;
        let (eval_acc, eval_loss) = score(&predict(net, &eval_set.images)?, &eval_set.labels)?;
        log::info!(
            "step {step}: train acc {train_acc:.4} loss {train_loss:.4}, eval acc {eval_acc:.4} loss {eval_loss:.4}"
        );
        curve.points.push(CurvePoint {
            step,
            train_acc,
            eval_acc,
            train_loss,
            eval_loss,
        });
        Ok(())
    };

    record(&net, 0)?;
    for step in 1..=config.steps {
        let idx = sampler.next_batch(config.batch_size);
        let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
        let out = net.backprop(&train_set.batch(&idx), &labels)?;
        if !out.loss.is_finite() {
            return Err(Error::InvalidArgument(format!("training loss diverged at step {step}")));
        }
        adam.step(net.params_mut(), &out.grads)?;
        net.update_running(&out.batch_stats);
        net.steps = step;
        if step % config.eval_interval == 0 || step == config.steps {
            record(&net, step)?;
        }
    }
    Ok((net, curve))
}

/// Inference over one split in manifest order. Returns the bundle and the
/// ROC curves behind it (one for binary, one per class otherwise).
pub fn evaluate(
    net: &Network,
    manifest: &Manifest,
    split: Split,
    task: Task,
    policy: LabelPolicy,
) -> Result<(MetricsBundle, Vec<RocCurve>)> {
    if task.num_classes() != net.num_classes {
        return Err(Error::shape(
            "evaluation task classes",
            net.num_classes,
            task.num_classes(),
        ));
    }
    let set = LabeledSet::load(manifest, split, net.input_size, task, policy)?;
    evaluate_set(net, &set)
}

pub fn evaluate_set(net: &Network, set: &LabeledSet) -> Result<(MetricsBundle, Vec<RocCurve>)> {
    if set.is_empty() {
        return Err(Error::EmptySplit("evaluation input".into()));
    }
    metrics::bundle(&predict(net, &set.images)?, &set.labels, net.num_classes)
}
