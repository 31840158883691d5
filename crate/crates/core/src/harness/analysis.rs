//! Activation maps, per-layer discriminability and suspect-label flagging.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelPolicy, Manifest, Split, Task};
use crate::error::{Error, Result};
use crate::harness::{image_batch, predict, LabeledSet};
use crate::metrics::argmax;
use crate::nn::{Mode, Network};
use crate::pgm::Gray8;
use crate::tensor::Tensor4;

pub const DEFAULT_TAU: f64 = 0.9;

/// Inference-mode post-ReLU activations of a single image.
fn activations(net: &Network, image: &[f32]) -> Result<Vec<Tensor4<f32>>> {
    let side = net.input_size;
    if image.len() != side * side {
        return Err(Error::shape("activation input", side * side, image.len()));
    }
    Ok(net
        .forward(&image_batch(&[image], side)?, Mode::Inference, true)?
        .activations)
}

/// Mean over channels of a `(1, C, H, W)` activation, min-max scaled to
/// [0, 1]; a constant map becomes all zeros.
fn channel_mean_map(t: &Tensor4<f32>) -> Vec<f64> {
    let d = t.dims();
    let plane = d.plane();
    let mut mean = vec![0.0f64; plane];
    for c in t.item(0).chunks(plane) {
        for (m, &v) in mean.iter_mut().zip(c) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= d.channels as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        mean.iter().map(|m| (m - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; plane]
    }
}

/// Writes the channel-mean map of every post-ReLU activation as
/// `layer<k>.pgm` (k from 1) and returns the paths in layer order.
pub fn export_activations(net: &Network, image: &[f32], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let acts = activations(net, image)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    acts.iter()
        .enumerate()
        .map(|(k, t)| {
            let d = t.dims();
            let path = out_dir.join(format!("layer{}.pgm", k + 1));
            Gray8::from_unit(d.width, d.height, &channel_mean_map(t)).write(&path)?;
            Ok(path)
        })
        .collect()
}

/// One minus the cosine similarity of two flattened activations, or 0 if
/// either is the zero vector.
fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (1.0 - ab / (aa * bb).sqrt()).clamp(0.0, 2.0)
}

/// Per post-ReLU layer, how differently the network represents the two
/// images, as a cosine distance in [0, 2].
pub fn layer_discriminability(net: &Network, clean: &[f32], corrupted: &[f32]) -> Result<Vec<f64>> {
    let a = activations(net, clean)?;
    let b = activations(net, corrupted)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| cosine_distance(x.data(), y.data()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspectLabel {
    pub id: String,
    pub given: usize,
    pub predicted: usize,
    pub confidence: f64,
}

/// Samples whose confident prediction (probability >= `tau`) contradicts
/// the given label, most confident first; ties keep input order.
pub fn suspects_from(
    ids: &[String],
    labels: &[usize],
    probabilities: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<SuspectLabel>> {
    if !(tau > 0.5 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0.5, 1), got {tau}")));
    }
    if ids.len() != labels.len() || labels.len() != probabilities.len() {
        return Err(Error::shape("suspect inputs", ids.len(), probabilities.len()));
    }
    let mut out: Vec<SuspectLabel> = ids
        .iter()
        .zip(labels)
        .zip(probabilities)
        .filter_map(|((id, &given), p)| {
            let predicted = argmax(p);
            (predicted != given && p[predicted] >= tau).then(|| SuspectLabel {
                id: id.clone(),
                given,
                predicted,
                confidence: p[predicted],
            })
        })
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

/// Runs the network over a split and flags confidently contradicted labels.
pub fn flag_suspect_labels(
    net: &Network,
    manifest: &Manifest,
    split: Split,
    policy: LabelPolicy,
    tau: f64,
) -> Result<Vec<SuspectLabel>> {
    let task = Task::from_classes(net.num_classes)?;
    let set = LabeledSet::load(manifest, split, net.input_size, task, policy)?;
    suspects_from(&set.ids, &set.labels, &predict(net, &set.images)?, tau)
}
