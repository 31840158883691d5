use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::split::{split_dataset, SplitConfig};
use crate::dataset::{Manifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::kspace::{
    generate_phantom, random_trace_with, severity_to_class, simulate_motion, PhantomSpec, DEFAULT_THRESHOLDS,
};
use crate::pgm::Gray8;
use crate::rng;

/// Class shares for (poor, diagnostic, excellent) matching a reported
/// clinical distribution of 518 / 1220 / 372 images.
pub const DEFAULT_PROPORTIONS: [f64; 3] = [518.0 / 2110.0, 1220.0 / 2110.0, 372.0 / 2110.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n: usize,
    /// Shares of classes 0, 1, 2; must sum to 1.
    pub proportions: [f64; 3],
    pub thresholds: (f64, f64),
    /// Probability that rater B moves a near-threshold image one class.
    pub rater_noise: f64,
    pub seed: u64,
    pub size: usize,
    /// Split applied after synthesis; `None` leaves records unassigned.
    pub split: Option<(f64, f64, f64)>,
}

impl CorpusConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            proportions: DEFAULT_PROPORTIONS,
            thresholds: DEFAULT_THRESHOLDS,
            rater_noise: 0.15,
            seed,
            size: 64,
            split: Some((0.7, 0.1, 0.2)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidArgument(format!("corpus needs n >= 10, got {}", self.n)));
        }
        let sum: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "class proportions must lie in [0, 1] and sum to 1, got {:?}",
                self.proportions
            )));
        }
        if !(0.0..=1.0).contains(&self.rater_noise) {
            return Err(Error::InvalidArgument(format!(
                "rater noise must be a probability, got {}",
                self.rater_noise
            )));
        }
        if self.size < 32 || !self.size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "image size must be a power of two >= 32, got {}",
                self.size
            )));
        }
        severity_to_class(0.0, self.thresholds)?;
        let (t1, t2) = self.thresholds;
        if (1.0 + SEVERITY_GAP) * t1 > (1.0 - SEVERITY_GAP) * t2 {
            return Err(Error::InvalidArgument(format!(
                "thresholds ({t1}, {t2}) leave no room for the diagnostic class; need t2 >= 9/7 t1"
            )));
        }
        Ok(())
    }
}

/// Integer counts summing to `n` that best match `shares`: floors first,
/// then one extra to the largest fractional parts (lower index on ties).
pub fn largest_remainder(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| n as f64 * s / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Fraction of each threshold kept free of sampled severities on either side.
const SEVERITY_GAP: f64 = 0.125;

/// Severity drawn for a target class, keeping 1/8 of each threshold clear
/// on both sides: excellent in [0, 7/8 t1], diagnostic in [9/8 t1, 7/8 t2],
/// poor in [9/8 t2, 2 t2]. The gaps make the classes separable while the
/// 25% band used for rater disagreement still holds images.
fn draw_severity<R: Rng>(rng: &mut R, class: usize, (t1, t2): (f64, f64)) -> f64 {
    match class {
        2 => rng.random_range(0.0..=(1.0 - SEVERITY_GAP) * t1),
        1 => rng.random_range((1.0 + SEVERITY_GAP) * t1..=(1.0 - SEVERITY_GAP) * t2),
        _ => rng.random_range((1.0 + SEVERITY_GAP) * t2..=2.0 * t2),
    }
}

/// Rater B's label: with probability `p`, an image whose severity lies within
/// 25% of a threshold is moved to the class on the other side of it.
fn rater_b_label(rater_a: usize, severity: f64, (t1, t2): (f64, f64), flip: bool) -> usize {
    if !flip {
        return rater_a;
    }
    let near = |t: f64| (severity - t).abs() <= 0.25 * t;
    let d1 = (severity - t1).abs();
    let d2 = (severity - t2).abs();
    let boundary = match (near(t1), near(t2)) {
        (true, true) if d1 <= d2 => Some((2, 1)),
        (true, true) => Some((1, 0)),
        (true, false) => Some((2, 1)),
        (false, true) => Some((1, 0)),
        (false, false) => None,
    };
    match boundary {
        Some((hi, lo)) if rater_a == hi => lo,
        Some((hi, lo)) if rater_a == lo => hi,
        _ => rater_a,
    }
}

/// Generates phantoms, corrupts each with a trace whose severity targets its
/// class, writes `images/img_NNNNN.pgm` and `manifest.csv` under `out_dir`.
pub fn synthesize_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let counts = largest_remainder(config.n, &config.proportions);
    let mut classes: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    let mut label_rng = rng::stream(config.seed, rng::STREAM_LABELS);
    classes.shuffle(&mut label_rng);

    let mut records = Vec::with_capacity(config.n);
    for (i, &class) in classes.iter().enumerate() {
        let mut rng = rng::corpus_item(config.seed, i as u64);
        let s = draw_severity(&mut rng, class, config.thresholds);
        let trace = random_trace_with(&mut rng, config.size, s);
        let phantom = generate_phantom(&PhantomSpec::new(config.size, rng.random()))?;
        let corrupted = simulate_motion(&phantom, &trace)?;
        let severity = trace.severity();
        let rater_a = severity_to_class(severity, config.thresholds)?;
        let flip = rng.random_bool(config.rater_noise);
        let rater_b = rater_b_label(rater_a, severity, config.thresholds, flip);

        let id = format!("img_{i:05}");
        let rel = format!("images/{id}.pgm");
        Gray8::from_unit(config.size, config.size, &corrupted.data).write(&out_dir.join(&rel))?;
        records.push(ManifestRecord {
            id,
            path: rel,
            rater_a,
            rater_b,
            severity: Some(severity),
            split: Split::Unassigned,
            volume: None,
        });
    }
    if let Some(ratios) = config.split {
        let split = SplitConfig {
            ratios,
            ..SplitConfig::new(config.seed)
        };
        split_dataset(&mut records, &split)?;
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_default_thousand() {
        assert_eq!(largest_remainder(1000, &DEFAULT_PROPORTIONS), vec![246, 578, 176]);
        assert_eq!(largest_remainder(2110, &DEFAULT_PROPORTIONS), vec![518, 1220, 372]);
    }

    #[test]
    fn severity_ranges_match_classes() {
        let mut rng = rng::stream(1, 99);
        for _ in 0..2000 {
            for class in 0..3 {
                let s = draw_severity(&mut rng, class, DEFAULT_THRESHOLDS);
                assert_eq!(severity_to_class(s, DEFAULT_THRESHOLDS).unwrap(), class, "{s}");
            }
        }
    }

    #[test]
    fn rater_b_moves_only_near_thresholds() {
        let t = DEFAULT_THRESHOLDS;
        assert_eq!(rater_b_label(2, 0.9, t, true), 1);
        assert_eq!(rater_b_label(1, 1.2, t, true), 2);
        assert_eq!(rater_b_label(1, 3.5, t, true), 0);
        assert_eq!(rater_b_label(0, 4.8, t, true), 1);
        assert_eq!(rater_b_label(2, 0.3, t, true), 2);
        assert_eq!(rater_b_label(1, 2.5, t, true), 1);
        assert_eq!(rater_b_label(0, 7.0, t, true), 0);
        assert_eq!(rater_b_label(2, 0.9, t, false), 2);
    }
}
