use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::dataset::{ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Grouping {
    #[default]
    PerImage,
    /// Records sharing a volume id always land in the same split.
    PerVolume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    /// (train, eval, test)
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub grouping: Grouping,
}

impl SplitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            ratios: (0.7, 0.1, 0.2),
            seed,
            grouping: Grouping::PerImage,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        let valid = [a, b, c].iter().all(|r| (0.0..=1.0).contains(r));
        if !valid || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must lie in [0, 1] and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        Ok(())
    }
}

/// `(train, eval, test)` sizes: eval and test get `floor(n * ratio)`, train
/// the rest. The small slack absorbs products such as `100 * 0.29` that land
/// just under an integer.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let floor = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let eval = floor(ratios.1);
    let test = floor(ratios.2);
    (n - eval - test, eval, test)
}

/// Assigns every record to train, eval or test after a seeded shuffle.
pub fn split_dataset(records: &mut [ManifestRecord], config: &SplitConfig) -> Result<()> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptySplit("manifest".into()));
    }
    let (_, n_eval, n_test) = split_sizes(records.len(), config.ratios);
    let mut rng = rng::stream(config.seed, rng::STREAM_SPLIT);
    match config.grouping {
        Grouping::PerImage => {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                records[i].split = if pos < n_eval {
                    Split::Eval
                } else if pos < n_eval + n_test {
                    Split::Test
                } else {
                    Split::Train
                };
            }
        }
        Grouping::PerVolume => {
            // Records without a volume form singleton groups keyed by id.
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                let key = match &r.volume {
                    Some(v) => format!("v:{v}"),
                    None => format!("i:{}", r.id),
                };
                groups.entry(key).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            let (mut eval, mut test) = (0, 0);
            for g in groups {
                let split = if eval + g.len() <= n_eval {
                    eval += g.len();
                    Split::Eval
                } else if test + g.len() <= n_test {
                    test += g.len();
                    Split::Test
                } else {
                    Split::Train
                };
                for i in g {
                    records[i].split = split;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_floor_rule() {
        assert_eq!(split_sizes(2110, (0.7, 0.1, 0.2)), (1477, 211, 422));
        assert_eq!(split_sizes(10, (0.7, 0.1, 0.2)), (7, 1, 2));
        assert_eq!(split_sizes(100, (0.42, 0.29, 0.29)), (42, 29, 29));
        assert_eq!(split_sizes(7, (0.5, 0.25, 0.25)), (5, 1, 1));
    }

    #[test]
    fn bad_ratios_rejected() {
        let cfg = SplitConfig {
            ratios: (0.7, 0.2, 0.2),
            ..SplitConfig::new(0)
        };
        assert!(cfg.validate().is_err());
    }
}
