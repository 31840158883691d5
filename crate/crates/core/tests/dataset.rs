use std::collections::{HashMap, HashSet};
use std::fs;

use mqc_core::dataset::*;
use mqc_core::kspace::{severity_to_class, DEFAULT_THRESHOLDS};
use mqc_core::pgm::{quantize, Gray8};
use proptest::prelude::*;

fn records(n: usize) -> Vec<ManifestRecord> {
    (0..n)
        .map(|i| ManifestRecord {
            id: format!("r{i}"),
            path: format!("r{i}.pgm"),
            rater_a: i % 3,
            rater_b: i % 3,
            severity: None,
            split: Split::Unassigned,
            volume: Some(format!("vol{}", i / 7)),
        })
        .collect()
}

fn sizes(rs: &[ManifestRecord]) -> (usize, usize, usize) {
    let count = |s| rs.iter().filter(|r| r.split == s).count();
    (count(Split::Train), count(Split::Eval), count(Split::Test))
}

#[test]
fn split_sizes_for_reported_corpus() {
    let mut rs = records(2110);
    split_dataset(&mut rs, &SplitConfig::new(3)).unwrap();
    assert_eq!(sizes(&rs), (1477, 211, 422));
    let mut small = records(10);
    split_dataset(&mut small, &SplitConfig::new(3)).unwrap();
    assert_eq!(sizes(&small), (7, 1, 2));
}

#[test]
fn split_is_deterministic_and_seed_dependent() {
    let mut a = records(300);
    let mut b = records(300);
    let mut c = records(300);
    split_dataset(&mut a, &SplitConfig::new(9)).unwrap();
    split_dataset(&mut b, &SplitConfig::new(9)).unwrap();
    split_dataset(&mut c, &SplitConfig::new(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn per_volume_split_keeps_volumes_together() {
    let mut rs = records(300);
    let cfg = SplitConfig {
        grouping: Grouping::PerVolume,
        ..SplitConfig::new(4)
    };
    split_dataset(&mut rs, &cfg).unwrap();
    let mut by_volume: HashMap<&str, HashSet<Split>> = HashMap::new();
    for r in &rs {
        by_volume
            .entry(r.volume.as_deref().unwrap())
            .or_default()
            .insert(r.split);
    }
    assert!(by_volume.values().all(|s| s.len() == 1));
    assert!(rs.iter().all(|r| r.split != Split::Unassigned));
}

#[test]
fn empty_manifest_cannot_be_split() {
    assert!(split_dataset(&mut [], &SplitConfig::new(0)).is_err());
}

#[test]
fn class_distribution_regroups_three_to_binary() {
    let mut rs = Vec::new();
    for (class, n) in [(0usize, 518usize), (1, 1220), (2, 372)] {
        for i in 0..n {
            let mut r = records(1).remove(0);
            r.id = format!("{class}-{i}");
            r.rater_a = class;
            rs.push(r);
        }
    }
    assert_eq!(
        class_distribution(&rs, Task::Three, LabelPolicy::RaterA),
        vec![518, 1220, 372]
    );
    assert_eq!(
        class_distribution(&rs, Task::Binary, LabelPolicy::RaterA),
        vec![518, 1592]
    );
    assert_eq!(class_distribution(&[], Task::Three, LabelPolicy::RaterA), vec![0, 0, 0]);
    let share = 1592.0 / 2110.0;
    assert!((share - 0.7545f64).abs() < 1e-4);
}

#[test]
fn normalization_inverts_quantization() {
    for i in 0..=1000 {
        let p = i as f64 / 1000.0;
        let img = Gray8 {
            width: 1,
            height: 1,
            pixels: vec![quantize(p)],
        };
        let back = normalize_image(&img)[0] as f64;
        assert!((back - p).abs() <= 1.0 / 510.0 + 1e-7, "{p} -> {back}");
    }
}

#[test]
fn corpus_counts_labels_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = CorpusConfig::new(1000, 17);
    let m = synthesize_corpus(&cfg, &a).unwrap();
    synthesize_corpus(&cfg, &b).unwrap();

    assert_eq!(
        class_distribution(&m.records, Task::Three, LabelPolicy::RaterA),
        vec![246, 578, 176]
    );
    for r in &m.records {
        let s = r.severity.unwrap();
        assert_eq!(severity_to_class(s, DEFAULT_THRESHOLDS).unwrap(), r.rater_a, "{}", r.id);
        assert!(r.rater_a.abs_diff(r.rater_b) <= 1);
    }
    assert!(m.records.iter().any(|r| r.rater_a != r.rater_b));
    let split = |s| m.records.iter().filter(|r| r.split == s).count();
    assert_eq!(
        (split(Split::Train), split(Split::Eval), split(Split::Test)),
        (700, 100, 200)
    );

    let manifest_a = fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest_a, fs::read(b.join("manifest.csv")).unwrap());
    for r in m.records.iter().step_by(97) {
        assert_eq!(fs::read(a.join(&r.path)).unwrap(), fs::read(b.join(&r.path)).unwrap());
    }
    let reread = Manifest::read(&a.join("manifest.csv")).unwrap();
    assert_eq!(reread.records, m.records);
    let loaded = reread.load_split(Split::Eval, 64).unwrap();
    assert_eq!(loaded.len(), 100);
    assert!(loaded.iter().all(|(_, px)| px.len() == 64 * 64));
}

#[test]
fn corpus_without_rater_noise_has_identical_raters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        rater_noise: 0.0,
        ..CorpusConfig::new(60, 5)
    };
    let m = synthesize_corpus(&cfg, dir.path()).unwrap();
    assert!(m.records.iter().all(|r| r.rater_a == r.rater_b));
}

#[test]
fn corpus_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synthesize_corpus(&CorpusConfig::new(5, 0), dir.path()).is_err());
    let cfg = CorpusConfig {
        proportions: [0.5, 0.5, 0.5],
        ..CorpusConfig::new(20, 0)
    };
    assert!(synthesize_corpus(&cfg, dir.path()).is_err());
}

#[test]
fn unwritable_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert!(synthesize_corpus(&CorpusConfig::new(10, 0), &blocker.join("sub")).is_err());
}

proptest! {
    #[test]
    fn split_partitions(n in 1usize..400, seed in any::<u64>(), a in 0u32..=10, b in 0u32..=10) {
        prop_assume!(a + b <= 10);
        let ratios = ((10 - a - b) as f64 / 10.0, a as f64 / 10.0, b as f64 / 10.0);
        let mut rs = records(n);
        let cfg = SplitConfig { ratios, ..SplitConfig::new(seed) };
        split_dataset(&mut rs, &cfg).unwrap();
        prop_assert!(rs.iter().all(|r| r.split != Split::Unassigned));
        prop_assert_eq!(sizes(&rs), split_sizes(n, ratios));
        let (tr, ev, te) = sizes(&rs);
        prop_assert_eq!(tr + ev + te, n);
        prop_assert_eq!(ev, (n as f64 * ratios.1 + 1e-9).floor() as usize);
    }

    #[test]
    fn binarize_stays_binary(labels in prop::collection::vec(0i64..3, 0..50)) {
        let out = binarize_labels(&labels).unwrap();
        prop_assert_eq!(out.len(), labels.len());
        prop_assert!(out.iter().all(|&l| l <= 1));
        let ones = out.iter().filter(|&&l| l == 1).count();
        prop_assert_eq!(ones, labels.iter().filter(|&&l| l >= 1).count());
    }

    #[test]
    fn largest_remainder_sums(n in 0usize..5000, w in prop::collection::vec(0.01f64..1.0, 1..6)) {
        let counts = largest_remainder(n, &w);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        let total: f64 = w.iter().sum();
        for (c, s) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - n as f64 * s / total).abs() < 1.0 + 1e-9);
        }
    }
}
