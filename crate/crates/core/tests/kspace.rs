use mqc_core::kspace::fft::signed_frequency;
use mqc_core::kspace::motion::acquisition_bin;
use mqc_core::kspace::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_complex(h: usize, w: usize, seed: u64) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexGrid {
        height: h,
        width: w,
        data,
    }
}

fn phantom(seed: u64) -> RealGrid {
    generate_phantom(&PhantomSpec::new(64, seed)).unwrap()
}

fn max_abs_diff(a: &RealGrid, b: &RealGrid) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn rmse(a: &RealGrid, b: &RealGrid) -> f64 {
    let sq: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    (sq / a.data.len() as f64).sqrt()
}

#[test]
fn round_trip_64() {
    let x = random_complex(64, 64, 1);
    let back = ifft2(&fft2(&x).unwrap()).unwrap();
    let err = x
        .data
        .iter()
        .zip(&back.data)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-9, "round trip error {err:e}");
}

#[test]
fn impulse_has_flat_spectrum() {
    let mut g = RealGrid::zeros(64, 64);
    g.data[0] = 1.0;
    let k = fft2_real(&g).unwrap();
    for c in &k.data {
        assert!((c.norm() - 1.0 / 64.0).abs() < 1e-15);
    }
}

#[test]
fn parseval() {
    for seed in 0..5 {
        let x = random_complex(64, 32, seed);
        let k = fft2(&x).unwrap();
        let rel = (x.energy() - k.energy()).abs() / x.energy();
        assert!(rel < 1e-9, "relative energy error {rel:e}");
    }
}

#[test]
fn constant_trace_is_circular_shift() {
    let img = phantom(5);
    for dx in 0..8 {
        for dy in 0..8 {
            let trace = MotionTrace::constant(64, dx as f64, dy as f64);
            let out = simulate_motion(&img, &trace).unwrap();
            let err = max_abs_diff(&out, &img.roll(dx, dy));
            assert!(err < 1e-6, "({dx},{dy}) error {err:e}");
        }
    }
}

#[test]
fn constant_trace_along_columns_is_circular_shift() {
    let img = phantom(6);
    let trace = MotionTrace::constant(64, 3.0, -5.0);
    let out = simulate_motion_along(&img, &trace, PhaseEncode::Columns).unwrap();
    assert!(max_abs_diff(&out, &img.roll(3, -5)) < 1e-6);
}

#[test]
fn zero_trace_is_identity() {
    let img = phantom(7);
    let out = simulate_motion(&img, &MotionTrace::zero(64)).unwrap();
    assert!(max_abs_diff(&out, &img) < 1e-6);
}

/// Moving a single acquired line must replace exactly that line of k-space
/// with the corresponding line of the transform of the shifted image.
#[test]
fn single_line_matches_spatially_shifted_oracle() {
    let img = phantom(8);
    let clean = fft2_real(&img).unwrap();
    for (r, dx, dy) in [(0usize, 3isize, 0isize), (17, -2, 5), (32, 7, 7), (63, 1, -6)] {
        let mut shifts = vec![(0.0, 0.0); 64];
        shifts[r] = (dx as f64, dy as f64);
        let mut k = clean.clone();
        corrupt_kspace(&mut k, &MotionTrace::new(shifts), PhaseEncode::Rows).unwrap();
        let shifted = fft2_real(&img.roll(dx, dy)).unwrap();
        let bin = acquisition_bin(r, 64);
        for y in 0..64 {
            let expected = if y == bin { shifted.row(y) } else { clean.row(y) };
            for (a, b) in k.row(y).iter().zip(expected) {
                assert!((a - b).norm() < 1e-9, "line {r} row {y}");
            }
        }
    }
    assert_eq!(signed_frequency(acquisition_bin(32, 64), 64), 0);
}

#[test]
fn half_trace_rmse_grows_with_displacement() {
    let mut means = Vec::new();
    for dx in [2.0, 4.0, 8.0] {
        let mut shifts = vec![(0.0, 0.0); 64];
        for s in &mut shifts[..32] {
            *s = (dx, 0.0);
        }
        let trace = MotionTrace::new(shifts);
        let total: f64 = (0..20)
            .map(|seed| {
                let img = phantom(100 + seed);
                rmse(&img, &simulate_motion(&img, &trace).unwrap())
            })
            .sum();
        means.push(total / 20.0);
    }
    assert!(means[0] > 0.0);
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn random_trace_rmse_is_monotone_in_severity() {
    let mut means = Vec::new();
    for s in [1.0, 2.0, 4.0, 8.0] {
        let total: f64 = (0..24)
            .map(|seed| {
                let img = phantom(200 + seed);
                let trace = random_trace(seed, 64, s).unwrap();
                rmse(&img, &simulate_motion(&img, &trace).unwrap())
            })
            .sum();
        means.push(total / 24.0);
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn phantom_seeds_differ() {
    for pair in 0..10 {
        let a = phantom(2 * pair);
        let b = phantom(2 * pair + 1);
        let differing = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
        assert!(
            differing * 100 >= a.data.len(),
            "pair {pair}: {differing} pixels differ"
        );
    }
}

#[test]
fn non_square_image_is_rejected() {
    let img = RealGrid::zeros(32, 64);
    assert!(simulate_motion(&img, &MotionTrace::zero(32)).is_err());
}

proptest! {
    #[test]
    fn random_trace_respects_bound(seed in any::<u64>(), s in 0.0f64..20.0, lines in prop::sample::select(vec![32usize, 64, 128])) {
        let t = random_trace(seed, lines, s).unwrap();
        prop_assert_eq!(t.len(), lines);
        prop_assert!(t.severity() <= s);
        prop_assert_eq!(t.severity() == 0.0, s == 0.0);
        prop_assert_eq!(&t, &random_trace(seed, lines, s).unwrap());
    }

    #[test]
    fn phantom_in_unit_range(seed in any::<u64>()) {
        let img = generate_phantom(&PhantomSpec::new(32, seed)).unwrap();
        prop_assert!(img.data.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn class_is_monotone_in_severity(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ca = severity_to_class(lo, DEFAULT_THRESHOLDS).unwrap();
        let cb = severity_to_class(hi, DEFAULT_THRESHOLDS).unwrap();
        prop_assert!(cb <= ca);
    }
}
