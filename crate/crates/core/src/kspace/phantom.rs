//! Ellipse phantoms standing in for abdominal slices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kspace::fft::RealGrid;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    /// Inclusive range for the number of interior structures.
    pub ellipses: (usize, usize),
    /// Intensity range of interior structures.
    pub intensity: (f64, f64),
    pub background: f64,
    /// Standard deviation of the additive noise.
    pub noise: f64,
}

impl PhantomSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            seed,
            ellipses: (3, 8),
            intensity: (0.15, 0.95),
            background: 0.02,
            noise: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, centre: (f64, f64), axes: (f64, f64), spread: f64) -> Self {
        let angle = rng.random_range(-spread..=spread);
        Self {
            cx: centre.0,
            cy: centre.1,
            a: axes.0,
            b: axes.1,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.cx, v - self.cy);
        let p = du * self.cos + dv * self.sin;
        let q = -du * self.sin + dv * self.cos;
        (p / self.a).powi(2) + (q / self.b).powi(2) <= 1.0
    }
}

/// A body ellipse with interior structures, a mild intensity gradient and
/// additive noise, clamped to [0, 1]. Fully determined by `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<RealGrid> {
    if spec.size < 32 {
        return Err(Error::InvalidArgument(format!(
            "phantom size must be >= 32, got {}",
            spec.size
        )));
    }
    let (lo, hi) = spec.intensity;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) || spec.ellipses.0 > spec.ellipses.1 {
        return Err(Error::InvalidArgument(
            "invalid phantom intensity or ellipse range".into(),
        ));
    }
    let mut rng = rng::stream(spec.seed, rng::STREAM_CORPUS);
    let centre = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let axes = (rng.random_range(0.6..0.85), rng.random_range(0.45..0.7));
    let body = Ellipse::random(&mut rng, centre, axes, 0.2);
    let body_level = rng.random_range(0.35..0.55);
    let count = rng.random_range(spec.ellipses.0..=spec.ellipses.1);
    let organs: Vec<(Ellipse, f64)> = (0..count)
        .map(|_| {
            let centre = (
                body.cx + body.a * rng.random_range(-0.6..0.6),
                body.cy + body.b * rng.random_range(-0.6..0.6),
            );
            let axes = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
            let e = Ellipse::random(&mut rng, centre, axes, std::f64::consts::PI);
            (e, rng.random_range(lo..=hi))
        })
        .collect();
    let gradient = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite std");

    let n = spec.size;
    let mut img = RealGrid::zeros(n, n);
    for y in 0..n {
        let v = (y as f64 + 0.5) / n as f64 * 2.0 - 1.0;
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64 * 2.0 - 1.0;
            let mut p = spec.background;
            if body.contains(u, v) {
                p = body_level;
                for (e, level) in &organs {
                    if e.contains(u, v) && body.contains(e.cx, e.cy) {
                        p = *level;
                    }
                }
                p *= 1.0 + gradient.0 * u + gradient.1 * v;
            }
            p += noise.sample(&mut rng);
            img.data[y * n + x] = p.clamp(0.0, 1.0);
        }
    }
    Ok(img)
}
