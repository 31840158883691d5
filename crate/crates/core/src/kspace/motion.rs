//! Rigid in-plane translation applied line by line in k-space.
//!
//! Phase-encode lines are acquired in centered order: trace entry `r`
//! corresponds to the signed frequency `r - H/2`, so the middle of the trace
//! covers the center of k-space.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kspace::fft::{fft2_real, ifft2, signed_frequency, ComplexGrid, RealGrid};

/// Axis along which successive k-space lines are acquired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhaseEncode {
    /// Each k-space row is one acquisition instant.
    #[default]
    Rows,
    /// Each k-space column is one acquisition instant.
    Columns,
}

/// Per-line translation schedule, `(dx, dy)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrace {
    shifts: Vec<(f64, f64)>,
    severity: f64,
}

impl MotionTrace {
    pub fn new(shifts: Vec<(f64, f64)>) -> Self {
        let severity = shifts.iter().map(|&(dx, dy)| dx.hypot(dy)).fold(0.0, f64::max);
        Self { shifts, severity }
    }

    pub fn zero(lines: usize) -> Self {
        Self::new(vec![(0.0, 0.0); lines])
    }

    pub fn constant(lines: usize, dx: f64, dy: f64) -> Self {
        Self::new(vec![(dx, dy); lines])
    }

    pub fn shifts(&self) -> &[(f64, f64)] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Largest displacement magnitude over all lines.
    pub fn severity(&self) -> f64 {
        self.severity
    }
}

/// DFT bin acquired at position `r` of the centered acquisition order.
pub fn acquisition_bin(r: usize, n: usize) -> usize {
    (r + n / 2) % n
}

fn ramp(kx: isize, ky: isize, dx: f64, dy: f64, w: usize, h: usize) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * (kx as f64 * dx / w as f64 + ky as f64 * dy / h as f64))
}

/// Multiplies every acquired line by the phase ramp of its translation.
pub fn corrupt_kspace(kspace: &mut ComplexGrid, trace: &MotionTrace, axis: PhaseEncode) -> Result<()> {
    let (h, w) = (kspace.height, kspace.width);
    let lines = match axis {
        PhaseEncode::Rows => h,
        PhaseEncode::Columns => w,
    };
    if trace.len() != lines {
        return Err(Error::shape(
            "motion trace",
            format!("{lines} lines"),
            format!("{} lines", trace.len()),
        ));
    }
    for (r, &(dx, dy)) in trace.shifts().iter().enumerate() {
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let bin = acquisition_bin(r, lines);
        match axis {
            PhaseEncode::Rows => {
                let ky = signed_frequency(bin, h);
                for x in 0..w {
                    kspace.data[bin * w + x] *= ramp(signed_frequency(x, w), ky, dx, dy, w, h);
                }
            }
            PhaseEncode::Columns => {
                let kx = signed_frequency(bin, w);
                for y in 0..h {
                    kspace.data[y * w + bin] *= ramp(kx, signed_frequency(y, h), dx, dy, w, h);
                }
            }
        }
    }
    Ok(())
}

/// Corrupts `image` with `trace` along k-space rows.
pub fn simulate_motion(image: &RealGrid, trace: &MotionTrace) -> Result<RealGrid> {
    simulate_motion_along(image, trace, PhaseEncode::Rows)
}

/// Magnitude of the inverse transform after line-wise corruption, clamped
/// to [0, 1].
pub fn simulate_motion_along(image: &RealGrid, trace: &MotionTrace, axis: PhaseEncode) -> Result<RealGrid> {
    if image.height != image.width {
        return Err(Error::InvalidArgument(format!(
            "motion simulation needs a square image, got {}x{}",
            image.height, image.width
        )));
    }
    let mut k = fft2_real(image)?;
    corrupt_kspace(&mut k, trace, axis)?;
    let mut out = ifft2(&k)?.magnitude();
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Displacement of magnitude `m` (at most `m` after rounding) in a uniformly
/// random direction.
fn displacement<R: Rng>(rng: &mut R, m: f64) -> (f64, f64) {
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (m * angle.cos(), m * angle.sin());
    let excess = dx.hypot(dy) / m;
    if excess > 1.0 {
        (dx / excess, dy / excess)
    } else {
        (dx, dy)
    }
}

/// Piecewise-constant trace made of one or two transient movements, each a
/// pair of events (move away, return to rest), so two or four events.
///
/// The subject is at rest while the centre of k-space is acquired. The main
/// movement starts one or two lines (`H/32` at most) after the centre,
/// lasts `H/8` lines and has magnitude exactly `s`. With probability 1/2 a
/// shorter movement (`H/16` lines) of magnitude uniform in `[0, s/2]`
/// follows later, inside the middle half of the acquisition. Holding the
/// main movement's timing nearly fixed makes the ghosting energy a tight,
/// increasing function of `s`.
pub fn random_trace_with<R: Rng>(rng: &mut R, lines: usize, s: f64) -> MotionTrace {
    let mut shifts = vec![(0.0, 0.0); lines];
    if lines == 0 {
        return MotionTrace::new(shifts);
    }
    let start = (lines / 2 + rng.random_range(1..=(lines / 32).max(1))).min(lines - 1);
    let end = (start + (lines / 8).max(1)).min(lines);
    let main = displacement(rng, s);
    shifts[start..end].fill(main);

    if rng.random_bool(0.5) && end + 1 < lines {
        let b = rng.random_range(end + 1..(3 * lines / 4).max(end + 2));
        let len = (lines / 16).max(1).min(lines - b);
        let m = rng.random_range(0.0..=s / 2.0);
        let minor = displacement(rng, m);
        shifts[b..b + len].fill(minor);
    }
    MotionTrace::new(shifts)
}

pub fn random_trace(seed: u64, lines: usize, s: f64) -> Result<MotionTrace> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "severity must be finite and >= 0, got {s}"
        )));
    }
    Ok(random_trace_with(&mut ChaCha8Rng::seed_from_u64(seed), lines, s))
}

/// Quality class for a motion severity: 2 excellent, 1 diagnostic, 0 poor.
pub fn severity_to_class(s: f64, thresholds: (f64, f64)) -> Result<usize> {
    let (t1, t2) = thresholds;
    if !(0.0 <= t1 && t1 < t2) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 <= t1 < t2, got ({t1}, {t2})"
        )));
    }
    Ok(if s <= t1 {
        2
    } else if s <= t2 {
        1
    } else {
        0
    })
}

pub const DEFAULT_THRESHOLDS: (f64, f64) = (1.0, 4.0);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_is_max_norm() {
        let t = MotionTrace::new(vec![(0.0, 0.0), (3.0, 4.0), (-1.0, 0.0)]);
        assert_eq!(t.severity(), 5.0);
    }

    #[test]
    fn class_boundaries() {
        let d = DEFAULT_THRESHOLDS;
        assert_eq!(severity_to_class(0.0, d).unwrap(), 2);
        assert_eq!(severity_to_class(1.0, d).unwrap(), 2);
        assert_eq!(severity_to_class(2.5, d).unwrap(), 1);
        assert_eq!(severity_to_class(4.0, d).unwrap(), 1);
        assert_eq!(severity_to_class(6.0, d).unwrap(), 0);
        assert!(severity_to_class(1.0, (2.0, 2.0)).is_err());
        assert!(severity_to_class(1.0, (-1.0, 2.0)).is_err());
    }

    #[test]
    fn zero_severity_trace_is_zero() {
        let t = random_trace(7, 64, 0.0).unwrap();
        assert!(t.shifts().iter().all(|&s| s == (0.0, 0.0)));
        assert_eq!(t.severity(), 0.0);
    }

    #[test]
    fn trace_reaches_requested_severity() {
        for seed in 0..50 {
            let t = random_trace(seed, 64, 8.0).unwrap();
            assert_eq!(t.len(), 64);
            assert!(t.severity() <= 8.0 && t.severity() > 8.0 - 1e-12);
        }
    }

    #[test]
    fn centered_order_starts_at_most_negative_frequency() {
        assert_eq!(signed_frequency(acquisition_bin(0, 8), 8), -4);
        assert_eq!(signed_frequency(acquisition_bin(4, 8), 8), 0);
        assert_eq!(signed_frequency(acquisition_bin(7, 8), 8), 3);
    }

    #[test]
    fn length_mismatch_is_error() {
        let img = RealGrid::zeros(8, 8);
        assert!(simulate_motion(&img, &MotionTrace::zero(4)).is_err());
    }
}
