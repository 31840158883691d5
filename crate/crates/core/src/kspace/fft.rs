//! Radix-2 decimation-in-time FFT with unitary 2-D normalization.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// H x W complex grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

/// H x W real grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "real grid",
                format!("{} values", height * width),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Circular shift: the value at (y, x) moves to (y + dy, x + dx).
    pub fn roll(&self, dx: isize, dy: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = Self::zeros(self.height, self.width);
        for y in 0..h {
            for x in 0..w {
                let ty = (y + dy).rem_euclid(h) as usize;
                let tx = (x + dx).rem_euclid(w) as usize;
                out.data[ty * self.width + tx] = self.data[(y * w + x) as usize];
            }
        }
        out
    }
}

impl ComplexGrid {
    pub fn from_real(grid: &RealGrid) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            data: grid.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn row(&self, y: usize) -> &[Complex64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn magnitude(&self) -> RealGrid {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.data[y * self.width + x]);
            }
        }
        Self {
            height: self.width,
            width: self.height,
            data,
        }
    }
}

/// Signed frequency of DFT bin `k` out of `n`: 0..n/2-1, then -n/2..-1.
pub fn signed_frequency(k: usize, n: usize) -> isize {
    if k < n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

fn check_pow2(height: usize, width: usize) -> Result<()> {
    if height.is_power_of_two() && width.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "FFT dimensions must be powers of two, got {height}x{width}"
        )))
    }
}

/// Unnormalized in-place transform of a power-of-two length buffer;
/// `twiddles[k] = exp(+-2 pi i k / n)` picks the direction.
fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn transform_rows(grid: &mut ComplexGrid, sign: f64) {
    let tw = twiddles(grid.width, sign);
    for row in grid.data.chunks_exact_mut(grid.width) {
        fft_in_place(row, &tw);
    }
}

fn transform(grid: &ComplexGrid, sign: f64) -> Result<ComplexGrid> {
    check_pow2(grid.height, grid.width)?;
    let mut g = grid.clone();
    transform_rows(&mut g, sign);
    let mut t = g.transpose();
    transform_rows(&mut t, sign);
    let mut out = t.transpose();
    let scale = 1.0 / ((grid.height * grid.width) as f64).sqrt();
    for v in &mut out.data {
        *v *= scale;
    }
    Ok(out)
}

/// Forward 2-D DFT, `X[ky,kx] = sum x[y,x] exp(-2 pi i (ky y/H + kx x/W)) / sqrt(HW)`.
pub fn fft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, -1.0)
}

pub fn ifft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, 1.0)
}

pub fn fft2_real(grid: &RealGrid) -> Result<ComplexGrid> {
    fft2(&ComplexGrid::from_real(grid))
}
