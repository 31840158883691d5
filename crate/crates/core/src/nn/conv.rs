//! 2-D convolution (cross-correlation, zero padding) via im2col.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::kernels::{axpy, dot};
use crate::tensor::{Dims, Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    /// `(out_channels, in_channels, kh, kw)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Output spatial extent for one axis, `None` when it would be < 1.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: vec![T::zero(); out_channels * in_channels * kernel.0 * kernel.1],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn he_init<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let fan_in = (in_channels * kernel.0 * kernel.1) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in &mut layer.weights {
            *w = T::lit(normal.sample(rng));
        }
        layer
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.channels != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("{} input channels", self.in_channels),
                input,
            ));
        }
        let oh = output_extent(input.height, self.kernel.0, self.stride, self.padding.0);
        let ow = output_extent(input.width, self.kernel.1, self.stride, self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Dims::new(input.batch, self.out_channels, oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "spatial size admitting a {}x{} kernel with padding {:?}",
                    self.kernel.0, self.kernel.1, self.padding
                ),
                input,
            )),
        }
    }

    /// Unfolds one batch item into a `(patch_len, out_h * out_w)` column matrix.
    fn im2col(&self, item: &[T], input: Dims, out: Dims, col: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let s = self.stride as isize;
        let positions = out.plane();
        for c in 0..self.in_channels {
            let plane = &item[c * input.plane()..(c + 1) * input.plane()];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut col[((c * kh + i) * kw + j) * positions..][..positions];
                    for oy in 0..out.height {
                        let y = oy as isize * s - ph + i as isize;
                        let dst = &mut row[oy * out.width..(oy + 1) * out.width];
                        if y < 0 || y >= input.height as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * input.width..(y as usize + 1) * input.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let x = ox as isize * s - pw + j as isize;
                            *d = if x < 0 || x >= input.width as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Patch-major layout: one contiguous `patch_len` row per output position.
    fn im2row(&self, item: &[T], input: Dims, out: Dims, rows: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let s = self.stride as isize;
        let k = self.patch_len();
        for oy in 0..out.height {
            for ox in 0..out.width {
                let patch = &mut rows[(oy * out.width + ox) * k..][..k];
                let mut idx = 0;
                for c in 0..self.in_channels {
                    let plane = &item[c * input.plane()..(c + 1) * input.plane()];
                    for i in 0..kh {
                        let y = oy as isize * s - ph + i as isize;
                        let inside_y = y >= 0 && y < input.height as isize;
                        for j in 0..kw {
                            let x = ox as isize * s - pw + j as isize;
                            patch[idx] = if inside_y && x >= 0 && x < input.width as isize {
                                plane[y as usize * input.width + x as usize]
                            } else {
                                T::zero()
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    }

    /// Scatters a column-gradient matrix back onto one input item.
    fn col2im(&self, col: &[T], input: Dims, out: Dims, item: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let s = self.stride as isize;
        let positions = out.plane();
        for c in 0..self.in_channels {
            let plane = &mut item[c * input.plane()..(c + 1) * input.plane()];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &col[((c * kh + i) * kw + j) * positions..][..positions];
                    for oy in 0..out.height {
                        let y = oy as isize * s - ph + i as isize;
                        if y < 0 || y >= input.height as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * input.width..(y as usize + 1) * input.width];
                        for ox in 0..out.width {
                            let x = ox as isize * s - pw + j as isize;
                            if x >= 0 && x < input.width as isize {
                                dst[x as usize] = dst[x as usize] + row[oy * out.width + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let in_dims = input.dims();
        let out_dims = self.output_dims(in_dims)?;
        let positions = out_dims.plane();
        let k = self.patch_len();
        let mut patches = vec![T::zero(); k * positions];
        let mut out = Tensor4::zeros(out_dims);
        for b in 0..in_dims.batch {
            self.im2row(input.item(b), in_dims, out_dims, &mut patches);
            let dst = out.item_mut(b);
            for oc in 0..self.out_channels {
                let row = &mut dst[oc * positions..(oc + 1) * positions];
                let w = &self.weights[oc * k..(oc + 1) * k];
                for (v, patch) in row.iter_mut().zip(patches.chunks_exact(k)) {
                    *v = self.bias[oc] + dot(w, patch);
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        input: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        grad: &mut ConvGrad<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor4<T>>> {
        let in_dims = input.dims();
        let out_dims = self.output_dims(in_dims)?;
        if grad_out.dims() != out_dims {
            return Err(Error::shape("conv2d backward", out_dims, grad_out.dims()));
        }
        let positions = out_dims.plane();
        let k = self.patch_len();
        let mut col = vec![T::zero(); k * positions];
        let mut dcol = vec![T::zero(); k * positions];
        let mut grad_in = need_input_grad.then(|| Tensor4::zeros(in_dims));
        for b in 0..in_dims.batch {
            self.im2col(input.item(b), in_dims, out_dims, &mut col);
            let dout = grad_out.item(b);
            for oc in 0..self.out_channels {
                let drow = &dout[oc * positions..(oc + 1) * positions];
                grad.bias[oc] = grad.bias[oc] + drow.iter().copied().sum::<T>();
                let gw = &mut grad.weights[oc * k..(oc + 1) * k];
                for (kk, g) in gw.iter_mut().enumerate() {
                    *g = *g + dot(drow, &col[kk * positions..(kk + 1) * positions]);
                }
            }
            if let Some(gi) = grad_in.as_mut() {
                dcol.fill(T::zero());
                for oc in 0..self.out_channels {
                    let drow = &dout[oc * positions..(oc + 1) * positions];
                    let w = &self.weights[oc * k..(oc + 1) * k];
                    for (kk, &wv) in w.iter().enumerate() {
                        axpy(wv, drow, &mut dcol[kk * positions..(kk + 1) * positions]);
                    }
                }
                self.col2im(&dcol, in_dims, out_dims, gi.item_mut(b));
            }
        }
        Ok(grad_in)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        Self {
            weights: vec![T::zero(); layer.weights.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}
