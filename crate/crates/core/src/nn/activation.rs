//! Parameter-free layers: ReLU, global average pooling, flatten.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if output.dims() != grad_out.dims() {
        return Err(Error::shape("relu backward", output.dims(), grad_out.dims()));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor4::from_vec(output.dims(), data).expect("same length"))
}

pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let d = x.dims();
    let plane = d.plane();
    let inv = T::lit(1.0 / plane as f64);
    let mut out = Tensor4::zeros(Dims::new(d.batch, d.channels, 1, 1));
    for b in 0..d.batch {
        let src = x.item(b);
        for (c, o) in out.item_mut(b).iter_mut().enumerate() {
            *o = src[c * plane..(c + 1) * plane].iter().copied().sum::<T>() * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(input: Dims, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let expected = Dims::new(input.batch, input.channels, 1, 1);
    if grad_out.dims() != expected {
        return Err(Error::shape("global average pool backward", expected, grad_out.dims()));
    }
    let plane = input.plane();
    let inv = T::lit(1.0 / plane as f64);
    let mut grad_in = Tensor4::zeros(input);
    for b in 0..input.batch {
        let g = grad_out.item(b).to_vec();
        for (c, chunk) in grad_in.item_mut(b).chunks_exact_mut(plane).enumerate() {
            chunk.fill(g[c] * inv);
        }
    }
    Ok(grad_in)
}

pub fn flatten<T: Real>(x: Tensor4<T>) -> Tensor4<T> {
    let d = x.dims();
    x.reshape(Dims::new(d.batch, d.item_len(), 1, 1))
        .expect("flatten preserves length")
}
