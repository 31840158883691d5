//! From-scratch network layers, loss, optimizer and the two classifiers.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
mod kernels;
pub mod loss;
pub mod network;
pub mod residual;

pub use activation::relu;
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNormLayer, BatchStats};
pub use conv::ConvLayer;
pub use dense::DenseLayer;
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{
    build, build_convnet4, build_resnet10lite, Architecture, Backprop, ForwardPass, Gradients, Layer, Mode, Network,
    DEFAULT_CHANNEL_PLAN, DEFAULT_RESNET_BASE,
};
pub use residual::ResidualBlock;
