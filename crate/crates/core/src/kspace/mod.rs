//! Synthetic phantoms and k-space rigid-motion corruption.

pub mod fft;
pub mod motion;
pub mod phantom;

pub use fft::{fft2, fft2_real, ifft2, ComplexGrid, RealGrid};
pub use motion::{
    corrupt_kspace, random_trace, random_trace_with, severity_to_class, simulate_motion, simulate_motion_along,
    MotionTrace, PhaseEncode, DEFAULT_THRESHOLDS,
};
pub use phantom::{generate_phantom, PhantomSpec};
