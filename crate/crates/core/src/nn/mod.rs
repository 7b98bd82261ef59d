//! Minimal reverse-mode autodiff and the layers the course models need.
//!
//! The engine favors reproducibility over speed: plain f64 loops, libm for
//! every transcendental, fixed iteration orders. Given the same seed and
//! inputs, training produces bit-identical parameters on any platform.

pub mod act;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{AdamConfig, Bindings, ParamStore};
pub use tape::{Grads, Tape, Var, BCE_EPS, LAYER_NORM_EPS};
pub use tensor::Tensor;
