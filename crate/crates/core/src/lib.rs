//! Batch whitening: the five whitening transforms with analytic backward
//! passes, group-based whitening, a complete whitening layer with running
//! population statistics, the stochastic normalization disturbance (SND)
//! toolkit, and a small MLP harness for MNIST-scale experiments.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod transforms;
pub mod gradients;
pub mod layer;
pub mod gradcheck;
pub mod stochasticity;
pub mod harness;

pub use error::{Error, Result};
pub use linalg::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transforms.md")]
    mod transforms {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/layer.md")]
    mod layer {}
    #[doc = include_str!("../../../book/src/stochasticity.md")]
    mod stochasticity {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
