//! Measurement-aligned sampling (MAS) for linear inverse problems.
//!
//! The forward operator is held in SVD form ([`spectral`]), the prior is an
//! analytic Gaussian mixture with an exact denoiser ([`prior`]), and every
//! posterior-mean update reduces to diagonal scalings in the singular bases
//! ([`posterior`], [`budget`]). [`sampler`] runs the reverse diffusion loop,
//! [`experiment`] drives end-to-end runs from a config file.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod degrade;
pub mod error;
pub mod experiment;
pub mod image;
pub mod metrics;
pub mod posterior;
pub mod prior;
pub mod sampler;
pub mod schedule;
pub mod spectral;

pub use error::{Error, Result};
pub use image::{ImageTensor, Shape};
pub use posterior::MasWeights;
pub use prior::GaussianMixturePrior;
pub use spectral::SpectralOperator;
