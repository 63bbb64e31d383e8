//! Compressive learning of generative networks.
//!
//! A dataset is compressed once into a sketch, the average of random Fourier
//! features `Φ(x) = m^{-1/2}·exp(iΩᵀx)` over its samples. A generator network
//! is then trained to match that sketch: the cost is the squared distance
//! between the dataset sketch and the sketch of generated samples, and its
//! gradient composes the feature Jacobian with backpropagation through the
//! generator. Evaluating the cost never touches the original data, so its
//! price does not depend on the dataset size.
//!
//! The sketch distance approximates the maximum mean discrepancy (MMD) under
//! the kernel paired with the frequency law; [`kernel_oracle`] computes the
//! exact quadratic-time MMD to check that approximation.
//!
//! Modules:
//! - [`rff_sketch`]: frequencies, feature map, Jacobian, mergeable sketches
//! - [`kernel_oracle`]: exact kernels, MMD, Monte-Carlo kernel check
//! - [`generator`]: fully-connected Leaky-ReLU generator and its VJP
//! - [`trainer`]: sketch-matching cost, gradient, optimizers, training loop
//! - [`datasets`]: spiral, six-Gaussian mixture and circle fixtures, histograms
//! - [`formats`]: CSV and binary file formats
//! - [`cli`]: the `clgn` command-line front end

pub mod cli;
pub mod datasets;
pub mod error;
pub mod exec;
pub mod formats;
pub mod generator;
pub mod kernel_oracle;
pub mod rff_sketch;
pub mod rng;
pub mod samples;
pub mod trainer;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use exec::Exec;
pub use samples::SampleSet;
