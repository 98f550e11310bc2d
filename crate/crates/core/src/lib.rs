//! Kernel mixture networks for conditional density estimation.
//!
//! A kernel mixture network (KMN) places a fixed family of kernels on a set
//! of center points taken from the training targets and lets a neural network
//! produce the non-negative mixing weights. The normalized weighted sum is a
//! conditional density over the target. The crate contains:
//!
//! - [`ndnet`]: a small dense network with reverse-mode gradients and SGD/Adam.
//! - [`kernels`]: Gaussian, von Mises and rectangular kernels plus samplers.
//! - [`mixture`]: center selection, the KMN density and its loss, the quantized
//!   softmax density and unconditional kernel (mixture) density estimation.
//! - [`filtering`]: synthetic oscillator and phase-tracking experiments, filter
//!   training and an extended Kalman filter baseline.
//! - [`evalkit`]: quadrature, grid KL divergence and CSV emitters.
//! - [`cli`]: the `kmn` command line driver.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod filtering;
pub mod kernels;
pub mod mixture;
pub mod ndnet;
pub mod seed;

pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec, Manifold};
pub use mixture::{CenterSet, MixtureDensity, MixtureHead};
pub use ndnet::{Activation, DenseNet, Optimizer};
