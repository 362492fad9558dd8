//! Mixture-of-generators GAN laboratory.
//!
//! K generators sharing all but their input layer play a three-party game
//! against a discriminator and a classifier that share all but their output
//! heads. The crate provides everything needed to train that game on 2D
//! synthetic data and to check its optimality theory numerically:
//!
//! - [`tensor`] / [`autodiff`]: dense tensors and a reverse-mode tape
//! - [`nn`]: the generator bank and the classifier/discriminator network
//! - [`optim`]: the Adam optimizer
//! - [`data`]: the ring-of-Gaussians target and noise priors
//! - [`game`]: mixture sampling, the three losses and the training loop
//! - [`metrics`]: histogram divergences, Sinkhorn Wasserstein, mode coverage
//! - [`oracle`]: lattice densities, optimal classifier/discriminator, JSD
//! - [`checkpoint`]: binary parameter files
//! - [`plot`]: SVG scatter plots

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod game;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod plot;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use data::{NoisePrior, RingSpec};
pub use error::{Error, Result};
pub use game::{MetricRecord, MetricTrace, MixtureConfig};
pub use metrics::{HistGrid, Histogram2D};
pub use nn::{CdNet, GeneratorBank};
pub use optim::{AdamConfig, AdamState};
pub use oracle::{GridDensity, Lattice};
pub use tensor::{Real, Tensor};
