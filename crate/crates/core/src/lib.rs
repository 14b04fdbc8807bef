//! Distributional principal autoencoders.
//!
//! An encoder maps data to an ordered latent vector; a noise-driven decoder
//! samples reconstructions from the conditional distribution of the data
//! given the first `k` latents. Training minimizes a weighted sum over `k` of
//! energy-score losses. The crate also ships PCA and an ordered
//! (zero-masked) autoencoder as baselines, distributional metrics, synthetic
//! data generators and the on-disk formats used by the `dpa` command line.

pub mod baselines;
pub mod data;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod tape;

pub use error::{DpaError, Result};
pub use matrix::Matrix;
