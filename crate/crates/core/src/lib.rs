//! Divide-and-conquer Bayesian inference with normalizing-flow subposteriors.
//!
//! Each worker samples its subposterior (prior to the power `1/K` times its
//! shard likelihood), fits a real NVP flow to the draws and ships the
//! serialized flow. The server multiplies the flow densities and draws from
//! the product by importance sampling / resampling, proposing from one flow at
//! a time. Because every scale network ends in `tanh`, each flow density is
//! bounded and so are the importance weights.
//!
//! Modules, bottom-up:
//! - [`linalg`]: dense matrices, small MLPs with explicit backprop, ADAM.
//! - [`flow`]: coupling layers, exact log density, sampling, training, blob format.
//! - [`sampler`]: random-walk Metropolis, HMC and effective sample size.
//! - [`models`]: the experiment models, data generators and sharding.
//! - [`aggregate`]: NAP weights and NAP-SIR, plus parametric and consensus baselines.
//! - [`metrics`]: RMSE, concentration ratio, Gaussian KL, communication bytes.
//! - [`experiment`]: end-to-end runs, sweeps and result files.

pub mod aggregate;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
