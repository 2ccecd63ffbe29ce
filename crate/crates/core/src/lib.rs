//! Bayesian engine for spatial latent health factor models.
//!
//! Observed national metrics load on an unobserved health score per
//! country; the scores follow a spatially correlated regression on
//! covariates, and an optional propensity-score layer estimates the effect
//! of a binary policy treatment. Inference is Metropolis-within-Gibbs.
//!
//! Module map:
//! - [`ingest`]: CSV to [`Dataset`] (filtering, standardization, distances)
//! - [`stochastics`]: random streams and distribution kernels
//! - [`model`]: parameter layout, priors, log joint density
//! - [`sampler`]: the Gibbs sweep, chains, checkpoints, sample storage
//! - [`posterior`]: summaries, rankings, effects, diagnostics
//! - [`validation`]: synthetic data, joint-distribution tests, grid oracles

pub mod dataset;
pub mod error;
pub mod ingest;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod stochastics;
pub mod validation;

pub use dataset::{Country, Dataset};
pub use error::{Error, Result};
pub use model::{ChainState, ModelConfig, PriorConfig, Variant};
