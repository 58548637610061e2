//! Bayesian regression with time-varying coefficients.
//!
//! Each coefficient fluctuates around a latent local-level (optionally
//! local-linear-trend) state. Posterior draws come from a three-block Gibbs
//! sampler: a conjugate Gaussian coefficient block, forward-filtering
//! backward-sampling of the states, and inverse-gamma variance updates. A
//! logistic variant swaps the coefficient block for an adaptive Metropolis
//! step.

pub mod binary;
pub mod cli;
pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod forecast;
pub mod io;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use draws::{DrawStore, ParamId, ParamLayout};
pub use error::{Error, Result};
pub use model::{validate_dataset, Dataset, ModelConfig, OutcomeKind, RawRecord};
pub use sampler::{GibbsSampler, Parallelism};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
