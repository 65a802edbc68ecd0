//! Bayesian state-space modelling of weekly news-sentiment panels.
//!
//! Articles are aggregated into a category panel of relevance-weighted mean
//! sentiment `y` and information weight `n`. Each category follows a latent
//! AR(1) process observed with noise variance `sigma^2 / n`, fitted with a
//! collapsed Metropolis-within-Gibbs sampler built on the Kalman filter.

pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod io;
pub mod kalman;
pub mod mcmc;
pub mod model;
pub mod panel;
pub mod pipeline;
pub mod ppc;
pub mod stats;
pub mod synth;
pub mod validation;

pub use draws::{ChainDraws, PosteriorDraws};
pub use error::{Error, Result};
pub use mcmc::{run_chains, RunConfig, StateStorage};
pub use model::{ModelSpec, ParamKind, ParamState, Variant};
pub use panel::{ArticleRecord, SentimentPanel, WindowingConfig};
pub use synth::SynthConfig;
