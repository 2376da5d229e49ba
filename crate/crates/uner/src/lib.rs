//! Bayesian fitting, prediction and simulation for nested error regression
//! with uncertain area random effects.
//!
//! The model treats each area's random effect as a mixture of a point mass
//! at zero and a normal component, with a latent per-area indicator and
//! non-informative priors on the remaining parameters. The crate provides:
//!
//! - the closed-form posterior quantities of the indicator and the area
//!   targets ([`model`]),
//! - partially collapsed Gibbs sampling for the mixture model and standard
//!   Gibbs sampling for the conventional model ([`sampler`]),
//! - finite-population mean prediction via an augmented sampling step
//!   ([`prediction`]),
//! - model comparison and chain summaries ([`diagnostics`]),
//! - a seeded, parallel Monte Carlo harness for model-based and
//!   design-based studies ([`simulation`]),
//! - distributional self-checks for the sampler ([`geweke`]).
//!
//! All types are immutable values after construction and every operation is
//! a pure function of its inputs; chains are sequential internally, while
//! replications and chains run concurrently without shared state.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod geweke;
pub mod linalg;
pub mod model;
pub mod params;
pub mod prediction;
pub mod rng;
pub mod sampler;
pub mod simulation;

pub use data::{AreaData, TargetSpec, UnitDataset};
pub use error::{Error, Result};
pub use linalg::CompoundSymmetry;
pub use model::{
    estimate_sampling_variance, marginal_loglik, posterior_prob_u, posterior_var_mu,
    validate_conditions, Strictness, ValidationReport,
};
pub use params::{LatentState, ModelKind, ModelParams, PriorConfig, ResolvedPrior};
pub use prediction::{
    predict_finite_population, summarize_mu, FinitePopulationSpec, PredictionSummary,
};
pub use sampler::{gibbs_ner, gibbs_uner, ChainConfig, ChainOutput};
