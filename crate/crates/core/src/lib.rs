//! Enrichment of replicated gridded data with extreme events beyond the
//! observed range.
//!
//! Margins are fitted per cell with a kernel bulk and a generalized Pareto
//! tail, observed extreme episodes are rescaled to rarer summary levels on
//! the uniform scale, and new fields are resampled from the enriched set
//! with Direct Sampling.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod directsampling;
pub mod field;
pub mod lifting;
pub mod marginal;
pub mod naive;
pub mod pipeline;
pub mod risk;
pub mod rng;
pub mod synth;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] field::FieldError),
    #[error(transparent)]
    Marginal(#[from] marginal::MarginalError),
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
    #[error(transparent)]
    Lift(#[from] lifting::LiftError),
    #[error(transparent)]
    Naive(#[from] naive::NaiveError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Ds(#[from] directsampling::DsError),
    #[error(transparent)]
    Config(#[from] pipeline::ConfigError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}
