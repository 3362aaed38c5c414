//! Evaluation machinery for latent mental-simulation models: train
//! future-prediction dynamics over precomputed encoder features, generate
//! occluded-Pong stimuli with ground-truth oracles, and score models against
//! neural populations and human behavioral judgements with
//! reliability-adjusted metrics.

pub mod behavior;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod mpong;
pub mod neuralbench;
pub mod regress;
pub mod rng;
pub mod synth;
pub mod tensorio;

pub use error::{Error, ErrorCategory, Result};
