//! Distributed off-policy actor-critic with policy consensus.
//!
//! Every agent keeps a local copy of a shared linear deterministic policy,
//! evaluates it with a gradient-TD critic on its private reward, and mixes
//! its parameters with its graph neighbors after each local ascent step.

pub mod actor_consensus;
pub mod config;
pub mod critic;
pub mod envs;
pub mod error;
pub mod eval;
pub mod features;
pub mod network;
pub mod rng;
pub mod trainer;

pub use config::{ExperimentSpec, FeatureSpec, NetworkSpec};
pub use error::{DacError, Result};
pub use trainer::{train, TrainConfig, TrainTrace, Trainer};
