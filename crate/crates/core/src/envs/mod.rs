//! Environments and their behavior policies.

pub mod chain;
pub mod resource;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::TopologyGraph;
use crate::rng::Rng;

pub use resource::{ResourceEnv, ResourceSpec};
pub use toy::{QuadraticToy, ToySpec};

/// A multi-agent environment with a global observed state and a global
/// action vector. The environment also owns the fixed behavior policy that
/// generates training data.
pub trait Environment: Clone + Send + Sync {
    fn num_agents(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn observe(&self) -> Vec<f64>;
    /// Back to a draw from the initial-state distribution.
    fn reset(&mut self, rng: &mut Rng);
    /// Applies `action`, returns one reward per agent.
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
    fn behavior_action(&self, rng: &mut Rng) -> Vec<f64>;
    /// Maps a target-policy output onto the admissible action set.
    fn project_action(&self, action: &mut [f64]);
    /// Uniform bound on `|r_i|`, when one exists.
    fn reward_bound(&self) -> Option<f64>;
    /// Realized parameters, for provenance.
    fn describe(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Resource(ResourceSpec),
    Toy(ToySpec),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Resource(ResourceSpec::default())
    }
}

impl EnvSpec {
    pub fn build(&self, graph: &TopologyGraph) -> Result<AnyEnv> {
        match self {
            EnvSpec::Resource(spec) => Ok(AnyEnv::Resource(ResourceEnv::new(spec.clone(), graph)?)),
            EnvSpec::Toy(spec) => Ok(AnyEnv::Toy(QuadraticToy::new(spec.clone())?)),
        }
    }
}

/// Closed set of environments the driver can build from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnyEnv {
    Resource(ResourceEnv),
    Toy(QuadraticToy),
}

macro_rules! dispatch {
    ($self:expr, $env:ident => $body:expr) => {
        match $self {
            AnyEnv::Resource($env) => $body,
            AnyEnv::Toy($env) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn num_agents(&self) -> usize {
        dispatch!(self, e => e.num_agents())
    }
    fn action_dim(&self) -> usize {
        dispatch!(self, e => e.action_dim())
    }
    fn observation_dim(&self) -> usize {
        dispatch!(self, e => e.observation_dim())
    }
    fn observe(&self) -> Vec<f64> {
        dispatch!(self, e => e.observe())
    }
    fn reset(&mut self, rng: &mut Rng) {
        dispatch!(self, e => e.reset(rng))
    }
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        dispatch!(self, e => e.step(action, rng))
    }
    fn behavior_action(&self, rng: &mut Rng) -> Vec<f64> {
        dispatch!(self, e => e.behavior_action(rng))
    }
    fn project_action(&self, action: &mut [f64]) {
        dispatch!(self, e => e.project_action(action))
    }
    fn reward_bound(&self) -> Option<f64> {
        dispatch!(self, e => e.reward_bound())
    }
    fn describe(&self) -> serde_json::Value {
        dispatch!(self, e => e.describe())
    }
}
