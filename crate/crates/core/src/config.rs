//! Experiment description shared by the trainer, evaluation and the CLI.

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{DacError, Result};
use crate::eval::EvalProtocol;
use crate::features::RbfFeatureMap;
use crate::network::{TopologyGraph, WeightScheme};
use crate::rng::{stream, Stream};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// `grid:RxC`, `ring:N`, `complete:N`; ignored when `edges` is set.
    pub topology: String,
    /// Explicit undirected edge list over `agents` nodes.
    pub edges: Option<Vec<[usize; 2]>>,
    pub agents: Option<usize>,
    pub scheme: String,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { topology: "grid:2x3".into(), edges: None, agents: None, scheme: "metropolis".into() }
    }
}

impl NetworkSpec {
    pub fn graph(&self) -> Result<TopologyGraph> {
        match &self.edges {
            Some(edges) => {
                let n = self.agents.ok_or_else(|| DacError::Config("an explicit edge list needs `agents`".into()))?;
                let pairs: Vec<_> = edges.iter().map(|e| (e[0], e[1])).collect();
                TopologyGraph::from_edges(n, &pairs)
            }
            None => TopologyGraph::parse(&self.topology),
        }
    }

    pub fn scheme(&self) -> Result<WeightScheme> {
        WeightScheme::parse(&self.scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub centers: usize,
    pub width: f64,
    /// Centers are drawn uniformly from `[low, high]^d`.
    pub low: f64,
    pub high: f64,
    /// Shared by every trial so that all runs use the same basis.
    pub seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { centers: 64, width: 2.0, low: -1.0, high: 1.0, seed: 11 }
    }
}

impl FeatureSpec {
    pub fn build(&self, state_dim: usize) -> Result<RbfFeatureMap> {
        if self.centers == 0 {
            return Err(DacError::Config("need at least one feature center".into()));
        }
        let mut rng = stream(self.seed, Stream::Features);
        RbfFeatureMap::random(self.centers, state_dim, self.low, self.high, self.width, &mut rng)
            .map_err(|e| DacError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub train: TrainConfig,
    pub network: NetworkSpec,
    pub env: EnvSpec,
    pub features: FeatureSpec,
    pub eval: EvalProtocol,
}
