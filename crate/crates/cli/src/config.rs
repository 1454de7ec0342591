//! Run configuration: the experiment sections plus driver settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dac_core::envs::EnvSpec;
use dac_core::eval::{AscentConfig, EvalProtocol};
use dac_core::{ExperimentSpec, FeatureSpec, NetworkSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub trials: u64,
    pub out_dir: PathBuf,
    pub plot: bool,
    /// Run trials on the rayon pool instead of one after another.
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { trials: 5, out_dir: PathBuf::from("runs/default"), plot: true, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Random `θ̄` points, each coordinate uniform on `[−theta_range, theta_range]`.
    pub points: u64,
    pub theta_range: f64,
    /// Also check the closed-form optimum, where the interval should cover 0.
    pub include_optimum: bool,
    /// TDC steps used to settle the critics at each point.
    pub critic_steps: u64,
    pub critic_exponent: f64,
    pub critic_scale: f64,
    pub ascent: AscentConfig,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            points: 5,
            theta_range: 1.0,
            include_optimum: true,
            critic_steps: 200_000,
            critic_exponent: 0.55,
            critic_scale: 1.0,
            ascent: AscentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
    pub network: NetworkSpec,
    pub env: EnvSpec,
    pub features: FeatureSpec,
    pub eval: EvalProtocol,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn experiment(&self) -> ExperimentSpec {
        ExperimentSpec {
            train: self.train.clone(),
            network: self.network.clone(),
            env: self.env.clone(),
            features: self.features.clone(),
            eval: self.eval.clone(),
        }
    }

    /// Seed of trial `i`: consecutive from the configured base seed.
    pub fn trial_seed(&self, trial: u64) -> u64 {
        self.train.seed.wrapping_add(trial)
    }
}
