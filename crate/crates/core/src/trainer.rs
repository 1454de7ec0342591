//! The training loop: behavior rollout, per-agent critics on every step,
//! and a consensus actor update every `subsample` steps.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::actor_consensus::{consensus_step, disagreement_norm, local_policy_gradient_window, PolicyEnsemble};
use crate::config::ExperimentSpec;
use crate::critic::{CriticState, Scratch, Transition};
use crate::envs::{AnyEnv, Environment};
use crate::error::{check_dim, DacError, Result};
use crate::eval::{evaluate_policy, EvalProtocol, EvalResult};
use crate::features::{PolicyParams, RbfFeatureMap};
use crate::network::{contraction_report, TopologyGraph, WeightMatrixSampler, WeightScheme};
use crate::rng::{keyed, stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Environment steps `T`.
    pub steps: u64,
    pub gamma: f64,
    pub critic_exponent: f64,
    pub actor_exponent: f64,
    /// Critic steps are `critic_step_scale · t^(−critic_exponent)`.
    pub critic_step_scale: f64,
    /// Actor steps are `actor_step_scale · k^(−actor_exponent)`.
    pub actor_step_scale: f64,
    /// Critic steps per actor update.
    pub subsample: u64,
    /// Number of most recent successor states averaged in the actor gradient.
    pub gradient_window: usize,
    /// Multiplies rewards before they reach the critics. Evaluation always
    /// reports raw rewards.
    pub reward_scale: f64,
    /// Seeds environment noise, behavior exploration, gossip and evaluation.
    pub seed: u64,
    /// Seeds the initial policy. Shared across trials by default.
    pub init_seed: u64,
    pub init_policy: InitPolicy,
    /// Half-width of the uniform initial `θ` under `InitPolicy::Uniform`.
    pub theta_init_scale: f64,
    /// Behavior samples used by `InitPolicy::BehaviorFit`.
    pub init_samples: usize,
    /// Actor updates between policy evaluations; zero disables evaluation.
    pub eval_every: u64,
    /// Environment steps between checkpoints; zero disables them.
    pub checkpoint_every: u64,
    /// Store every agent's `θ` alongside each evaluation.
    pub snapshot_params: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            gamma: 0.9,
            critic_exponent: 0.55,
            actor_exponent: 0.65,
            critic_step_scale: 3.0,
            actor_step_scale: 1.0,
            subsample: 20,
            gradient_window: 1,
            reward_scale: 1e-3,
            seed: 0,
            init_seed: 0,
            init_policy: InitPolicy::BehaviorFit,
            theta_init_scale: 0.0,
            init_samples: 2000,
            eval_every: 50,
            checkpoint_every: 0,
            snapshot_params: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |p: f64| p > 0.5 && p <= 1.0;
        if !in_range(self.critic_exponent) || !in_range(self.actor_exponent) {
            return Err(DacError::Config(format!(
                "step-size exponents must lie in (0.5, 1] (Assumption 4), got critic {} and actor {}",
                self.critic_exponent, self.actor_exponent
            )));
        }
        if self.actor_exponent <= self.critic_exponent {
            return Err(DacError::Config(format!(
                "actor_exponent {} must exceed critic_exponent {} so the actor runs on the slower time scale (Assumption 4)",
                self.actor_exponent, self.critic_exponent
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(DacError::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.subsample == 0 || self.gradient_window == 0 {
            return Err(DacError::Config("subsample and gradient_window must be at least 1".into()));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.critic_step_scale) || !positive(self.actor_step_scale) {
            return Err(DacError::Config("step-size scales must be positive".into()));
        }
        if !positive(self.reward_scale) {
            return Err(DacError::Config("reward_scale must be positive".into()));
        }
        if !(self.theta_init_scale >= 0.0 && self.theta_init_scale.is_finite()) {
            return Err(DacError::Config("theta_init_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// How the shared initial `θ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    Zero,
    /// I.i.d. uniform on `[−theta_init_scale, theta_init_scale]`.
    Uniform,
    /// Least-squares projection of the behavior policy onto the policy
    /// class, fitted on a behavior rollout from the `init_seed` streams.
    /// Keeps `a − π(s)` close to zero-mean under the behavior data.
    BehaviorFit,
}

/// Ridge regression of behavior actions on features along a behavior
/// rollout: `θ_j = (ΦᵀΦ + λI)⁻¹ Φᵀ a_j`.
pub fn fit_behavior_policy<E: Environment>(
    env: &E,
    map: &RbfFeatureMap,
    samples: usize,
    seed: u64,
) -> Result<PolicyParams> {
    if samples == 0 {
        return Err(DacError::Config("init_samples must be at least 1".into()));
    }
    let (nf, na) = (map.n_features(), env.action_dim());
    let mut env = env.clone();
    let mut noise = stream(seed, Stream::Init);
    let mut behavior = keyed(seed, Stream::Init, &[1]);
    env.reset(&mut noise);
    let mut gram = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DMatrix::<f64>::zeros(nf, na);
    for _ in 0..samples {
        let phi = DVector::from_vec(map.eval(&env.observe())?);
        let a = env.behavior_action(&mut behavior);
        gram += &phi * phi.transpose();
        rhs += &phi * DMatrix::from_row_slice(1, na, &a);
        env.step(&a, &mut noise)?;
    }
    let ridge = 1e-6 * gram.trace().max(f64::MIN_POSITIVE) / nf as f64;
    for k in 0..nf {
        gram[(k, k)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| DacError::Singular("behavior-fit normal equations".into()))?;
    let theta = chol.solve(&rhs);
    // column-major storage matches the flattened layout
    PolicyParams::from_flat(0, nf, na, theta.as_slice().to_vec())
}

/// `t^(−p)` for `t ≥ 1`.
pub fn step_size(p: f64, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(DacError::Contract("step-size schedules start at t = 1".into()));
    }
    Ok((t as f64).powf(-p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreflightCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub rho_power: f64,
    pub rho_dense: f64,
    pub checks: Vec<PreflightCheck>,
}

impl PreflightReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Standing-assumption checks that can be made before any stepping.
pub fn preflight<E: Environment>(
    config: &TrainConfig,
    graph: &TopologyGraph,
    scheme: WeightScheme,
    env: &E,
    map: &RbfFeatureMap,
) -> Result<PreflightReport> {
    let mut checks = Vec::new();
    let mut push =
        |name: &str, passed: bool, detail: String| checks.push(PreflightCheck { name: name.into(), passed, detail });

    push("graph connectivity", graph.is_connected(), format!("{} nodes, {} edges", graph.n(), graph.edges().len()));
    let sampler = WeightMatrixSampler::new(graph.clone(), scheme, stream(config.seed, Stream::Gossip))?;
    let c = contraction_report(&sampler);
    push(
        "consensus contraction (Assumption 5)",
        c.rho() < 1.0 - 1e-12,
        format!("rho_W = {:.10} (power iteration {:.10})", c.rho_dense, c.rho_power),
    );
    let schedule = config.validate();
    push(
        "step-size exponents (Assumption 4)",
        schedule.is_ok(),
        match &schedule {
            Ok(()) => {
                format!("critic t^-{} and actor k^-{}, actor slower", config.critic_exponent, config.actor_exponent)
            }
            Err(e) => e.to_string(),
        },
    );
    push(
        "reward bound (Assumption 2)",
        env.reward_bound().is_some_and(f64::is_finite),
        match env.reward_bound() {
            Some(b) => format!("|r_i| <= {b}"),
            None => "rewards are not uniformly bounded".into(),
        },
    );
    let fb = map.norm_bound();
    push("feature bound", fb.is_finite() && fb > 0.0, format!("||phi(s)|| <= {fb:.6}"));
    check_dim("environment agents", graph.n(), env.num_agents())?;
    Ok(PreflightReport { rho_power: c.rho_power, rho_dense: c.rho_dense, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Environment steps taken so far.
    pub step: u64,
    /// Actor updates taken so far.
    pub update: u64,
    pub disagreement: f64,
    pub alpha_theta: f64,
    pub alpha_w: f64,
    /// Per-agent evaluated returns, on the evaluation cadence.
    pub returns: Option<Vec<EvalResult>>,
    pub params: Option<Vec<PolicyParams>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    /// Seconds since the trainer was built, one entry per record. Excluded
    /// from determinism comparisons.
    pub wall_clock: Vec<f64>,
}

impl TrainTrace {
    /// Disagreement norms at every actor update, in order.
    pub fn disagreement_series(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.update > 0).map(|r| r.disagreement).collect()
    }
}

/// State attached to an aborted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub error: String,
    pub step: u64,
    pub actor_update: u64,
    pub last_transition: Option<Transition>,
    pub critic_norms: Vec<f64>,
    pub policy_norms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "E: Serialize", deserialize = "E: DeserializeOwned"))]
pub struct Trainer<E> {
    config: TrainConfig,
    protocol: EvalProtocol,
    map: RbfFeatureMap,
    graph: TopologyGraph,
    env: E,
    /// Pristine copy used by evaluation.
    eval_env: E,
    sampler: WeightMatrixSampler,
    ensemble: PolicyEnsemble,
    critics: Vec<CriticState>,
    env_rng: Rng,
    behavior_rng: Rng,
    t: u64,
    k: u64,
    phi: Vec<f64>,
    window: VecDeque<Vec<f64>>,
    messages: u64,
    last: Option<Transition>,
    trace: TrainTrace,
    #[serde(skip, default = "Instant::now")]
    started: Instant,
    #[serde(skip)]
    scratch: Scratch,
}

impl<E: Environment> Trainer<E> {
    /// Validates the configuration and the standing assumptions, draws the
    /// initial policy and evaluates it.
    pub fn new(
        config: TrainConfig,
        protocol: EvalProtocol,
        graph: TopologyGraph,
        scheme: WeightScheme,
        env: E,
        map: RbfFeatureMap,
    ) -> Result<Self> {
        config.validate()?;
        protocol.validate()?;
        check_dim("environment agents", graph.n(), env.num_agents())?;
        check_dim("feature state dim", env.observation_dim(), map.state_dim())?;
        let sampler = WeightMatrixSampler::new(graph.clone(), scheme, stream(config.seed, Stream::Gossip))?;
        crate::network::spectral_contraction(&sampler)?;

        let (nf, na, n) = (map.n_features(), env.action_dim(), graph.n());
        let base = match config.init_policy {
            InitPolicy::Zero => PolicyParams::zeros(0, nf, na),
            InitPolicy::Uniform => {
                let mut base = PolicyParams::zeros(0, nf, na);
                let mut init = stream(config.init_seed, Stream::Init);
                let h = config.theta_init_scale;
                for x in base.as_flat_mut() {
                    *x = if h > 0.0 { init.random_range(-h..=h) } else { 0.0 };
                }
                base
            }
            InitPolicy::BehaviorFit => fit_behavior_policy(&env, &map, config.init_samples, config.init_seed)?,
        };
        let ensemble = PolicyEnsemble::replicated(&base, n);

        let eval_env = env.clone();
        let mut env = env;
        let mut env_rng = stream(config.seed, Stream::EnvNoise);
        let behavior_rng = stream(config.seed, Stream::Behavior);
        env.reset(&mut env_rng);
        let phi = map.eval(&env.observe())?;

        let mut trainer = Self {
            critics: vec![CriticState::zeros(nf, na); n],
            config,
            protocol,
            map,
            graph,
            env,
            eval_env,
            sampler,
            ensemble,
            env_rng,
            behavior_rng,
            t: 0,
            k: 0,
            phi,
            window: VecDeque::new(),
            messages: 0,
            last: None,
            trace: TrainTrace::default(),
            started: Instant::now(),
            scratch: Scratch::default(),
        };
        trainer.log(0.0, 0.0, trainer.config.eval_every > 0)?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn feature_map(&self) -> &RbfFeatureMap {
        &self.map
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn ensemble(&self) -> &PolicyEnsemble {
        &self.ensemble
    }

    pub fn critics(&self) -> &[CriticState] {
        &self.critics
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn into_trace(self) -> TrainTrace {
        self.trace
    }

    pub fn env_steps(&self) -> u64 {
        self.t
    }

    pub fn actor_updates(&self) -> u64 {
        self.k
    }

    /// Consensus messages delivered so far. Nothing else crosses agents.
    pub fn messages_sent(&self) -> u64 {
        self.messages
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.steps
    }

    /// One environment step, and an actor update when it is due.
    pub fn step(&mut self) -> Result<()> {
        let s = self.env.observe();
        let a = self.env.behavior_action(&mut self.behavior_rng);
        let rewards = self.env.step(&a, &mut self.env_rng)?;
        let s_next = self.env.observe();
        let phi_next = self.map.eval(&s_next)?;
        self.t += 1;
        let transition = Transition { s, a, rewards, s_next, t: self.t };
        transition.validate(self.critics.len(), self.env.reward_bound())?;

        let alpha_w = self.config.critic_step_scale * step_size(self.config.critic_exponent, self.t)?;
        for (i, critic) in self.critics.iter_mut().enumerate() {
            critic.update(
                &self.phi,
                &phi_next,
                &transition.a,
                &self.ensemble.params()[i],
                self.config.reward_scale * transition.rewards[i],
                self.config.gamma,
                alpha_w,
                alpha_w,
                &mut self.scratch,
            );
            if !critic.is_finite() {
                self.last = Some(transition);
                return Err(DacError::PoisonedCritic { agent: i, t: self.t });
            }
        }
        self.last = Some(transition);

        self.window.push_back(phi_next.clone());
        while self.window.len() > self.config.gradient_window {
            self.window.pop_front();
        }
        self.phi = phi_next;

        if self.t % self.config.subsample == 0 {
            self.actor_update(alpha_w)?;
        }
        Ok(())
    }

    fn actor_update(&mut self, alpha_w: f64) -> Result<()> {
        self.k += 1;
        let phis: Vec<Vec<f64>> = self.window.iter().cloned().collect();
        let gradients =
            self.critics.iter().map(|c| local_policy_gradient_window(&phis, c)).collect::<Result<Vec<_>>>()?;
        let alpha_theta = self.config.actor_step_scale * step_size(self.config.actor_exponent, self.k)?;
        let w = self.sampler.sample();
        self.ensemble =
            consensus_step(&self.ensemble, &gradients, &w, &self.graph, alpha_theta).map_err(|e| match e {
                DacError::PoisonedActor { .. } => DacError::PoisonedActor { update: self.k },
                other => other,
            })?;
        self.messages += self.graph.directed_edges().len() as u64;
        let evaluate = self.config.eval_every > 0 && self.k % self.config.eval_every == 0;
        self.log(alpha_theta, alpha_w, evaluate)
    }

    fn log(&mut self, alpha_theta: f64, alpha_w: f64, evaluate: bool) -> Result<()> {
        let returns = if evaluate { Some(self.evaluate_agents()?) } else { None };
        let params = (evaluate && self.config.snapshot_params).then(|| self.ensemble.params().to_vec());
        self.trace.records.push(TrainRecord {
            step: self.t,
            update: self.k,
            disagreement: disagreement_norm(&self.ensemble),
            alpha_theta,
            alpha_w,
            returns,
            params,
        });
        self.trace.wall_clock.push(self.started.elapsed().as_secs_f64());
        Ok(())
    }

    /// Every agent's current policy, executed by the whole network. All
    /// agents and iterations share one evaluation seed.
    pub fn evaluate_agents(&self) -> Result<Vec<EvalResult>> {
        self.ensemble
            .iter()
            .map(|p| evaluate_policy(p, &self.eval_env, &self.map, &self.protocol, self.config.gamma, self.config.seed))
            .collect()
    }

    /// Runs to `config.steps`, calling `on_checkpoint` on the checkpoint
    /// cadence.
    pub fn run_with<F: FnMut(&Self) -> Result<()>>(&mut self, mut on_checkpoint: F) -> Result<()> {
        while !self.is_done() {
            self.step()?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.t % every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    pub fn diagnostic(&self, error: &DacError) -> Diagnostic {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Diagnostic {
            error: error.to_string(),
            step: self.t,
            actor_update: self.k,
            last_transition: self.last.clone(),
            critic_norms: self.critics.iter().map(|c| norm(&c.z())).collect(),
            policy_norms: self.ensemble.iter().map(|p| p.norm()).collect(),
        }
    }
}

impl<E: Environment + Serialize + DeserializeOwned> Trainer<E> {
    /// Full state as JSON. Restoring it continues the run bitwise.
    pub fn checkpoint(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| DacError::Checkpoint(e.to_string()))
    }

    pub fn resume(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| DacError::Checkpoint(e.to_string()))
    }
}

impl Trainer<AnyEnv> {
    pub fn from_spec(spec: &ExperimentSpec) -> Result<Self> {
        let graph = spec.network.graph()?;
        let scheme = spec.network.scheme()?;
        let env = spec.env.build(&graph)?;
        let map = spec.features.build(env.observation_dim())?;
        Self::new(spec.train.clone(), spec.eval.clone(), graph, scheme, env, map)
    }
}

/// Builds and runs one experiment.
pub fn train(spec: &ExperimentSpec) -> Result<TrainTrace> {
    let mut trainer = Trainer::from_spec(spec)?;
    trainer.run()?;
    Ok(trainer.into_trace())
}
