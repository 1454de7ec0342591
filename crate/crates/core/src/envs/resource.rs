//! Networked resource dispatch.
//!
//! Centers on a graph hold resource levels `m_i` that drain with a noisy
//! sinusoidal demand and are replenished by transfers `a_ij ≥ 0` from
//! neighbors. Levels are clipped to `[m_min, m_max]`; a center is penalized
//! cubically for a negative level.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{check_dim, DacError, Result};
use crate::network::TopologyGraph;
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceSpec {
    pub m_min: f64,
    pub m_max: f64,
    pub m_init: f64,
    pub a_max: f64,
    /// Agents act in units of `a_max`: the action is `u ∈ [0, 1]` per
    /// directed edge and the transfer is `a_max · u`. Otherwise actions are
    /// raw transfers in `[0, a_max]`.
    pub normalized_actions: bool,
    pub dt: f64,
    pub amplitude_low: f64,
    pub amplitude_high: f64,
    pub omega_low: f64,
    pub omega_high: f64,
    /// Demand noise standard deviation as a fraction of the amplitude.
    pub noise_ratio: f64,
    /// Seed for the realized demand parameters; shared by all trials.
    pub params_seed: u64,
    /// Resource levels are divided by this before entering the features.
    pub obs_scale: f64,
    /// Explicit per-center demand parameters; override the random draw.
    pub amplitudes: Option<Vec<f64>>,
    pub omegas: Option<Vec<f64>>,
    pub phases: Option<Vec<f64>>,
}

impl Default for ResourceSpec {
    fn default() -> Self {
        Self {
            m_min: -50.0,
            m_max: 50.0,
            m_init: 10.0,
            a_max: 10.0,
            normalized_actions: true,
            dt: 1.0,
            amplitude_low: 5.0,
            amplitude_high: 15.0,
            omega_low: 0.05,
            omega_high: 0.2,
            noise_ratio: 0.1,
            params_seed: 2019,
            obs_scale: 50.0,
            amplitudes: None,
            omegas: None,
            phases: None,
        }
    }
}

/// `d_i(t) = A sin(ω t + φ) + ε`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub noise_std: f64,
}

impl DemandModel {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterState {
    pub m: f64,
    /// Demand phase in `[-T/2, T/2)`.
    pub phase_time: f64,
}

/// Penalty for the resource level after a step: zero when non-negative,
/// `−(−m)³` otherwise.
pub fn reward_fn(m: f64) -> f64 {
    if m >= 0.0 {
        0.0
    } else {
        -(-m).powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEnv {
    spec: ResourceSpec,
    /// Directed edges `(from, to)`, one action component each.
    edges: Vec<(usize, usize)>,
    demand: Vec<DemandModel>,
    state: Vec<CenterState>,
}

impl ResourceEnv {
    pub fn new(spec: ResourceSpec, graph: &TopologyGraph) -> Result<Self> {
        let n = graph.n();
        if !(spec.m_min < spec.m_max) || !(spec.m_min..=spec.m_max).contains(&spec.m_init) {
            return Err(DacError::Config("resource box must satisfy m_min ≤ m_init ≤ m_max".into()));
        }
        if !(spec.a_max >= 0.0) || !(spec.dt > 0.0) || !(spec.obs_scale > 0.0) || spec.noise_ratio < 0.0 {
            return Err(DacError::Config(
                "a_max, dt, obs_scale and noise_ratio must be non-negative (dt, obs_scale positive)".into(),
            ));
        }
        if !(0.0 < spec.amplitude_low && spec.amplitude_low <= spec.amplitude_high)
            || !(0.0 < spec.omega_low && spec.omega_low <= spec.omega_high)
        {
            return Err(DacError::Config("demand ranges must be positive and ordered".into()));
        }
        let mut rng = stream(spec.params_seed, Stream::EnvParams);
        let mut draw = |lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
        let mut demand = Vec::with_capacity(n);
        for _ in 0..n {
            let amplitude = draw(spec.amplitude_low, spec.amplitude_high);
            let omega = draw(spec.omega_low, spec.omega_high);
            let phase = draw(0.0, 2.0 * PI);
            demand.push(DemandModel { amplitude, omega, phase, noise_std: spec.noise_ratio * amplitude });
        }
        let overrides = [&spec.amplitudes, &spec.omegas, &spec.phases];
        for (which, values) in overrides.iter().enumerate() {
            if let Some(values) = values {
                check_dim("demand override", n, values.len())?;
                for (d, &v) in demand.iter_mut().zip(values.iter()) {
                    match which {
                        0 => {
                            d.amplitude = v;
                            d.noise_std = spec.noise_ratio * v;
                        }
                        1 => d.omega = v,
                        _ => d.phase = v,
                    }
                }
            }
        }
        if demand.iter().any(|d| !(d.amplitude > 0.0 && d.omega > 0.0)) {
            return Err(DacError::Config("demand amplitudes and frequencies must be positive".into()));
        }
        let state = vec![CenterState { m: spec.m_init, phase_time: 0.0 }; n];
        Ok(Self { spec, edges: graph.directed_edges(), demand, state })
    }

    pub fn spec(&self) -> &ResourceSpec {
        &self.spec
    }

    pub fn demand(&self) -> &[DemandModel] {
        &self.demand
    }

    pub fn state(&self) -> &[CenterState] {
        &self.state
    }

    pub fn set_state(&mut self, state: Vec<CenterState>) -> Result<()> {
        check_dim("center states", self.demand.len(), state.len())?;
        self.state = state;
        Ok(())
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Upper end of the admissible action interval.
    pub fn action_limit(&self) -> f64 {
        match (self.spec.normalized_actions, self.spec.a_max > 0.0) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            (false, _) => self.spec.a_max,
        }
    }

    fn transfer(&self, u: f64) -> f64 {
        if self.spec.normalized_actions {
            u * self.spec.a_max
        } else {
            u
        }
    }

    fn wrap_phase(&self, i: usize, t: f64) -> f64 {
        let period = self.demand[i].period();
        let half = period / 2.0;
        let mut t = t;
        while t >= half {
            t -= period;
        }
        while t < -half {
            t += period;
        }
        t
    }
}

impl Environment for ResourceEnv {
    fn num_agents(&self) -> usize {
        self.demand.len()
    }

    fn action_dim(&self) -> usize {
        self.edges.len()
    }

    fn observation_dim(&self) -> usize {
        3 * self.demand.len()
    }

    /// Per center `[m / obs_scale, cos(2π t̄/T), sin(2π t̄/T)]`.
    fn observe(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.observation_dim());
        for (c, d) in self.state.iter().zip(&self.demand) {
            let angle = 2.0 * PI * c.phase_time / d.period();
            out.push(c.m / self.spec.obs_scale);
            out.push(angle.cos());
            out.push(angle.sin());
        }
        out
    }

    fn reset(&mut self, _rng: &mut Rng) {
        for c in &mut self.state {
            c.m = self.spec.m_init;
            c.phase_time = 0.0;
        }
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        check_dim("action", self.edges.len(), action.len())?;
        let limit = self.action_limit();
        if let Some(a) = action.iter().find(|a| !(**a >= 0.0 && **a <= limit)) {
            return Err(DacError::Contract(format!("action {a} outside [0, {limit}]")));
        }
        let n = self.demand.len();
        let mut net = vec![0.0; n];
        for (&(from, to), &u) in self.edges.iter().zip(action) {
            let a = self.transfer(u);
            net[from] -= a;
            net[to] += a;
        }
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let d = &self.demand[i];
            let noise =
                if d.noise_std > 0.0 { Normal::new(0.0, d.noise_std).expect("positive std").sample(rng) } else { 0.0 };
            let demand = d.amplitude * (d.omega * self.state[i].phase_time + d.phase).sin() + noise;
            let m = (self.state[i].m + net[i] - demand).clamp(self.spec.m_min, self.spec.m_max);
            let phase_time = self.wrap_phase(i, self.state[i].phase_time + self.spec.dt);
            self.state[i] = CenterState { m, phase_time };
            rewards.push(reward_fn(m));
        }
        Ok(rewards)
    }

    /// Every action i.i.d. uniform on `[0, limit]`, independent of state.
    fn behavior_action(&self, rng: &mut Rng) -> Vec<f64> {
        let limit = self.action_limit();
        (0..self.edges.len()).map(|_| if limit > 0.0 { rng.random_range(0.0..=limit) } else { 0.0 }).collect()
    }

    fn project_action(&self, action: &mut [f64]) {
        let limit = self.action_limit();
        for a in action {
            *a = a.clamp(0.0, limit);
        }
    }

    fn reward_bound(&self) -> Option<f64> {
        Some(reward_fn(self.spec.m_min.min(0.0)).abs())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "resource",
            "edges": self.edges,
            "action_limit": self.action_limit(),
            "demand": self.demand,
        })
    }
}
