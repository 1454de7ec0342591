//! Policy evaluation, the ascent-direction check, and learning-curve
//! assembly.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_consensus::local_policy_gradient;
use crate::critic::CriticState;
use crate::envs::toy::{Anchor, QuadraticToy};
use crate::envs::Environment;
use crate::error::{check_dim, DacError, Result};
use crate::features::{PolicyParams, RbfFeatureMap};
use crate::rng::{keyed, Stream};
use crate::trainer::{step_size, TrainTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub horizon: usize,
    pub rollouts: usize,
    /// Discount the rollout sum with the training `γ` instead of summing.
    pub discounted: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self { horizon: 200, rollouts: 20, discounted: false }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.rollouts == 0 {
            return Err(DacError::Config("evaluation horizon and rollouts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    pub stderr: f64,
}

/// Network-wide return of the frozen deterministic policy `π_θ`, averaged
/// over independent rollouts from the initial-state distribution. Works on
/// clones of `env`; rollout `r` draws from its own stream keyed by `seed`.
pub fn evaluate_policy<E: Environment>(
    theta: &PolicyParams,
    env: &E,
    map: &RbfFeatureMap,
    protocol: &EvalProtocol,
    gamma: f64,
    seed: u64,
) -> Result<EvalResult> {
    protocol.validate()?;
    check_dim("policy features", map.n_features(), theta.n_features())?;
    check_dim("policy actions", env.action_dim(), theta.n_actions())?;
    let returns: Vec<f64> = (0..protocol.rollouts)
        .into_par_iter()
        .map(|r| rollout_return(theta, env, map, protocol, gamma, seed, r as u64))
        .collect::<Result<_>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() > 1 {
        let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    if !(mean.is_finite() && stderr.is_finite()) {
        return Err(DacError::NonFiniteReturn(format!("mean {mean}, stderr {stderr}")));
    }
    Ok(EvalResult { mean, stderr })
}

fn rollout_return<E: Environment>(
    theta: &PolicyParams,
    env: &E,
    map: &RbfFeatureMap,
    protocol: &EvalProtocol,
    gamma: f64,
    seed: u64,
    rollout: u64,
) -> Result<f64> {
    let mut env = env.clone();
    let mut rng = keyed(seed, Stream::Eval, &[rollout]);
    env.reset(&mut rng);
    let mut phi = vec![0.0; map.n_features()];
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..protocol.horizon {
        map.eval_into(&env.observe(), &mut phi)?;
        let mut a = theta.action(&phi)?;
        env.project_action(&mut a);
        let r: f64 = env.step(&a, &mut rng)?.iter().sum();
        total += discount * r;
        if protocol.discounted {
            discount *= gamma;
        }
    }
    if !total.is_finite() {
        return Err(DacError::NonFiniteReturn(format!("rollout {rollout} returned {total}")));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    /// Behavior-distribution states used for both gradient estimates.
    pub samples: usize,
    /// Finite-difference step, relative to `max(1, |θ_c|)`.
    pub fd_step: f64,
    /// Discounted rollout length per finite-difference evaluation.
    pub rollout_horizon: usize,
    pub bootstrap: usize,
    /// Two-sided confidence level of the bootstrap interval.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { samples: 2000, fd_step: 1e-2, rollout_horizon: 8, bootstrap: 1000, confidence: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AscentVerdict {
    Positive,
    Negative,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentReport {
    pub inner_product: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: AscentVerdict,
    /// Critic-based direction `∇̂J_β(θ̄)`.
    pub approx_gradient: Vec<f64>,
    /// Finite-difference estimate of `∇J_β(θ̄)`.
    pub fd_gradient: Vec<f64>,
}

/// Runs TDC critics for every agent of the toy task at fixed `θ̄`, with the
/// behavior policy exploring around `π_θ̄`. Step sizes follow
/// `scale · t^(−exponent)`.
#[allow(clippy::too_many_arguments)]
pub fn converge_critics(
    toy: &QuadraticToy,
    map: &RbfFeatureMap,
    theta_bar: &PolicyParams,
    gamma: f64,
    steps: u64,
    exponent: f64,
    scale: f64,
    seed: u64,
) -> Result<Vec<CriticState>> {
    let mut env = toy.clone();
    env.set_anchor(Some(Anchor { map: map.clone(), theta: theta_bar.clone() }))?;
    let mut rng = keyed(seed, Stream::EnvNoise, &[]);
    let mut beh = keyed(seed, Stream::Behavior, &[]);
    env.reset(&mut rng);
    let n = env.num_agents();
    let mut critics = vec![CriticState::zeros(map.n_features(), 1); n];
    let mut phi = map.eval(&env.observe())?;
    let mut scratch = crate::critic::Scratch::default();
    for t in 1..=steps {
        let a = env.behavior_action(&mut beh);
        let rewards = env.step(&a, &mut rng)?;
        let phi_next = map.eval(&env.observe())?;
        let alpha = scale * step_size(exponent, t)?;
        for (i, c) in critics.iter_mut().enumerate() {
            c.update(&phi, &phi_next, &a, theta_bar, rewards[i], gamma, alpha, alpha, &mut scratch);
            if !c.is_finite() {
                return Err(DacError::PoisonedCritic { agent: i, t });
            }
        }
        phi = phi_next;
    }
    Ok(critics)
}

/// Estimates `⟨∇J_β(θ̄), ∇̂J_β(θ̄)⟩` on the quadratic toy task.
///
/// `∇̂J_β` averages `φφᵀ Σ_i w_i` over behavior states. `∇J_β` is a central
/// finite difference of discounted rollout returns started from the same
/// states, with common random numbers across the `±` perturbations. The
/// interval is a percentile bootstrap over states.
pub fn ascent_check(
    theta_bar: &PolicyParams,
    critics: &[CriticState],
    toy: &QuadraticToy,
    map: &RbfFeatureMap,
    gamma: f64,
    cfg: &AscentConfig,
) -> Result<AscentReport> {
    check_dim("critics", toy.num_agents(), critics.len())?;
    check_dim("toy action dim", 1, theta_bar.n_actions())?;
    if cfg.samples < 2 || cfg.bootstrap == 0 || !(cfg.fd_step > 0.0) {
        return Err(DacError::Config("ascent check needs ≥ 2 samples, ≥ 1 bootstrap draw and fd_step > 0".into()));
    }
    let nf = map.n_features();
    let mut summed = CriticState::zeros(nf, 1);
    for c in critics {
        check_dim("critic features", nf, c.n_features())?;
        for (s, w) in summed.w.iter_mut().zip(&c.w) {
            *s += w;
        }
    }

    let mut state_rng = keyed(cfg.seed, Stream::Behavior, &[]);
    let lo = toy.spec().state_low;
    let hi = toy.spec().state_high;
    let states: Vec<f64> = (0..cfg.samples).map(|_| state_rng.random_range(lo..hi)).collect();

    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = states
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let phi = map.eval(&[s])?;
            let approx = local_policy_gradient(&phi, &summed)?;
            let mut fd = vec![0.0; nf];
            for (c, slot) in fd.iter_mut().enumerate() {
                let h = cfg.fd_step * theta_bar.as_flat()[c].abs().max(1.0);
                let mut plus = theta_bar.clone();
                plus.as_flat_mut()[c] += h;
                let mut minus = theta_bar.clone();
                minus.as_flat_mut()[c] -= h;
                let rp = toy_rollout(toy, map, &plus, s, gamma, cfg, k as u64)?;
                let rm = toy_rollout(toy, map, &minus, s, gamma, cfg, k as u64)?;
                *slot = (rp - rm) / (2.0 * h);
            }
            Ok((approx, fd))
        })
        .collect::<Result<_>>()?;

    let mean_of = |idx: &mut dyn Iterator<Item = usize>, pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        let mut acc = vec![0.0; nf];
        let mut count = 0.0;
        for i in idx {
            for (a, x) in acc.iter_mut().zip(pick(&per_sample[i])) {
                *a += x;
            }
            count += 1.0;
        }
        acc.iter_mut().for_each(|a| *a /= count);
        acc
    };
    let approx_gradient = mean_of(&mut (0..cfg.samples), |p| &p.0);
    let fd_gradient = mean_of(&mut (0..cfg.samples), |p| &p.1);
    let inner_product = dot(&approx_gradient, &fd_gradient);

    let mut boot_rng = keyed(cfg.seed, Stream::Eval, &[u64::MAX]);
    let mut draws: Vec<f64> = (0..cfg.bootstrap)
        .map(|_| {
            let idx: Vec<usize> = (0..cfg.samples).map(|_| boot_rng.random_range(0..cfg.samples)).collect();
            let a = mean_of(&mut idx.iter().copied(), |p| &p.0);
            let f = mean_of(&mut idx.iter().copied(), |p| &p.1);
            dot(&a, &f)
        })
        .collect();
    draws.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - cfg.confidence) / 2.0;
    let ci_low = quantile_sorted(&draws, tail).min(inner_product);
    let ci_high = quantile_sorted(&draws, 1.0 - tail).max(inner_product);
    let verdict = if ci_low > 0.0 {
        AscentVerdict::Positive
    } else if ci_high < 0.0 {
        AscentVerdict::Negative
    } else {
        AscentVerdict::Inconclusive
    };
    Ok(AscentReport { inner_product, ci_low, ci_high, verdict, approx_gradient, fd_gradient })
}

fn toy_rollout(
    toy: &QuadraticToy,
    map: &RbfFeatureMap,
    theta: &PolicyParams,
    s0: f64,
    gamma: f64,
    cfg: &AscentConfig,
    sample: u64,
) -> Result<f64> {
    let mut env = toy.clone();
    env.set_state(s0);
    let mut rng = keyed(cfg.seed, Stream::EnvNoise, &[sample]);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..cfg.rollout_horizon.max(1) {
        let a = theta.action(&map.eval(&env.observe())?)?;
        total += discount * env.step(&a, &mut rng)?.iter().sum::<f64>();
        discount *= gamma;
    }
    Ok(total)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact CSV header for per-trial learning curves.
pub const TRACE_CSV_HEADER: &str = "run_id,seed,iteration,agent_id,mean_return,stderr_return,disagreement_norm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub run_id: u64,
    pub seed: u64,
    pub iteration: u64,
    pub agent_id: usize,
    pub mean_return: f64,
    pub stderr_return: f64,
    pub disagreement_norm: f64,
}

/// One row per evaluated `(iteration, agent)` of a trace.
pub fn trace_points(run_id: u64, seed: u64, trace: &TrainTrace) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for rec in &trace.records {
        if let Some(returns) = &rec.returns {
            for (agent_id, r) in returns.iter().enumerate() {
                out.push(CurvePoint {
                    run_id,
                    seed,
                    iteration: rec.update,
                    agent_id,
                    mean_return: r.mean,
                    stderr_return: r.stderr,
                    disagreement_norm: rec.disagreement,
                });
            }
        }
    }
    out
}

pub fn write_trace_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.run_id, p.seed, p.iteration, p.agent_id, p.mean_return, p.stderr_return, p.disagreement_norm
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: u64,
    pub agent_id: usize,
    pub mean_return: f64,
    /// Population variance across trials.
    pub variance_return: f64,
    pub trials: usize,
}

pub const CURVE_CSV_HEADER: &str = "iteration,agent_id,mean_return,variance_return,trials";

/// Mean and variance of evaluated returns across trials, per
/// `(iteration, agent)`. All traces must share one evaluation grid. The
/// result does not depend on the order of `traces`.
pub fn assemble_curves(traces: &[TrainTrace]) -> Result<Vec<CurveRow>> {
    let grid = |t: &TrainTrace| -> Vec<(u64, usize)> {
        t.records.iter().filter_map(|r| r.returns.as_ref().map(|ret| (r.update, ret.len()))).collect()
    };
    let first = traces.first().ok_or_else(|| DacError::Contract("no traces to assemble".into()))?;
    let reference = grid(first);
    if traces.iter().any(|t| grid(t) != reference) {
        return Err(DacError::Contract("traces have mismatched evaluation grids".into()));
    }
    let mut cells: BTreeMap<(u64, usize), Vec<f64>> = BTreeMap::new();
    for t in traces {
        for rec in &t.records {
            if let Some(ret) = &rec.returns {
                for (agent, r) in ret.iter().enumerate() {
                    cells.entry((rec.update, agent)).or_default().push(r.mean);
                }
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((iteration, agent_id), mut values)| {
            // fixed summation order keeps the result permutation invariant
            values.sort_by(|a, b| a.total_cmp(b));
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            CurveRow { iteration, agent_id, mean_return: mean, variance_return: variance, trials: values.len() }
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.iteration, r.agent_id, r.mean_return, r.variance_return, r.trials)?;
    }
    Ok(())
}
