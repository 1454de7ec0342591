//! Local off-policy policy-gradient steps mixed over the network.
//!
//! Each agent forms `θ_j + α g_j`, sends it to its neighbors, and replaces
//! its parameters with the `W`-weighted combination of what it received:
//! `θ_i ← Σ_j W_ij (θ_j + α g_j)`, i.e. `θ ← (W ⊗ I)(θ + α ĝ)`.

use serde::{Deserialize, Serialize};

use crate::critic::CriticState;
use crate::error::{check_dim, DacError, Result};
use crate::features::{dot, PolicyParams};
use crate::network::{deliver, ConsensusMessage, TopologyGraph, WeightMatrix, ROW_STOCHASTIC_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEnsemble {
    params: Vec<PolicyParams>,
}

impl PolicyEnsemble {
    pub fn new(params: Vec<PolicyParams>) -> Result<Self> {
        let first = params.first().ok_or_else(|| DacError::Contract("ensemble needs at least one agent".into()))?;
        let shape = first.shape();
        if params.iter().any(|p| p.shape() != shape) {
            return Err(DacError::Contract("all agents must share one parameter shape".into()));
        }
        Ok(Self { params })
    }

    /// `n` copies of the same parameters, relabelled per agent.
    pub fn replicated(base: &PolicyParams, n: usize) -> Self {
        let params = (0..n)
            .map(|i| {
                let mut p = base.clone();
                p.agent_id = i;
                p
            })
            .collect();
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.params[0].shape()
    }

    pub fn get(&self, i: usize) -> &PolicyParams {
        &self.params[i]
    }

    pub fn params(&self) -> &[PolicyParams] {
        &self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolicyParams> {
        self.params.iter()
    }
}

/// Sampled local gradient `∇_θπ(s) ∇_θπ(s)ᵀ w_i`, reshaped `n_features ×
/// n_actions`: column `j` is `φ (φᵀ W_i[:, j])`.
pub fn local_policy_gradient(phi: &[f64], critic: &CriticState) -> Result<Vec<f64>> {
    check_dim("critic baseline", phi.len(), critic.n_features())?;
    let n = phi.len();
    let na = critic.n_actions();
    let mut g = vec![0.0; n * na];
    for j in 0..na {
        let c = dot(&critic.w[j * n..(j + 1) * n], phi);
        for k in 0..n {
            g[k + n * j] = phi[k] * c;
        }
    }
    Ok(g)
}

/// Gradient averaged over several states, for the optional window mode.
pub fn local_policy_gradient_window(phis: &[Vec<f64>], critic: &CriticState) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; critic.w.len()];
    for phi in phis {
        for (a, g) in acc.iter_mut().zip(local_policy_gradient(phi, critic)?) {
            *a += g;
        }
    }
    let n = phis.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// One synchronous consensus round. All messages for the round are formed
/// before any agent mixes. Agent `i` only reads its own state and its inbox.
pub fn consensus_step(
    ensemble: &PolicyEnsemble,
    gradients: &[Vec<f64>],
    w: &WeightMatrix,
    graph: &TopologyGraph,
    alpha: f64,
) -> Result<PolicyEnsemble> {
    let n = ensemble.len();
    check_dim("gradient list", n, gradients.len())?;
    check_dim("weight matrix", n, w.n())?;
    check_dim("graph", n, graph.n())?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(DacError::Contract(format!("actor step {alpha} must be non-negative")));
    }
    if !w.is_row_stochastic(ROW_STOCHASTIC_TOL) {
        return Err(DacError::Contract("consensus matrix is not row stochastic".into()));
    }
    if !w.respects(graph) {
        return Err(DacError::Contract("consensus matrix has weight outside the communication graph".into()));
    }
    let dim = ensemble.params[0].as_flat().len();
    for g in gradients {
        check_dim("local gradient", dim, g.len())?;
    }

    let outgoing: Vec<ConsensusMessage> = ensemble
        .params
        .iter()
        .zip(gradients)
        .enumerate()
        .map(|(j, (p, g))| ConsensusMessage {
            from: j,
            payload: p.as_flat().iter().zip(g).map(|(t, d)| t + alpha * d).collect(),
        })
        .collect();
    let inboxes = deliver(graph, &outgoing);

    let mut next = Vec::with_capacity(n);
    for (i, inbox) in inboxes.iter().enumerate() {
        let own = &outgoing[i].payload;
        let wii = w.get(i, i);
        let mut mixed: Vec<f64> = own.iter().map(|x| wii * x).collect();
        for msg in inbox {
            let wij = w.get(i, msg.from);
            if wij == 0.0 {
                continue;
            }
            for (m, x) in mixed.iter_mut().zip(&msg.payload) {
                *m += wij * x;
            }
        }
        let (nf, na) = ensemble.params[i].shape();
        if mixed.iter().any(|x| !x.is_finite()) {
            return Err(DacError::PoisonedActor { update: 0 });
        }
        next.push(PolicyParams::from_flat(i, nf, na, mixed)?);
    }
    Ok(PolicyEnsemble { params: next })
}

pub fn mean_policy(ensemble: &PolicyEnsemble) -> PolicyParams {
    let (nf, na) = ensemble.shape();
    let n = ensemble.len() as f64;
    let mut acc = vec![0.0; nf * na];
    for p in &ensemble.params {
        for (a, x) in acc.iter_mut().zip(p.as_flat()) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    PolicyParams::from_flat(usize::MAX, nf, na, acc).expect("mean of finite parameters is finite")
}

/// `‖θ − 1 ⊗ θ̄‖₂` over all flattened parameters.
pub fn disagreement_norm(ensemble: &PolicyEnsemble) -> f64 {
    let mean = mean_policy(ensemble);
    ensemble
        .params
        .iter()
        .flat_map(|p| p.as_flat().iter().zip(mean.as_flat()).map(|(x, m)| (x - m) * (x - m)))
        .sum::<f64>()
        .sqrt()
}

/// Largest pairwise `‖θ_i − θ_j‖`.
pub fn max_pairwise_distance(ensemble: &PolicyEnsemble) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..ensemble.len() {
        for j in i + 1..ensemble.len() {
            let d = ensemble.params[i]
                .as_flat()
                .iter()
                .zip(ensemble.params[j].as_flat())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
    }
    worst
}
