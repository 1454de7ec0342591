//! Per-agent off-policy policy evaluation.
//!
//! Each critic fits `Q_i(s, a) = ψ(s, a)ᵀ z` with stacked features
//! `ψ = [φ_w(s, a); φ_v(s)]`, where `φ_w` are the compatible advantage
//! features and `φ_v = φ` is a state-value baseline on the shared basis.
//! The target policy is deterministic, so the successor feature is
//! `ψ' = [0; φ_v(s')]`: the advantage block is a structural zero.
//!
//! Learning is TDC (gradient TD with correction): with `δ = r + γψ'ᵀz − ψᵀz`,
//!
//! ```text
//! z ← z + α_w (δ ψ − γ ψ' (ψᵀu))
//! u ← u + α_u (δ − ψᵀu) ψ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::chain::ChainMdp;
use crate::error::{check_dim, DacError, Result};
use crate::features::{dot, write_compatible, PolicyParams, RbfFeatureMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    /// Advantage weights, flattened column-major `n_features × n_actions`.
    pub w: Vec<f64>,
    /// Baseline weights, one per feature.
    pub v: Vec<f64>,
    /// Correction weights for the stacked `[w; v]` system.
    pub u: Vec<f64>,
    pub step_count: u64,
}

impl CriticState {
    pub fn zeros(n_features: usize, n_actions: usize) -> Self {
        let nw = n_features * n_actions;
        Self { w: vec![0.0; nw], v: vec![0.0; n_features], u: vec![0.0; nw + n_features], step_count: 0 }
    }

    pub fn n_features(&self) -> usize {
        self.v.len()
    }

    pub fn n_actions(&self) -> usize {
        if self.v.is_empty() {
            0
        } else {
            self.w.len() / self.v.len()
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len() + self.v.len()
    }

    /// Stacked `z = [w; v]`.
    pub fn z(&self) -> Vec<f64> {
        self.w.iter().chain(&self.v).copied().collect()
    }

    pub fn set_z(&mut self, z: &[f64]) {
        let nw = self.w.len();
        self.w.copy_from_slice(&z[..nw]);
        self.v.copy_from_slice(&z[nw..]);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.v).chain(&self.u).all(|x| x.is_finite())
    }

    fn check_shape(&self, params: &PolicyParams) -> Result<()> {
        check_dim("critic baseline", params.n_features(), self.v.len())?;
        check_dim("critic advantage", params.n_features() * params.n_actions(), self.w.len())?;
        check_dim("critic correction", self.dim(), self.u.len())
    }
}

/// One observed environment step, shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub rewards: Vec<f64>,
    pub s_next: Vec<f64>,
    pub t: u64,
}

impl Transition {
    pub fn validate(&self, n_agents: usize, reward_bound: Option<f64>) -> Result<()> {
        check_dim("rewards", n_agents, self.rewards.len())?;
        check_dim("successor state", self.s.len(), self.s_next.len())?;
        for r in &self.rewards {
            if !r.is_finite() {
                return Err(DacError::Contract(format!("non-finite reward at t = {}", self.t)));
            }
            if let Some(bound) = reward_bound {
                if r.abs() > bound {
                    return Err(DacError::Contract(format!("reward {r} exceeds bound {bound} at t = {}", self.t)));
                }
            }
        }
        Ok(())
    }
}

/// `Q̂(s, a) = φ_w(s, a)ᵀ w + φ(s)ᵀ v`.
pub fn q_value(critic: &CriticState, map: &RbfFeatureMap, s: &[f64], a: &[f64], params: &PolicyParams) -> Result<f64> {
    critic.check_shape(params)?;
    check_dim("action", params.n_actions(), a.len())?;
    let phi = map.eval(s)?;
    let pi = params.action(&phi)?;
    let mut fw = vec![0.0; critic.w.len()];
    write_compatible(&phi, a, &pi, &mut fw);
    Ok(dot(&fw, &critic.w) + dot(&phi, &critic.v))
}

/// `δ = r_i + γ Q̂(s', π(s')) − Q̂(s, a)`; reads only agent `agent`'s reward.
pub fn td_error(
    critic: &CriticState,
    map: &RbfFeatureMap,
    transition: &Transition,
    params: &PolicyParams,
    gamma: f64,
    agent: usize,
) -> Result<f64> {
    check_gamma(gamma)?;
    let reward = *transition.rewards.get(agent).ok_or(DacError::Dimension {
        what: "agent reward",
        expected: agent + 1,
        got: transition.rewards.len(),
    })?;
    let phi_next = map.eval(&transition.s_next)?;
    let pi_next = params.action(&phi_next)?;
    let q_next = q_value(critic, map, &transition.s_next, &pi_next, params)?;
    let q = q_value(critic, map, &transition.s, &transition.a, params)?;
    Ok(reward + gamma * q_next - q)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(DacError::Contract(format!("discount {gamma} outside (0, 1)")))
    }
}

/// Pure TDC step for agent `agent`. Returns the updated state and leaves
/// the input untouched.
#[allow(clippy::too_many_arguments)]
pub fn gtd_step(
    critic: &CriticState,
    map: &RbfFeatureMap,
    transition: &Transition,
    params: &PolicyParams,
    gamma: f64,
    alpha_w: f64,
    alpha_u: f64,
    agent: usize,
) -> Result<CriticState> {
    check_gamma(gamma)?;
    if !(alpha_w > 0.0 && alpha_u > 0.0) {
        return Err(DacError::Contract("critic step sizes must be positive".into()));
    }
    critic.check_shape(params)?;
    check_dim("action", params.n_actions(), transition.a.len())?;
    let reward = *transition.rewards.get(agent).ok_or(DacError::Dimension {
        what: "agent reward",
        expected: agent + 1,
        got: transition.rewards.len(),
    })?;
    let phi = map.eval(&transition.s)?;
    let phi_next = map.eval(&transition.s_next)?;
    let mut next = critic.clone();
    let mut scratch = Scratch::default();
    next.update(&phi, &phi_next, &transition.a, params, reward, gamma, alpha_w, alpha_u, &mut scratch);
    if !next.is_finite() {
        return Err(DacError::PoisonedCritic { agent, t: transition.t });
    }
    Ok(next)
}

/// Reusable buffers for the in-place update.
#[derive(Debug, Default, Clone)]
pub(crate) struct Scratch {
    pi: Vec<f64>,
    fw: Vec<f64>,
}

impl CriticState {
    /// In-place TDC update with precomputed features. The caller checks
    /// shapes and finiteness.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn update(
        &mut self,
        phi: &[f64],
        phi_next: &[f64],
        a: &[f64],
        params: &PolicyParams,
        reward: f64,
        gamma: f64,
        alpha_w: f64,
        alpha_u: f64,
        scratch: &mut Scratch,
    ) {
        scratch.pi.resize(params.n_actions(), 0.0);
        scratch.fw.resize(self.w.len(), 0.0);
        params.action_into(phi, &mut scratch.pi);
        write_compatible(phi, a, &scratch.pi, &mut scratch.fw);
        let nw = self.w.len();
        let fw = &scratch.fw;

        let q = dot(fw, &self.w) + dot(phi, &self.v);
        let q_next = dot(phi_next, &self.v);
        let delta = reward + gamma * q_next - q;
        let psi_u = dot(fw, &self.u[..nw]) + dot(phi, &self.u[nw..]);

        // z ← z + α_w (δψ − γψ'(ψᵀu)); ψ' has no advantage block
        for (w, f) in self.w.iter_mut().zip(fw) {
            *w += alpha_w * (delta * f);
        }
        for ((v, p), pn) in self.v.iter_mut().zip(phi).zip(phi_next) {
            *v += alpha_w * (delta * p - gamma * pn * psi_u);
        }
        // u ← u + α_u (δ − ψᵀu) ψ
        let c = alpha_u * (delta - psi_u);
        for (u, f) in self.u[..nw].iter_mut().zip(fw) {
            *u += c * f;
        }
        for (u, p) in self.u[nw..].iter_mut().zip(phi) {
            *u += c * p;
        }
        self.step_count += 1;
    }
}

/// Exact expected TD system for a fixed policy on an enumerable MDP:
/// `A = E_β[ψ(ψ − γψ')ᵀ]`, `b = E_β[rψ]`, `C = E_β[ψψᵀ]`.
#[derive(Debug, Clone)]
pub struct TdSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
}

/// Stacked features `ψ(s, a)` for an enumerable state/action pair.
pub fn stacked_features(phi: &[f64], a: &[f64], params: &PolicyParams) -> Result<Vec<f64>> {
    check_dim("action", params.n_actions(), a.len())?;
    let pi = params.action(phi)?;
    let mut out = vec![0.0; phi.len() * a.len() + phi.len()];
    let nw = phi.len() * a.len();
    write_compatible(phi, a, &pi, &mut out[..nw]);
    out[nw..].copy_from_slice(phi);
    Ok(out)
}

pub fn expected_td_system(mdp: &ChainMdp, map: &RbfFeatureMap, params: &PolicyParams, gamma: f64) -> Result<TdSystem> {
    let nf = params.n_features();
    let dim = nf * params.n_actions() + nf;
    let mut a_mat = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut c = DMatrix::zeros(dim, dim);
    let phis: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| map.eval(mdp.state(s))).collect::<Result<_>>()?;
    for s in 0..mdp.n_states() {
        let ds = mdp.stationary()[s];
        for act in 0..mdp.n_actions() {
            let p_sa = ds * mdp.behavior_prob(s, act);
            if p_sa == 0.0 {
                continue;
            }
            let psi = DVector::from_vec(stacked_features(&phis[s], mdp.action(act), params)?);
            b += &psi * (p_sa * mdp.reward(s, act));
            c += &psi * psi.transpose() * p_sa;
            for s2 in 0..mdp.n_states() {
                let p = p_sa * mdp.transition_prob(s, act, s2);
                if p == 0.0 {
                    continue;
                }
                let mut psi_next = DVector::zeros(dim);
                for k in 0..nf {
                    psi_next[dim - nf + k] = phis[s2][k];
                }
                a_mat += &psi * (&psi - psi_next * gamma).transpose() * p;
            }
        }
    }
    Ok(TdSystem { a: a_mat, b, c })
}

/// TD fixed point `z* = A⁻¹ b` by exact enumeration.
pub fn fixed_point_oracle(mdp: &ChainMdp, map: &RbfFeatureMap, params: &PolicyParams, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let sys = expected_td_system(mdp, map, params, gamma)?;
    solve_checked(&sys.a, &sys.b)
}

pub(crate) fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(DacError::Singular(format!("TD matrix is singular (condition {:.3e})", smax / smin)));
    }
    a.clone()
        .lu()
        .solve(b)
        .map(|z| z.iter().copied().collect())
        .ok_or_else(|| DacError::Singular("LU solve failed".into()))
}
