//! Small enumerable MDPs with explicit tables.
//!
//! Used as ground truth for the critic: every expectation under the behavior
//! policy can be assembled exactly by enumeration.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DacError, Result};
use crate::rng::Rng;

pub const MAX_STATES: usize = 10;
pub const MAX_ACTIONS: usize = 4;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    /// Observation vector for each discrete state.
    pub states: Vec<Vec<f64>>,
    /// Real action vector for each discrete action.
    pub actions: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    /// `behavior[s][a]`, the fixed behavior policy.
    pub behavior: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    spec: ChainSpec,
    /// State-to-state kernel under the behavior policy, row-major.
    kernel: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl ChainMdp {
    pub fn new(spec: ChainSpec) -> Result<Self> {
        let ns = spec.states.len();
        let na = spec.actions.len();
        if ns == 0 || ns > MAX_STATES {
            return Err(DacError::Contract(format!("chain needs 1..={MAX_STATES} states, got {ns}")));
        }
        if na == 0 || na > MAX_ACTIONS {
            return Err(DacError::Contract(format!("chain needs 1..={MAX_ACTIONS} actions, got {na}")));
        }
        let sdim = spec.states[0].len();
        let adim = spec.actions[0].len();
        if spec.states.iter().any(|s| s.len() != sdim) || spec.actions.iter().any(|a| a.len() != adim) {
            return Err(DacError::Contract("ragged state or action table".into()));
        }
        if spec.transitions.len() != ns || spec.rewards.len() != ns || spec.behavior.len() != ns {
            return Err(DacError::Contract("table sizes disagree with state count".into()));
        }
        for s in 0..ns {
            if spec.rewards[s].len() != na || spec.transitions[s].len() != na {
                return Err(DacError::Contract(format!("row {s} has wrong action count")));
            }
            check_distribution(&spec.behavior[s], na, &format!("behavior row {s}"))?;
            for a in 0..na {
                check_distribution(&spec.transitions[s][a], ns, &format!("transition row ({s}, {a})"))?;
            }
        }
        let mut kernel = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                for s2 in 0..ns {
                    kernel[(s, s2)] += spec.behavior[s][a] * spec.transitions[s][a][s2];
                }
            }
        }
        if !is_primitive(&kernel) {
            return Err(DacError::Contract("behavior chain is not irreducible and aperiodic".into()));
        }
        let stationary = stationary_by_linear_solve(&kernel)?;
        Ok(Self { spec, kernel, stationary })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.actions.len()
    }

    pub fn state(&self, s: usize) -> &[f64] {
        &self.spec.states[s]
    }

    pub fn action(&self, a: usize) -> &[f64] {
        &self.spec.actions[a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.spec.rewards[s][a]
    }

    pub fn behavior_prob(&self, s: usize, a: usize) -> f64 {
        self.spec.behavior[s][a]
    }

    pub fn transition_prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.spec.transitions[s][a][s2]
    }

    /// Behavior-policy kernel `P_β[s][s']`.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// One behavior step: returns `(action index, next state, reward)`.
    pub fn sample(&self, s: usize, rng: &mut Rng) -> (usize, usize, f64) {
        let a = draw(&self.spec.behavior[s], rng);
        let s2 = draw(&self.spec.transitions[s][a], rng);
        (a, s2, self.spec.rewards[s][a])
    }
}

fn check_distribution(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(DacError::Contract(format!("{what} has length {} (want {len})", row.len())));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(DacError::Contract(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(DacError::Contract(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// A non-negative matrix is primitive iff its `(n−1)² + 1`-th power is
/// entrywise positive (Wielandt). Only the support matters.
fn is_primitive(kernel: &DMatrix<f64>) -> bool {
    let n = kernel.nrows();
    let support = kernel.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    let mut power = DMatrix::identity(n, n);
    for _ in 0..((n - 1) * (n - 1) + 1) {
        power = (&power * &support).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    }
    power.iter().all(|x| *x > 0.0)
}

/// Left eigenvector of the kernel for eigenvalue one: solves
/// `(Pᵀ − I) d = 0` with one equation replaced by `Σ d = 1`.
fn stationary_by_linear_solve(kernel: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    let mut m = kernel.transpose() - DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let d = m.lu().solve(&rhs).ok_or_else(|| DacError::Singular("stationary distribution system".into()))?;
    Ok(d.iter().copied().collect())
}
