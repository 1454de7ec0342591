//! Radial Gaussian basis features and the linear deterministic policies built
//! on top of them.
//!
//! A policy is `π_θ(s) = θᵀ φ(s)` with `θ` an `n_features × n_actions`
//! matrix stored column-major, so column `j` holds the weights of action
//! component `j`. The policy Jacobian with respect to the flattened `θ` is
//! block diagonal with `n_actions` copies of `φ(s)`, which is why it is never
//! materialized outside of tests.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DacError, Result};
use crate::rng::Rng;

/// Shared Gaussian basis `φ_k(s) = exp(-‖s - c_k‖² / 2σ_k²) / √(2πσ_k²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfFeatureMap {
    state_dim: usize,
    /// Row-major `n_features × state_dim`.
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl RbfFeatureMap {
    pub fn new(state_dim: usize, centers: Vec<Vec<f64>>, widths: Vec<f64>) -> Result<Self> {
        if state_dim == 0 {
            return Err(DacError::Contract("state_dim must be positive".into()));
        }
        check_dim("rbf widths", centers.len(), widths.len())?;
        if centers.is_empty() {
            return Err(DacError::Contract("feature map needs at least one center".into()));
        }
        if let Some(w) = widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(DacError::Contract(format!("rbf width {w} is not strictly positive")));
        }
        let mut flat = Vec::with_capacity(centers.len() * state_dim);
        for c in &centers {
            check_dim("rbf center", state_dim, c.len())?;
            if c.iter().any(|x| !x.is_finite()) {
                return Err(DacError::Contract("rbf center has non-finite entries".into()));
            }
            flat.extend_from_slice(c);
        }
        Ok(Self { state_dim, centers: flat, widths })
    }

    /// Centers uniform over the box `[low, high]^state_dim`, one shared width.
    pub fn random(n_features: usize, state_dim: usize, low: f64, high: f64, width: f64, rng: &mut Rng) -> Result<Self> {
        if !(low < high) {
            return Err(DacError::Contract(format!("empty center box [{low}, {high}]")));
        }
        let centers = (0..n_features).map(|_| (0..state_dim).map(|_| rng.random_range(low..high)).collect()).collect();
        Self::new(state_dim, centers, vec![width; n_features])
    }

    pub fn n_features(&self) -> usize {
        self.widths.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Sup-norm bound of each feature, attained at its center.
    pub fn peak(&self, k: usize) -> f64 {
        let s2 = self.widths[k] * self.widths[k];
        1.0 / (2.0 * std::f64::consts::PI * s2).sqrt()
    }

    /// Uniform bound on `‖φ(s)‖` over all states.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n_features()).map(|k| self.peak(k)).sum()
    }

    pub fn eval(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_features()];
        self.eval_into(s, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("state", self.state_dim, s.len())?;
        check_dim("feature buffer", self.n_features(), out.len())?;
        for (k, o) in out.iter_mut().enumerate() {
            let d2: f64 = self.center(k).iter().zip(s).map(|(c, x)| (x - c) * (x - c)).sum();
            let s2 = self.widths[k] * self.widths[k];
            *o = self.peak(k) * (-d2 / (2.0 * s2)).exp();
        }
        Ok(())
    }
}

/// Local policy parameters `θ_i`, an `n_features × n_actions` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub agent_id: usize,
    n_features: usize,
    n_actions: usize,
    /// Column-major: entry `(k, j)` lives at `k + n_features * j`.
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(agent_id: usize, n_features: usize, n_actions: usize) -> Self {
        Self { agent_id, n_features, n_actions, theta: vec![0.0; n_features * n_actions] }
    }

    pub fn from_flat(agent_id: usize, n_features: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        check_dim("theta", n_features * n_actions, theta.len())?;
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(DacError::Contract("policy parameters must be finite".into()));
        }
        Ok(Self { agent_id, n_features, n_actions, theta })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_features, self.n_actions)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.theta[k + self.n_features * j]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.theta[j * self.n_features..(j + 1) * self.n_features]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `a = θᵀ φ`.
    pub fn action(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_dim("feature vector", self.n_features, phi.len())?;
        Ok((0..self.n_actions).map(|j| dot(self.column(j), phi)).collect())
    }

    pub(crate) fn action_into(&self, phi: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.column(j), phi);
        }
    }
}

/// `∇_θ π(s)` for a linear policy: block diagonal with `n_actions` copies of
/// `φ(s)`. Kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyJacobian {
    pub phi: Vec<f64>,
    pub n_actions: usize,
}

impl PolicyJacobian {
    pub fn n_params(&self) -> usize {
        self.phi.len() * self.n_actions
    }

    /// `∇_θπ(s) · y` for an action-space vector `y`; the flattened outer
    /// product `φ yᵀ`.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("action vector", self.n_actions, y.len())?;
        let n = self.phi.len();
        let mut out = vec![0.0; n * self.n_actions];
        for (j, yj) in y.iter().enumerate() {
            for (k, p) in self.phi.iter().enumerate() {
                out[k + n * j] = p * yj;
            }
        }
        Ok(out)
    }

    /// `∇_θπ(s)ᵀ · w` for a flattened parameter-space vector `w`; yields
    /// `Wᵀ φ` with `W` the `n_features × n_actions` reshape of `w`.
    pub fn apply_transpose(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim("parameter vector", self.n_params(), w.len())?;
        let n = self.phi.len();
        Ok((0..self.n_actions).map(|j| dot(&w[j * n..(j + 1) * n], &self.phi)).collect())
    }

    /// Dense `(n_features·n_actions) × n_actions` matrix, row-major. Test use.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.phi.len();
        let mut rows = vec![vec![0.0; self.n_actions]; n * self.n_actions];
        for j in 0..self.n_actions {
            for k in 0..n {
                rows[k + n * j][j] = self.phi[k];
            }
        }
        rows
    }
}

pub fn policy_jacobian(map: &RbfFeatureMap, s: &[f64], n_actions: usize) -> Result<PolicyJacobian> {
    Ok(PolicyJacobian { phi: map.eval(s)?, n_actions })
}

pub fn policy_action(params: &PolicyParams, phi: &[f64]) -> Result<Vec<f64>> {
    params.action(phi)
}

/// Compatible advantage features `∇_θπ(s)(a − π_θ(s))`.
pub fn compatible_features(map: &RbfFeatureMap, s: &[f64], a: &[f64], params: &PolicyParams) -> Result<Vec<f64>> {
    check_dim("feature map", map.n_features(), params.n_features())?;
    let phi = map.eval(s)?;
    compatible_features_from(&phi, a, params)
}

/// Same as [`compatible_features`] with `φ(s)` already evaluated.
pub fn compatible_features_from(phi: &[f64], a: &[f64], params: &PolicyParams) -> Result<Vec<f64>> {
    check_dim("action", params.n_actions(), a.len())?;
    let pi = params.action(phi)?;
    let mut out = vec![0.0; phi.len() * a.len()];
    write_compatible(phi, a, &pi, &mut out);
    Ok(out)
}

pub(crate) fn write_compatible(phi: &[f64], a: &[f64], pi: &[f64], out: &mut [f64]) {
    let n = phi.len();
    for j in 0..a.len() {
        let e = a[j] - pi[j];
        for (k, p) in phi.iter().enumerate() {
            out[k + n * j] = p * e;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
