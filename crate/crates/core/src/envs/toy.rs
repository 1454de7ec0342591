//! Scalar-state, scalar-action quadratic task with a closed-form objective.
//!
//! States are i.i.d. uniform on `[low, high]` regardless of the action, and
//! agent `i` is rewarded `r_i = −(a − a*_i(s))²` with a smooth target
//! `a*_i(s) = offset + amplitude · sin(frequency · s + phase)`. Because the
//! next state ignores the action, `J_β(θ) = E_s[Σ_i r_i(s, π_θ(s))] / (1 − γ)`
//! and its gradient are available by one-dimensional quadrature.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::critic::solve_checked;
use crate::error::{check_dim, DacError, Result};
use crate::features::{PolicyParams, RbfFeatureMap};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTarget {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl ToyTarget {
    pub fn at(&self, s: f64) -> f64 {
        self.offset + self.amplitude * (self.frequency * s + self.phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub state_low: f64,
    pub state_high: f64,
    /// Standard deviation of the Gaussian exploration around the anchor.
    pub behavior_std: f64,
    pub targets: Vec<ToyTarget>,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            state_low: -1.0,
            state_high: 1.0,
            behavior_std: 0.5,
            targets: vec![
                ToyTarget { offset: 0.5, amplitude: 1.0, frequency: 2.0, phase: 0.0 },
                ToyTarget { offset: -0.3, amplitude: 0.5, frequency: 2.0, phase: 1.0 },
                ToyTarget { offset: 0.8, amplitude: 0.8, frequency: 2.0, phase: 2.0 },
            ],
        }
    }
}

/// Behavior policy `β(s) = π_anchor(s) + N(0, σ²)`; zero mean without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub map: RbfFeatureMap,
    pub theta: PolicyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticToy {
    spec: ToySpec,
    anchor: Option<Anchor>,
    s: f64,
}

impl QuadraticToy {
    pub fn new(spec: ToySpec) -> Result<Self> {
        if spec.targets.is_empty() {
            return Err(DacError::Config("toy task needs at least one agent target".into()));
        }
        if !(spec.state_low < spec.state_high) || !(spec.behavior_std > 0.0) {
            return Err(DacError::Config("toy task needs low < high and a positive behavior std".into()));
        }
        let s = 0.5 * (spec.state_low + spec.state_high);
        Ok(Self { spec, anchor: None, s })
    }

    pub fn spec(&self) -> &ToySpec {
        &self.spec
    }

    pub fn set_anchor(&mut self, anchor: Option<Anchor>) -> Result<()> {
        if let Some(a) = &anchor {
            check_dim("anchor state dim", 1, a.map.state_dim())?;
            check_dim("anchor action dim", 1, a.theta.n_actions())?;
        }
        self.anchor = anchor;
        Ok(())
    }

    pub fn state(&self) -> f64 {
        self.s
    }

    pub fn set_state(&mut self, s: f64) {
        self.s = s;
    }

    /// Rewards of every agent for action `a` at state `s`.
    pub fn rewards_at(&self, s: f64, a: f64) -> Vec<f64> {
        self.spec.targets.iter().map(|t| -(a - t.at(s)).powi(2)).collect()
    }

    /// `C = E[φφᵀ]` and `d_i = E[φ a*_i]` under the uniform state law.
    pub fn feature_moments(&self, map: &RbfFeatureMap) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
        check_dim("toy feature state dim", 1, map.state_dim())?;
        let nf = map.n_features();
        let mut c = DMatrix::zeros(nf, nf);
        let mut d = vec![DVector::zeros(nf); self.spec.targets.len()];
        let (lo, hi) = (self.spec.state_low, self.spec.state_high);
        // composite Simpson
        let intervals = 4000;
        let h = (hi - lo) / intervals as f64;
        for k in 0..=intervals {
            let s = lo + h * k as f64;
            let weight = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0
                / (hi - lo);
            let phi = DVector::from_vec(map.eval(&[s])?);
            c += &phi * phi.transpose() * weight;
            for (di, t) in d.iter_mut().zip(&self.spec.targets) {
                *di += &phi * (t.at(s) * weight);
            }
        }
        Ok((c, d))
    }

    /// `J_β(θ)` in closed form (up to quadrature).
    pub fn objective(&self, map: &RbfFeatureMap, theta: &PolicyParams, gamma: f64) -> Result<f64> {
        let (lo, hi) = (self.spec.state_low, self.spec.state_high);
        let intervals = 4000;
        let h = (hi - lo) / intervals as f64;
        let mut acc = 0.0;
        for k in 0..=intervals {
            let s = lo + h * k as f64;
            let weight = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0
                / (hi - lo);
            let a = theta.action(&map.eval(&[s])?)?[0];
            acc += weight * self.rewards_at(s, a).iter().sum::<f64>();
        }
        Ok(acc / (1.0 - gamma))
    }

    /// `∇J_β(θ) = Σ_i −2 (Cθ − d_i) / (1 − γ)`.
    pub fn objective_gradient(&self, map: &RbfFeatureMap, theta: &PolicyParams, gamma: f64) -> Result<Vec<f64>> {
        check_dim("toy action dim", 1, theta.n_actions())?;
        let (c, d) = self.feature_moments(map)?;
        let th = DVector::from_column_slice(theta.as_flat());
        let ct = &c * th;
        let mut g = DVector::zeros(map.n_features());
        for di in &d {
            g -= (&ct - di) * 2.0;
        }
        Ok((g / (1.0 - gamma)).iter().copied().collect())
    }

    /// Maximizer of `J_β`: `θ* = C⁻¹ mean_i d_i`.
    pub fn optimum(&self, map: &RbfFeatureMap) -> Result<PolicyParams> {
        let (c, d) = self.feature_moments(map)?;
        let mut rhs = DVector::zeros(map.n_features());
        for di in &d {
            rhs += di;
        }
        rhs /= d.len() as f64;
        let theta = solve_checked(&c, &rhs)?;
        PolicyParams::from_flat(0, map.n_features(), 1, theta)
    }

    fn draw_state(&self, rng: &mut Rng) -> f64 {
        rng.random_range(self.spec.state_low..self.spec.state_high)
    }
}

impl Environment for QuadraticToy {
    fn num_agents(&self) -> usize {
        self.spec.targets.len()
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.s]
    }

    fn reset(&mut self, rng: &mut Rng) {
        self.s = self.draw_state(rng);
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        check_dim("action", 1, action.len())?;
        if !action[0].is_finite() {
            return Err(DacError::Contract("non-finite toy action".into()));
        }
        let rewards = self.rewards_at(self.s, action[0]);
        self.s = self.draw_state(rng);
        Ok(rewards)
    }

    fn behavior_action(&self, rng: &mut Rng) -> Vec<f64> {
        let center = match &self.anchor {
            Some(a) => {
                let phi = a.map.eval(&[self.s]).expect("anchor map is one-dimensional");
                a.theta.action(&phi).expect("anchor shape checked")[0]
            }
            None => 0.0,
        };
        let noise = Normal::new(0.0, self.spec.behavior_std).expect("positive std").sample(rng);
        vec![center + noise]
    }

    fn project_action(&self, _action: &mut [f64]) {}

    fn reward_bound(&self) -> Option<f64> {
        None
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "toy",
            "targets": self.spec.targets,
            "behavior_std": self.spec.behavior_std,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn map() -> RbfFeatureMap {
        RbfFeatureMap::new(1, vec![vec![-1.0], vec![0.0], vec![1.0]], vec![0.6; 3]).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_of_objective() {
        let toy = QuadraticToy::new(ToySpec::default()).unwrap();
        let m = map();
        let theta = PolicyParams::from_flat(0, 3, 1, vec![0.2, -0.4, 0.9]).unwrap();
        let g = toy.objective_gradient(&m, &theta, 0.5).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut plus = theta.clone();
            plus.as_flat_mut()[k] += h;
            let mut minus = theta.clone();
            minus.as_flat_mut()[k] -= h;
            let fd = (toy.objective(&m, &plus, 0.5).unwrap() - toy.objective(&m, &minus, 0.5).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * g[k].abs().max(1.0), "{fd} vs {}", g[k]);
        }
    }

    #[test]
    fn optimum_has_zero_gradient() {
        let toy = QuadraticToy::new(ToySpec::default()).unwrap();
        let m = map();
        let opt = toy.optimum(&m).unwrap();
        let g = toy.objective_gradient(&m, &opt, 0.5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9), "{g:?}");
    }

    #[test]
    fn states_are_uniform_and_ignore_actions() {
        let mut toy = QuadraticToy::new(ToySpec::default()).unwrap();
        let mut rng = stream(1, Stream::EnvNoise);
        let mut sum = 0.0;
        for i in 0..10_000 {
            toy.step(&[i as f64], &mut rng).unwrap();
            assert!(toy.state() >= -1.0 && toy.state() < 1.0);
            sum += toy.state();
        }
        assert!((sum / 10_000.0).abs() < 0.03);
    }

    #[test]
    fn anchored_behavior_centers_on_anchor_policy() {
        let mut toy = QuadraticToy::new(ToySpec::default()).unwrap();
        let m = map();
        let theta = PolicyParams::from_flat(0, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        toy.set_anchor(Some(Anchor { map: m.clone(), theta: theta.clone() })).unwrap();
        toy.set_state(0.25);
        let center = theta.action(&m.eval(&[0.25]).unwrap()).unwrap()[0];
        let mut rng = stream(2, Stream::Behavior);
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| toy.behavior_action(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - center).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }
}
