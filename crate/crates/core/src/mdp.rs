//! Finite Markov decision processes with state-action rewards, plus the
//! exponential and hyperbolic discounting models used to study time
//! inconsistency.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::macid::PROB_TOL;

/// Hard cap on value-iteration sweeps.
pub const MAX_ITERS_CAP: usize = 100_000;

/// Relative tolerance under which two discounted values count as tied.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid discount: {0}")]
    InvalidDiscount(String),
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
    #[error("value iteration did not reach tolerance within {} iterations", .0.iterations)]
    MaxItersExceeded(Box<ValueFunction>),
    #[error("policy evaluation system is singular")]
    SingularSystem,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid delays: {0}")]
    InvalidDelays(String),
}

/// Serialized MDP: `transition[s][a][s']` and `reward[s][a]`, indexed by the
/// declared state and action orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDoc {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub reward: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct Mdp {
    states: Vec<String>,
    actions: Vec<String>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpDoc> for Mdp {
    type Error = MdpError;

    fn try_from(doc: MdpDoc) -> Result<Self, Self::Error> {
        let reward = doc
            .reward
            .unwrap_or_else(|| vec![vec![0.0; doc.actions.len()]; doc.states.len()]);
        Mdp::new(doc.states, doc.actions, doc.transition, reward)
    }
}

impl From<Mdp> for MdpDoc {
    fn from(m: Mdp) -> Self {
        MdpDoc {
            states: m.states,
            actions: m.actions,
            transition: m.transition,
            reward: Some(m.reward),
        }
    }
}

impl Mdp {
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        let bad = |m: String| MdpError::InvalidMdp(m);
        if states.is_empty() || actions.is_empty() {
            return Err(bad("states and actions must be non-empty".into()));
        }
        for (name, ids) in [("state", &states), ("action", &actions)] {
            let mut sorted: Vec<&String> = ids.iter().collect();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return Err(bad(format!("duplicate {name} id")));
            }
        }
        let (ns, na) = (states.len(), actions.len());
        if transition.len() != ns || reward.len() != ns {
            return Err(bad("transition/reward tables must have one entry per state".into()));
        }
        for s in 0..ns {
            if transition[s].len() != na || reward[s].len() != na {
                return Err(bad(format!("state `{}` needs one entry per action", states[s])));
            }
            for a in 0..na {
                let row = &transition[s][a];
                if row.len() != ns {
                    return Err(bad(format!("P(.|{},{}) has wrong length", states[s], actions[a])));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(bad(format!("P(.|{},{}) has a negative entry", states[s], actions[a])));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(bad(format!("P(.|{},{}) sums to {sum}", states[s], actions[a])));
                }
                if !reward[s][a].is_finite() {
                    return Err(bad(format!("r({},{}) is not finite", states[s], actions[a])));
                }
            }
        }
        Ok(Mdp {
            states,
            actions,
            transition,
            reward,
        })
    }

    /// Builds an MDP from `&str` ids.
    pub fn from_tables(
        states: &[&str],
        actions: &[&str],
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        Mdp::new(
            states.iter().map(|s| s.to_string()).collect(),
            actions.iter().map(|s| s.to_string()).collect(),
            transition,
            reward,
        )
    }

    /// Same dynamics with a different reward table.
    pub fn with_reward(&self, reward: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        Mdp::new(self.states.clone(), self.actions.clone(), self.transition.clone(), reward)
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn reward_table(&self) -> &[Vec<f64>] {
        &self.reward
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s == id)
    }

    pub fn action_index(&self, id: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == id)
    }

    fn q_from(&self, values: &[f64], beta: f64) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| {
                (0..self.n_actions())
                    .map(|a| {
                        let next: f64 = self.transition[s][a]
                            .iter()
                            .zip(values)
                            .map(|(p, v)| p * v)
                            .sum();
                        self.reward[s][a] + beta * next
                    })
                    .collect()
            })
            .collect()
    }
}

/// Deterministic stationary policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, mdp: &Mdp) -> Result<(), MdpError> {
        if self.0.len() != mdp.n_states() {
            return Err(MdpError::InvalidPolicy(format!(
                "policy covers {} states, MDP has {}",
                self.0.len(),
                mdp.n_states()
            )));
        }
        if let Some(a) = self.0.iter().find(|&&a| a >= mdp.n_actions()) {
            return Err(MdpError::InvalidPolicy(format!("action index {a} out of range")));
        }
        Ok(())
    }
}

/// Greedy action per state; ties go to the lowest action index.
pub fn greedy(q: &[Vec<f64>]) -> Policy {
    Policy(
        q.iter()
            .map(|row| {
                let mut best = 0;
                for (a, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect(),
    )
}

/// State values, state-action values and a policy, plus solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub policy: Policy,
    pub iterations: usize,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    pub converged: bool,
    /// Sup-norm gaps between successive iterates, in order.
    pub gaps: Vec<f64>,
}

fn check_beta(beta: f64) -> Result<(), MdpError> {
    if beta.is_finite() && beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(MdpError::InvalidDiscount(format!("beta = {beta} is outside (0, 1)")))
    }
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iteration budget implied by the contraction rate, capped at [`MAX_ITERS_CAP`].
pub fn default_max_iters(beta: f64, tol: f64) -> usize {
    let bound = ((tol * (1.0 - beta)).ln() / beta.ln()).ceil();
    if !bound.is_finite() || bound <= 0.0 {
        return MAX_ITERS_CAP;
    }
    ((10.0 * bound) as usize).clamp(1, MAX_ITERS_CAP)
}

/// Bellman optimality iteration from V = 0 until successive iterates differ
/// by at most `tol` in sup norm. The returned residual is then at most
/// `beta * tol`.
pub fn value_iteration(mdp: &Mdp, beta: f64, tol: f64, max_iters: usize) -> Result<ValueFunction, MdpError> {
    check_beta(beta)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(MdpError::InvalidTolerance(tol));
    }
    let mut values = vec![0.0; mdp.n_states()];
    let mut gaps = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let q = mdp.q_from(&values, beta);
        let next: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let gap = sup_norm_diff(&next, &values);
        gaps.push(gap);
        values = next;
        iterations += 1;
        if gap <= tol {
            converged = true;
            break;
        }
    }
    let q = mdp.q_from(&values, beta);
    let backup: Vec<f64> = q
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let result = ValueFunction {
        residual: sup_norm_diff(&backup, &values),
        policy: greedy(&q),
        values,
        q,
        iterations,
        converged,
        gaps,
    };
    if converged {
        Ok(result)
    } else {
        Err(MdpError::MaxItersExceeded(Box::new(result)))
    }
}

/// [`value_iteration`] with tolerance 1e-9 and the default iteration budget.
pub fn solve(mdp: &Mdp, beta: f64) -> Result<ValueFunction, MdpError> {
    check_beta(beta)?;
    let tol = 1e-9;
    value_iteration(mdp, beta, tol, default_max_iters(beta, tol))
}

/// Exact value of a fixed policy by solving (I - beta P_pi) V = r_pi.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy, beta: f64) -> Result<ValueFunction, MdpError> {
    check_beta(beta)?;
    policy.check(mdp)?;
    let n = mdp.n_states();
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = policy.action(s);
        rhs[s] = mdp.reward(s, a);
        for (t, p) in mdp.transition(s, a).iter().enumerate() {
            system[(s, t)] -= beta * p;
        }
    }
    let solution = system
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(MdpError::SingularSystem)?;
    let residual = (&system * &solution - &rhs).amax();
    if !residual.is_finite() || residual > 1e-9 {
        return Err(MdpError::SingularSystem);
    }
    let values: Vec<f64> = solution.iter().copied().collect();
    let q = mdp.q_from(&values, beta);
    Ok(ValueFunction {
        values,
        q,
        policy: policy.clone(),
        iterations: 0,
        residual,
        converged: true,
        gaps: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscountSpec {
    Exponential { beta: f64 },
    Hyperbolic { k: f64 },
}

impl DiscountSpec {
    pub fn validate(&self) -> Result<(), MdpError> {
        match *self {
            DiscountSpec::Exponential { beta } => check_beta(beta),
            DiscountSpec::Hyperbolic { k } if k.is_finite() && k > 0.0 => Ok(()),
            DiscountSpec::Hyperbolic { k } => Err(MdpError::InvalidDiscount(format!("k = {k} must be positive"))),
        }
    }
}

/// Weight of a reward received `t` steps from now: `beta^t` or `1/(1 + k t)`.
pub fn discount_weight(spec: DiscountSpec, t: u32) -> Result<f64, MdpError> {
    spec.validate()?;
    Ok(match spec {
        DiscountSpec::Exponential { beta } => beta.powi(t as i32),
        DiscountSpec::Hyperbolic { k } => 1.0 / (1.0 + k * f64::from(t)),
    })
}

/// A reward available after a delay, both measured from epoch 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedReward {
    pub reward: f64,
    pub delay: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Early,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceReversal {
    pub epoch: u32,
    pub initial: Choice,
    pub reversed_to: Choice,
    pub early_value: f64,
    pub late_value: f64,
}

fn preferred(early: f64, late: f64) -> Choice {
    let scale = early.abs().max(late.abs());
    if late > early + TIE_RTOL * scale {
        Choice::Late
    } else {
        Choice::Early
    }
}

/// Sweeps evaluation epochs `0..=horizon` while both options are still
/// available (`epoch <= early.delay`) and reports the first epoch whose
/// preference differs from the epoch-0 preference. Values within a relative
/// 1e-12 count as tied, and ties favor the early option.
pub fn detect_preference_reversal(
    spec: DiscountSpec,
    early: DelayedReward,
    late: DelayedReward,
    horizon: u32,
) -> Result<Option<PreferenceReversal>, MdpError> {
    spec.validate()?;
    let identical = early == late;
    if !identical && late.delay <= early.delay {
        return Err(MdpError::InvalidDelays(format!(
            "late delay {} must exceed early delay {}",
            late.delay, early.delay
        )));
    }
    if !(early.reward > 0.0 && late.reward > 0.0) {
        return Err(MdpError::InvalidDelays("rewards must be positive".into()));
    }
    if horizon == 0 {
        return Err(MdpError::InvalidDelays("horizon must be positive".into()));
    }
    let value = |r: DelayedReward, e: u32| -> Result<f64, MdpError> {
        Ok(r.reward * discount_weight(spec, r.delay - e)?)
    };
    let initial = preferred(value(early, 0)?, value(late, 0)?);
    for epoch in 1..=horizon.min(early.delay) {
        let (ev, lv) = (value(early, epoch)?, value(late, epoch)?);
        let now = preferred(ev, lv);
        if now != initial {
            return Ok(Some(PreferenceReversal {
                epoch,
                initial,
                reversed_to: now,
                early_value: ev,
                late_value: lv,
            }));
        }
    }
    Ok(None)
}
