//! Estimating what a principal's interests are: rewards inferred from
//! behavior or comparisons, discount factors inferred from choices, and
//! legal-standard objective templates.
//!
//! Everything here is batch: inputs are fixed datasets, nothing updates from
//! live interaction.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{self, Mdp, MdpError, Policy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssessmentError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("constraint assembly failed: {0}")]
    InfeasibleNumerics(String),
    #[error("gradient norm {norm} exceeded 10x its initial value {initial} at iteration {iteration}")]
    DivergenceDetected { iteration: usize, norm: f64, initial: f64 },
    #[error("every comparison is between feature-identical trajectories; gradient is identically zero")]
    DegenerateData,
    #[error("discount grid is empty")]
    EmptyGrid,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid discount: {0}")]
    InvalidDiscount(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("covariance is singular even after ridge regularization")]
    SingularCovariance,
    #[error("vertex enumeration is limited to {limit}; instance has {actual}")]
    TooLarge { limit: String, actual: String },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn bad(msg: impl Into<String>) -> AssessmentError {
    AssessmentError::InvalidInput(msg.into())
}

/// Sequence of (state index, action index) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(pub Vec<(usize, usize)>);

impl Trajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Linear reward features `phi(s, a)` of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct FeatureMap {
    dim: usize,
    table: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for FeatureMap {
    type Error = AssessmentError;

    fn try_from(table: Vec<Vec<Vec<f64>>>) -> Result<Self, Self::Error> {
        FeatureMap::new(table)
    }
}

impl From<FeatureMap> for Vec<Vec<Vec<f64>>> {
    fn from(f: FeatureMap) -> Self {
        f.table
    }
}

impl FeatureMap {
    /// `table[s][a]` is the feature vector of state `s`, action `a`.
    pub fn new(table: Vec<Vec<Vec<f64>>>) -> Result<Self, AssessmentError> {
        let first = table
            .first()
            .and_then(|row| row.first())
            .ok_or_else(|| bad("feature table is empty"))?;
        let dim = first.len();
        let actions = table[0].len();
        if dim == 0 {
            return Err(bad("feature dimension is zero"));
        }
        for (s, row) in table.iter().enumerate() {
            if row.len() != actions {
                return Err(bad(format!("feature row for state {s} has {} actions", row.len())));
            }
            for (a, v) in row.iter().enumerate() {
                if v.len() != dim {
                    return Err(bad(format!("phi({s},{a}) has dimension {}, expected {dim}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(bad(format!("phi({s},{a}) has a non-finite entry")));
                }
            }
        }
        Ok(FeatureMap { dim, table })
    }

    /// One indicator feature per state, independent of the action.
    pub fn one_hot_states(n_states: usize, n_actions: usize) -> Self {
        let table = (0..n_states)
            .map(|s| {
                let mut e = vec![0.0; n_states];
                e[s] = 1.0;
                vec![e; n_actions]
            })
            .collect();
        FeatureMap { dim: n_states, table }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        &self.table[s][a]
    }

    pub fn reward(&self, theta: &[f64], s: usize, a: usize) -> f64 {
        dot(theta, self.phi(s, a))
    }

    /// Dense `r(s, a) = theta . phi(s, a)`.
    pub fn reward_table(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| (0..self.n_actions()).map(|a| self.reward(theta, s, a)).collect())
            .collect()
    }

    fn check_compatible(&self, mdp: &Mdp) -> Result<(), AssessmentError> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(bad(format!(
                "feature table is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }

    fn check_trajectory(&self, t: &Trajectory) -> Result<(), AssessmentError> {
        if t.is_empty() {
            return Err(bad("trajectory is empty"));
        }
        if let Some(&(s, a)) = t.0.iter().find(|&&(s, a)| s >= self.n_states() || a >= self.n_actions()) {
            return Err(bad(format!("trajectory step ({s}, {a}) is out of range")));
        }
        Ok(())
    }

    /// Undiscounted feature sum along a trajectory.
    pub fn feature_sum(&self, t: &Trajectory) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for &(s, a) in &t.0 {
            axpy(&mut sum, 1.0, self.phi(s, a));
        }
        sum
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMethod {
    MaxEntIrl,
    FeasibleSetIrl,
    PreferenceFit,
    LegalStandard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardParams {
    /// Weights of a linear reward over a [`FeatureMap`].
    Linear(Vec<f64>),
    /// Dense `r[s][a]`.
    Tabular(Vec<Vec<f64>>),
}

/// Posterior over a discount grid, sorted by discount value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscountPosterior {
    pub entries: Vec<(f64, f64)>,
}

impl DiscountPosterior {
    /// Highest-probability discount; ties go to the smaller discount.
    pub fn argmax(&self) -> f64 {
        let mut best = self.entries[0];
        for &e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        best.0
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn probability(&self, beta: f64) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == beta).map(|e| e.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardEstimate {
    pub params: RewardParams,
    pub method: RewardMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discount_posterior: Option<DiscountPosterior>,
}

impl RewardEstimate {
    /// Dense reward table; linear estimates need the feature map they were fit with.
    pub fn reward_table(&self, features: Option<&FeatureMap>) -> Result<Vec<Vec<f64>>, AssessmentError> {
        match &self.params {
            RewardParams::Tabular(t) => Ok(t.clone()),
            RewardParams::Linear(theta) => {
                let f = features.ok_or_else(|| bad("linear reward estimate needs a feature map"))?;
                if f.dim() != theta.len() {
                    return Err(bad("weight dimension does not match the feature map"));
                }
                Ok(f.reward_table(theta))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Feasible-set IRL

/// `coefficients . r >= 0`, with `r` flattened as `r[s * n_actions + a]`.
/// Encodes `Q_pi(state, pi(state)) >= Q_pi(state, action)` under reward `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityConstraint {
    pub state: usize,
    pub action: usize,
    pub coefficients: Vec<f64>,
}

/// Rewards (with entries bounded by `bound`) under which a policy is optimal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibleRewardSet {
    pub n_states: usize,
    pub n_actions: usize,
    pub bound: f64,
    pub policy: Policy,
    pub constraints: Vec<OptimalityConstraint>,
    /// The all-zero reward satisfies every constraint.
    pub zero_feasible: bool,
}

/// Limits for vertex enumeration.
const VERTEX_MAX_STATES: usize = 3;
const VERTEX_MAX_SUBSETS: u128 = 5_000_000;

impl FeasibleRewardSet {
    fn flatten(&self, reward: &[Vec<f64>]) -> Vec<f64> {
        reward.iter().flatten().copied().collect()
    }

    /// Constraints violated by more than `tol`, with their (negative) margins.
    pub fn violations(&self, reward: &[Vec<f64>], tol: f64) -> Vec<(usize, usize, f64)> {
        let r = self.flatten(reward);
        self.constraints
            .iter()
            .filter_map(|c| {
                let margin = dot(&c.coefficients, &r);
                (margin < -tol).then_some((c.state, c.action, margin))
            })
            .collect()
    }

    pub fn contains(&self, reward: &[Vec<f64>], tol: f64) -> bool {
        let in_box = reward.iter().flatten().all(|v| v.abs() <= self.bound + tol);
        in_box && self.violations(reward, tol).is_empty()
    }

    fn unflatten(&self, r: &[f64]) -> Vec<Vec<f64>> {
        r.chunks(self.n_actions).map(|c| c.to_vec()).collect()
    }

    /// All vertices of the bounded feasible polytope, by checking every
    /// square subsystem of tight constraints. Only for small instances.
    pub fn vertices(&self) -> Result<Vec<Vec<Vec<f64>>>, AssessmentError> {
        if self.n_states > VERTEX_MAX_STATES {
            return Err(AssessmentError::TooLarge {
                limit: format!("{VERTEX_MAX_STATES} states"),
                actual: format!("{} states", self.n_states),
            });
        }
        let dim = self.n_states * self.n_actions;
        let mut rows: Vec<(Vec<f64>, f64)> = self
            .constraints
            .iter()
            .map(|c| (c.coefficients.clone(), 0.0))
            .collect();
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            rows.push((e.clone(), -self.bound));
            e[i] = -1.0;
            rows.push((e, -self.bound));
        }
        let subsets = binomial(rows.len() as u128, dim as u128);
        if subsets > VERTEX_MAX_SUBSETS {
            return Err(AssessmentError::TooLarge {
                limit: format!("{VERTEX_MAX_SUBSETS} constraint subsets"),
                actual: format!("{subsets} subsets"),
            });
        }
        let scale = self.bound.max(1.0);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut pick: Vec<usize> = (0..dim).collect();
        loop {
            let a = DMatrix::from_fn(dim, dim, |i, j| rows[pick[i]].0[j]);
            let b = DVector::from_fn(dim, |i, _| rows[pick[i]].1);
            if let Some(x) = a.clone().lu().solve(&b) {
                let ok_system = (&a * &x - &b).amax() <= 1e-9 * scale;
                let feasible = rows
                    .iter()
                    .all(|(c, rhs)| dot(c, x.as_slice()) >= rhs - 1e-9 * scale);
                if ok_system && feasible {
                    let key: Vec<i64> = x.iter().map(|v| (v / (1e-9 * scale)).round() as i64).collect();
                    if seen.insert(key) {
                        let clean: Vec<f64> = x.iter().map(|v| if v.abs() < 1e-12 * scale { 0.0 } else { *v }).collect();
                        out.push(self.unflatten(&clean));
                    }
                }
            }
            if !next_combination(&mut pick, rows.len()) {
                break;
            }
        }
        Ok(out)
    }

    /// Rejection sampling of feasible rewards, uniformly from the box.
    pub fn sample<R: Rng>(&self, n: usize, max_attempts: usize, rng: &mut R) -> Vec<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for _ in 0..max_attempts {
            if out.len() == n {
                break;
            }
            let r: Vec<Vec<f64>> = (0..self.n_states)
                .map(|_| {
                    (0..self.n_actions)
                        .map(|_| rng.random_range(-self.bound..=self.bound))
                        .collect()
                })
                .collect();
            if self.contains(&r, 0.0) {
                out.push(r);
            }
        }
        out
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Linear optimality conditions on the reward for `policy` to be optimal.
/// The reward table of `mdp` is ignored; only its dynamics are used.
pub fn feasible_rewards_irl(
    mdp: &Mdp,
    policy: &Policy,
    beta: f64,
    bound: f64,
) -> Result<FeasibleRewardSet, AssessmentError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(AssessmentError::InvalidDiscount(format!("beta = {beta}")));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(bad(format!("bound must be positive, got {bound}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.len() != ns || policy.0.iter().any(|&a| a >= na) {
        return Err(bad("policy must give a valid action for every state"));
    }
    let mut system = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for (t, p) in mdp.transition(s, policy.action(s)).iter().enumerate() {
            system[(s, t)] -= beta * p;
        }
    }
    let inverse = system
        .try_inverse()
        .ok_or_else(|| AssessmentError::InfeasibleNumerics("I - beta P_pi is singular".into()))?;

    let mut constraints = Vec::new();
    for s in 0..ns {
        let chosen = policy.action(s);
        for a in 0..na {
            if a == chosen {
                continue;
            }
            let mut coeffs = vec![0.0; ns * na];
            coeffs[s * na + chosen] += 1.0;
            coeffs[s * na + a] -= 1.0;
            let diff: Vec<f64> = mdp
                .transition(s, chosen)
                .iter()
                .zip(mdp.transition(s, a))
                .map(|(p, q)| p - q)
                .collect();
            // beta * diff^T (I - beta P_pi)^-1 applied to r_pi
            for j in 0..ns {
                let weight: f64 = (0..ns).map(|i| diff[i] * inverse[(i, j)]).sum();
                coeffs[j * na + policy.action(j)] += beta * weight;
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(AssessmentError::InfeasibleNumerics(format!(
                    "non-finite coefficient for state {s}, action {a}"
                )));
            }
            constraints.push(OptimalityConstraint {
                state: s,
                action: a,
                coefficients: coeffs,
            });
        }
    }
    let zero = vec![0.0; ns * na];
    let zero_feasible = constraints.iter().all(|c| dot(&c.coefficients, &zero) >= 0.0);
    Ok(FeasibleRewardSet {
        n_states: ns,
        n_actions: na,
        bound,
        policy: policy.clone(),
        constraints,
        zero_feasible,
    })
}

// ---------------------------------------------------------------------------
// Maximum-entropy IRL

/// Result of maximum-entropy IRL.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntFit {
    pub estimate: RewardEstimate,
    /// Mean per-demonstration log-likelihood at the returned weights.
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

fn check_demos(mdp: &Mdp, features: &FeatureMap, demos: &[Trajectory]) -> Result<(), AssessmentError> {
    features.check_compatible(mdp)?;
    if demos.is_empty() {
        return Err(bad("no demonstrations"));
    }
    for (i, d) in demos.iter().enumerate() {
        features.check_trajectory(d).map_err(|e| bad(format!("demo {i}: {e}")))?;
        for w in d.0.windows(2) {
            let ((s, a), (next, _)) = (w[0], w[1]);
            if mdp.transition(s, a)[next] <= 0.0 {
                return Err(bad(format!("demo {i}: transition ({s}, {a}) -> {next} has zero probability")));
            }
        }
    }
    Ok(())
}

/// Mean log-likelihood of the demonstrations and its exact gradient.
///
/// Each demonstration of length `L` starting in `s0` is scored under the
/// maximum-entropy trajectory model `P(tau) ∝ exp(theta . f(tau)) * prod P(s'|s,a)`
/// over all length-`L` trajectories from `s0`, where
/// `f(tau) = sum_t beta^t phi(s_t, a_t)`. The gradient is the empirical
/// feature count minus the model's expected feature count, obtained from a
/// backward soft-value pass and a forward state-visitation pass.
pub fn maxent_objective(
    mdp: &Mdp,
    features: &FeatureMap,
    demos: &[Trajectory],
    beta: f64,
    theta: &[f64],
) -> Result<(f64, Vec<f64>), AssessmentError> {
    check_demos(mdp, features, demos)?;
    if theta.len() != features.dim() {
        return Err(bad("weight dimension does not match the feature map"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(AssessmentError::InvalidDiscount(format!("beta = {beta}")));
    }
    let mut groups: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ll = 0.0;
    let mut grad = vec![0.0; features.dim()];
    for d in demos {
        *groups.entry((d.len(), d.0[0].0)).or_insert(0) += 1;
        let mut w = 1.0;
        for (t, &(s, a)) in d.0.iter().enumerate() {
            let phi = features.phi(s, a);
            ll += w * dot(theta, phi);
            axpy(&mut grad, w, phi);
            if let Some(&(next, _)) = d.0.get(t + 1) {
                ll += mdp.transition(s, a)[next].ln();
            }
            w *= beta;
        }
    }
    let mut passes: BTreeMap<usize, SoftPass> = BTreeMap::new();
    for (&(len, start), &count) in &groups {
        let pass = passes
            .entry(len)
            .or_insert_with(|| SoftPass::backward(mdp, features, theta, beta, len));
        let (log_z, expected) = pass.forward(mdp, features, beta, start);
        ll -= count as f64 * log_z;
        axpy(&mut grad, -(count as f64), &expected);
    }
    let n = demos.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((ll / n, grad))
}

struct SoftPass {
    /// Log partition function from (t, s) to the end of the horizon.
    w: Vec<Vec<f64>>,
    /// Log of summed weight for choosing `a` at (t, s).
    q: Vec<Vec<Vec<f64>>>,
    /// Discounted reward `beta^t theta . phi(s, a)`.
    r: Vec<Vec<Vec<f64>>>,
}

impl SoftPass {
    fn backward(mdp: &Mdp, features: &FeatureMap, theta: &[f64], beta: f64, horizon: usize) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut w = vec![vec![0.0; ns]; horizon];
        let mut q = vec![vec![vec![0.0; na]; ns]; horizon];
        let mut r = vec![vec![vec![0.0; na]; ns]; horizon];
        for t in (0..horizon).rev() {
            let disc = beta.powi(t as i32);
            for s in 0..ns {
                for a in 0..na {
                    let reward = disc * features.reward(theta, s, a);
                    r[t][s][a] = reward;
                    q[t][s][a] = if t + 1 == horizon {
                        reward
                    } else {
                        let next = &w[t + 1];
                        let p = mdp.transition(s, a);
                        reward
                            + log_sum_exp(
                                (0..ns).filter(|&j| p[j] > 0.0).map(|j| p[j].ln() + next[j]),
                            )
                    };
                }
                w[t][s] = log_sum_exp(q[t][s].iter().copied());
            }
        }
        SoftPass { w, q, r }
    }

    /// Log partition function and expected discounted feature count from `start`.
    fn forward(&self, mdp: &Mdp, features: &FeatureMap, beta: f64, start: usize) -> (f64, Vec<f64>) {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let horizon = self.w.len();
        let mut dist = vec![0.0; ns];
        dist[start] = 1.0;
        let mut expected = vec![0.0; features.dim()];
        for t in 0..horizon {
            let disc = beta.powi(t as i32);
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                if dist[s] == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let pi = (self.q[t][s][a] - self.w[t][s]).exp();
                    let mass = dist[s] * pi;
                    if mass == 0.0 {
                        continue;
                    }
                    axpy(&mut expected, mass * disc, features.phi(s, a));
                    if t + 1 < horizon {
                        let log_norm = self.q[t][s][a] - self.r[t][s][a];
                        let p = mdp.transition(s, a);
                        for j in 0..ns {
                            if p[j] > 0.0 {
                                next[j] += mass * p[j] * (self.w[t + 1][j] - log_norm).exp();
                            }
                        }
                    }
                }
            }
            dist = next;
        }
        (self.w[0][start], expected)
    }
}

/// Gradient ascent on the max-ent demonstration likelihood from `theta = 0`.
pub fn maxent_irl(
    mdp: &Mdp,
    features: &FeatureMap,
    demos: &[Trajectory],
    beta: f64,
    learn_rate: f64,
    iters: usize,
) -> Result<MaxEntFit, AssessmentError> {
    if !(learn_rate.is_finite() && learn_rate > 0.0) || iters == 0 {
        return Err(bad("learn_rate must be positive and iters at least 1"));
    }
    let mut theta = vec![0.0; features.dim()];
    let mut initial = None;
    for iteration in 0..iters {
        let (_, grad) = maxent_objective(mdp, features, demos, beta, &theta)?;
        let g = norm(&grad);
        let init = *initial.get_or_insert(g);
        if init > 0.0 && g > 10.0 * init {
            return Err(AssessmentError::DivergenceDetected { iteration, norm: g, initial: init });
        }
        axpy(&mut theta, learn_rate, &grad);
    }
    let (log_likelihood, grad) = maxent_objective(mdp, features, demos, beta, &theta)?;
    Ok(MaxEntFit {
        estimate: RewardEstimate {
            params: RewardParams::Linear(theta),
            method: RewardMethod::MaxEntIrl,
            discount_posterior: None,
        },
        log_likelihood,
        gradient_norm: norm(&grad),
        iterations: iters,
    })
}

// ---------------------------------------------------------------------------
// Preference judgments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub left: Trajectory,
    pub right: Trajectory,
    pub preferred: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceFit {
    pub estimate: RewardEstimate,
    /// Mean Bradley-Terry log-likelihood at the returned weights.
    pub log_likelihood: f64,
}

/// Undiscounted return `sum_t theta . phi(s_t, a_t)`.
pub fn trajectory_return(features: &FeatureMap, theta: &[f64], t: &Trajectory) -> f64 {
    dot(theta, &features.feature_sum(t))
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry fit: `P(left preferred) = logistic(Return(left) - Return(right))`,
/// maximized by fixed-step gradient ascent from `theta = 0`.
pub fn fit_preference_reward(
    features: &FeatureMap,
    comparisons: &[PairwiseComparison],
    learn_rate: f64,
    iters: usize,
) -> Result<PreferenceFit, AssessmentError> {
    if comparisons.is_empty() {
        return Err(bad("no comparisons"));
    }
    if !(learn_rate.is_finite() && learn_rate > 0.0) {
        return Err(bad("learn_rate must be positive"));
    }
    let mut diffs = Vec::with_capacity(comparisons.len());
    for (i, c) in comparisons.iter().enumerate() {
        features.check_trajectory(&c.left).map_err(|e| bad(format!("comparison {i}: {e}")))?;
        features.check_trajectory(&c.right).map_err(|e| bad(format!("comparison {i}: {e}")))?;
        if c.left == c.right {
            return Err(bad(format!("comparison {i} compares a trajectory with itself")));
        }
        let mut d = features.feature_sum(&c.left);
        axpy(&mut d, -1.0, &features.feature_sum(&c.right));
        if c.preferred == Side::Right {
            d.iter_mut().for_each(|x| *x = -*x);
        }
        diffs.push(d);
    }
    if diffs.iter().all(|d| d.iter().all(|x| x.abs() <= 1e-12)) {
        return Err(AssessmentError::DegenerateData);
    }
    let n = diffs.len() as f64;
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let mut ll = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for d in &diffs {
            let margin = dot(theta, d);
            ll += log_sigmoid(margin);
            axpy(&mut grad, sigmoid(-margin), d);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (ll / n, grad)
    };
    let mut theta = vec![0.0; features.dim()];
    for _ in 0..iters {
        let (_, grad) = objective(&theta);
        axpy(&mut theta, learn_rate, &grad);
    }
    let (log_likelihood, _) = objective(&theta);
    Ok(PreferenceFit {
        estimate: RewardEstimate {
            params: RewardParams::Linear(theta),
            method: RewardMethod::PreferenceFit,
            discount_posterior: None,
        },
        log_likelihood,
    })
}

// ---------------------------------------------------------------------------
// Discount inference

/// Default Boltzmann temperature for behavior likelihoods.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Grid posterior over discount factors for observed stationary behavior.
///
/// The likelihood is Boltzmann-rational in the optimal Q-values at each grid
/// point: `prod_s exp(Q(s, b(s))/tau) / sum_a exp(Q(s, a)/tau)`. The grid may
/// be given in any order (values must be distinct); the posterior is sorted.
pub fn infer_discount(
    mdp: &Mdp,
    behavior: &Policy,
    grid: &[f64],
    prior: &[f64],
    temperature: f64,
) -> Result<DiscountPosterior, AssessmentError> {
    if grid.is_empty() {
        return Err(AssessmentError::EmptyGrid);
    }
    if let Some(b) = grid.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(AssessmentError::InvalidDiscount(format!("grid value {b} outside (0, 1)")));
    }
    if prior.len() != grid.len() {
        return Err(AssessmentError::InvalidPrior(format!(
            "{} prior entries for {} grid points",
            prior.len(),
            grid.len()
        )));
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(AssessmentError::InvalidPrior("negative or non-finite entry".into()));
    }
    let mass: f64 = prior.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(AssessmentError::InvalidPrior(format!("prior sums to {mass}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(bad(format!("temperature must be positive, got {temperature}")));
    }
    if behavior.len() != mdp.n_states() || behavior.0.iter().any(|&a| a >= mdp.n_actions()) {
        return Err(bad("behavior must give a valid action for every state"));
    }
    let mut pairs: Vec<(f64, f64)> = grid.iter().copied().zip(prior.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(AssessmentError::InvalidDiscount("grid values must be distinct".into()));
    }

    let mut log_post = Vec::with_capacity(pairs.len());
    for &(beta, p) in &pairs {
        let vf = mdp::solve(mdp, beta)?;
        let ll: f64 = (0..mdp.n_states())
            .map(|s| {
                let row = &vf.q[s];
                row[behavior.action(s)] / temperature
                    - log_sum_exp(row.iter().map(|q| q / temperature))
            })
            .sum();
        log_post.push(if p > 0.0 { p.ln() + ll } else { f64::NEG_INFINITY });
    }
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(DiscountPosterior {
        entries: pairs.iter().zip(&weights).map(|(&(b, _), w)| (b, w / z)).collect(),
    })
}

/// Advice computed with more patience than the principal's fitted discount.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientAdvice {
    pub advised: Policy,
    pub myopic: Policy,
    /// States where the advised action differs from the myopic one.
    pub divergent_states: Vec<usize>,
}

pub fn patient_recommendation(
    mdp: &Mdp,
    reward: &RewardEstimate,
    features: Option<&FeatureMap>,
    beta_fit: f64,
    beta_advice: f64,
) -> Result<PatientAdvice, AssessmentError> {
    for b in [beta_fit, beta_advice] {
        if !(b > 0.0 && b < 1.0) {
            return Err(AssessmentError::InvalidDiscount(format!("{b} outside (0, 1)")));
        }
    }
    if beta_advice < beta_fit {
        return Err(AssessmentError::InvalidDiscount(format!(
            "advice discount {beta_advice} is less patient than the fitted {beta_fit}"
        )));
    }
    let table = reward.reward_table(features)?;
    let model = mdp.with_reward(table)?;
    let myopic = mdp::solve(&model, beta_fit)?.policy;
    let advised = mdp::solve(&model, beta_advice)?.policy;
    let divergent_states = (0..mdp.n_states())
        .filter(|&s| advised.action(s) != myopic.action(s))
        .collect();
    Ok(PatientAdvice {
        advised,
        myopic,
        divergent_states,
    })
}

// ---------------------------------------------------------------------------
// Prudent-investor template

/// Ridge added to a covariance whose smallest eigenvalue is at most 1e-9.
pub const RIDGE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PortfolioDoc", into = "PortfolioDoc")]
pub struct PortfolioProblem {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    lambda: f64,
    min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioDoc {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl TryFrom<PortfolioDoc> for PortfolioProblem {
    type Error = AssessmentError;

    fn try_from(d: PortfolioDoc) -> Result<Self, Self::Error> {
        PortfolioProblem::new(d.mu, d.sigma, d.lambda)
    }
}

impl From<PortfolioProblem> for PortfolioDoc {
    fn from(p: PortfolioProblem) -> Self {
        PortfolioDoc {
            mu: p.mu,
            sigma: p.sigma,
            lambda: p.lambda,
        }
    }
}

impl PortfolioProblem {
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: f64) -> Result<Self, AssessmentError> {
        let n = mu.len();
        if n == 0 {
            return Err(bad("no assets"));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(bad(format!("risk aversion must be positive, got {lambda}")));
        }
        if sigma.len() != n || sigma.iter().any(|r| r.len() != n) {
            return Err(AssessmentError::InvalidCovariance(format!("covariance must be {n}x{n}")));
        }
        if mu.iter().chain(sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(bad("non-finite input"));
        }
        let scale = sigma.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (sigma[i][j] - sigma[j][i]).abs() > 1e-12 * scale {
                    return Err(AssessmentError::InvalidCovariance(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| sigma[i][j]);
        let min_eigenvalue = SymmetricEigen::new(m).eigenvalues.min();
        if min_eigenvalue < -1e-9 {
            return Err(AssessmentError::InvalidCovariance(format!(
                "not positive semi-definite (min eigenvalue {min_eigenvalue})"
            )));
        }
        Ok(PortfolioProblem {
            mu,
            sigma,
            lambda,
            min_eigenvalue,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Mean-variance objective `mu.w - lambda w' Sigma w`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let quad: f64 = (0..w.len())
            .map(|i| w[i] * dot(&self.sigma[i], w))
            .sum();
        dot(&self.mu, w) - self.lambda * quad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioWeights {
    pub weights: Vec<f64>,
    /// Ridge added to the covariance diagonal (0 when none was needed).
    pub ridge: f64,
    pub objective: f64,
}

/// Unconstrained mean-variance optimum `w = Sigma^-1 mu / (2 lambda)`.
pub fn prudent_investor_weights(problem: &PortfolioProblem) -> Result<PortfolioWeights, AssessmentError> {
    let n = problem.mu.len();
    let ridge = if problem.min_eigenvalue > 1e-9 { 0.0 } else { RIDGE_EPSILON };
    let m = DMatrix::from_fn(n, n, |i, j| problem.sigma[i][j] + if i == j { ridge } else { 0.0 });
    let chol = m.cholesky().ok_or(AssessmentError::SingularCovariance)?;
    let rhs = DVector::from_iterator(n, problem.mu.iter().map(|m| m / (2.0 * problem.lambda)));
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(AssessmentError::SingularCovariance);
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    Ok(PortfolioWeights {
        objective: problem.objective(&weights),
        weights,
        ridge,
    })
}
