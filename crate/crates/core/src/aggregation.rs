//! Combining the interests of several principals: approval voting, Pareto
//! fronts, lexicographic priority selection, exhaustive manipulation search
//! and impartiality checks.
//!
//! Ties are always reported. Where a single answer is required the lowest
//! index wins and the output says so.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("unknown option `{0}`")]
    UnknownOption(String),
    #[error("option universe is empty")]
    NoOptions,
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("invalid utility matrix: {0}")]
    InvalidMatrix(String),
    #[error("priority class {0} is empty")]
    EmptyClass(usize),
    #[error("invalid priority classes: {0}")]
    InvalidClasses(String),
    #[error("manipulation search supports at most 4 voters and 4 options, got {voters} and {options}")]
    SearchSpaceTooLarge { voters: usize, options: usize },
    #[error("invalid voting rule: {0}")]
    InvalidRule(String),
    #[error("weight for `{0}` is negative or not finite")]
    NegativeWeight(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalBallot {
    pub voter: String,
    pub approved: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApprovalOutcome {
    pub winners: BTreeSet<String>,
    pub counts: BTreeMap<String, usize>,
    /// More than one option shares the top count.
    pub tied: bool,
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a String>) -> Result<(), AggregationError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AggregationError::Duplicate(id.clone()));
        }
    }
    Ok(())
}

pub fn approval_winners(ballots: &[ApprovalBallot], options: &[String]) -> Result<ApprovalOutcome, AggregationError> {
    if options.is_empty() {
        return Err(AggregationError::NoOptions);
    }
    check_unique(options)?;
    let mut counts: BTreeMap<String, usize> = options.iter().map(|o| (o.clone(), 0)).collect();
    for b in ballots {
        for o in &b.approved {
            *counts
                .get_mut(o)
                .ok_or_else(|| AggregationError::UnknownOption(o.clone()))? += 1;
        }
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let winners: BTreeSet<String> = counts
        .iter()
        .filter(|(_, &c)| c == top)
        .map(|(o, _)| o.clone())
        .collect();
    Ok(ApprovalOutcome {
        tied: winners.len() > 1,
        winners,
        counts,
    })
}

/// `values[p][o]` is principal `p`'s utility for option `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDoc", into = "MatrixDoc")]
pub struct UtilityMatrix {
    principals: Vec<String>,
    options: Vec<String>,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub principals: Vec<String>,
    pub options: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl TryFrom<MatrixDoc> for UtilityMatrix {
    type Error = AggregationError;

    fn try_from(d: MatrixDoc) -> Result<Self, Self::Error> {
        UtilityMatrix::new(d.principals, d.options, d.values)
    }
}

impl From<UtilityMatrix> for MatrixDoc {
    fn from(m: UtilityMatrix) -> Self {
        MatrixDoc {
            principals: m.principals,
            options: m.options,
            values: m.values,
        }
    }
}

impl UtilityMatrix {
    pub fn new(principals: Vec<String>, options: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, AggregationError> {
        if options.is_empty() {
            return Err(AggregationError::NoOptions);
        }
        if principals.is_empty() {
            return Err(AggregationError::InvalidMatrix("no principals".into()));
        }
        check_unique(&principals)?;
        check_unique(&options)?;
        if values.len() != principals.len() {
            return Err(AggregationError::InvalidMatrix(format!(
                "{} rows for {} principals",
                values.len(),
                principals.len()
            )));
        }
        for (p, row) in principals.iter().zip(&values) {
            if row.len() != options.len() {
                return Err(AggregationError::InvalidMatrix(format!("row `{p}` has {} entries", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(AggregationError::InvalidMatrix(format!("row `{p}` has a non-finite entry")));
            }
        }
        Ok(UtilityMatrix {
            principals,
            options,
            values,
        })
    }

    pub fn principals(&self) -> &[String] {
        &self.principals
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn value(&self, principal: usize, option: usize) -> f64 {
        self.values[principal][option]
    }

    /// Utility vector of one option across principals.
    pub fn column(&self, option: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[option]).collect()
    }

    pub fn option_index(&self, id: &str) -> Option<usize> {
        self.options.iter().position(|o| o == id)
    }

    pub fn principal_index(&self, id: &str) -> Option<usize> {
        self.principals.iter().position(|p| p == id)
    }
}

/// `a` is at least as good as `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Indices of non-dominated options, ascending.
///
/// Options are visited in lexicographically decreasing order of their utility
/// vectors; a dominator always comes first in that order, and so does a
/// non-dominated option dominating it, so each option is only compared with
/// the front found so far.
pub fn pareto_front(matrix: &UtilityMatrix) -> Vec<usize> {
    let columns: Vec<Vec<f64>> = (0..matrix.options.len()).map(|o| matrix.column(o)).collect();
    let mut order: Vec<usize> = (0..columns.len()).collect();
    order.sort_by(|&a, &b| {
        columns[b]
            .iter()
            .zip(&columns[a])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<usize> = Vec::new();
    for o in order {
        if !front.iter().any(|&f| dominates(&columns[f], &columns[o])) {
            front.push(o);
        }
    }
    front.sort_unstable();
    front
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassScore {
    #[default]
    Sum,
    Min,
}

/// Principal ids grouped by priority, highest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorityClasses(pub Vec<Vec<String>>);

/// Relative tolerance for treating class scores as tied.
pub const SCORE_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LexSelection {
    pub option: usize,
    pub option_id: String,
    /// Options still tied after the last class.
    pub final_ties: Vec<usize>,
    /// The choice among `final_ties` fell to the lowest index.
    pub tie_break: bool,
    /// `class_scores[k][o]`: score of option `o` for class `k`.
    pub class_scores: Vec<Vec<f64>>,
}

pub fn lexicographic_select(
    matrix: &UtilityMatrix,
    classes: &PriorityClasses,
    score: ClassScore,
) -> Result<LexSelection, AggregationError> {
    let mut seen = BTreeSet::new();
    let mut index_classes = Vec::new();
    for (k, class) in classes.0.iter().enumerate() {
        if class.is_empty() {
            return Err(AggregationError::EmptyClass(k));
        }
        let mut members = Vec::new();
        for p in class {
            let i = matrix
                .principal_index(p)
                .ok_or_else(|| AggregationError::InvalidClasses(format!("`{p}` is not in the matrix")))?;
            if !seen.insert(i) {
                return Err(AggregationError::InvalidClasses(format!("`{p}` appears in more than one class")));
            }
            members.push(i);
        }
        index_classes.push(members);
    }
    if let Some(p) = (0..matrix.principals.len()).find(|i| !seen.contains(i)) {
        return Err(AggregationError::InvalidClasses(format!(
            "`{}` is not in any class",
            matrix.principals[p]
        )));
    }

    let n_options = matrix.options.len();
    let class_scores: Vec<Vec<f64>> = index_classes
        .iter()
        .map(|members| {
            (0..n_options)
                .map(|o| {
                    let vals = members.iter().map(|&p| matrix.values[p][o]);
                    match score {
                        ClassScore::Sum => vals.sum(),
                        ClassScore::Min => vals.fold(f64::INFINITY, f64::min),
                    }
                })
                .collect()
        })
        .collect();

    let mut candidates: Vec<usize> = (0..n_options).collect();
    for scores in &class_scores {
        let best = candidates.iter().map(|&o| scores[o]).fold(f64::NEG_INFINITY, f64::max);
        let scale = candidates.iter().map(|&o| scores[o].abs()).fold(0.0f64, f64::max);
        let tol = SCORE_TIE_RTOL * scale;
        candidates.retain(|&o| scores[o] >= best - tol);
    }
    let option = candidates[0];
    Ok(LexSelection {
        option,
        option_id: matrix.options[option].clone(),
        tie_break: candidates.len() > 1,
        final_ties: candidates,
        class_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingRule {
    Borda,
    Plurality,
    Dictator(usize),
}

impl VotingRule {
    /// Winner of a ranked profile; each ballot lists option indices best first.
    pub fn winner(&self, profile: &[Vec<usize>], n_options: usize) -> usize {
        let mut scores = vec![0usize; n_options];
        match *self {
            VotingRule::Dictator(v) => return profile[v][0],
            VotingRule::Plurality => {
                for ballot in profile {
                    scores[ballot[0]] += 1;
                }
            }
            VotingRule::Borda => {
                for ballot in profile {
                    for (pos, &o) in ballot.iter().enumerate() {
                        scores[o] += n_options - 1 - pos;
                    }
                }
            }
        }
        let top = *scores.iter().max().expect("at least one option");
        scores.iter().position(|&s| s == top).expect("max exists")
    }
}

pub const MANIPULATION_MAX_VOTERS: usize = 4;
pub const MANIPULATION_MAX_OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manipulation {
    /// Sincere rankings, best option first.
    pub profile: Vec<Vec<usize>>,
    pub voter: usize,
    pub insincere_ballot: Vec<usize>,
    pub sincere_outcome: usize,
    pub manipulated_outcome: usize,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).expect("successor exists");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// First profitable insincere ballot over all ranked profiles.
///
/// Profiles are visited in lexicographic order of their per-voter permutation
/// indices (voter 0 most significant), then voters ascending, then insincere
/// ballots in lexicographic order.
pub fn find_manipulation(
    rule: VotingRule,
    voters: usize,
    options: usize,
) -> Result<Option<Manipulation>, AggregationError> {
    if voters > MANIPULATION_MAX_VOTERS || options > MANIPULATION_MAX_OPTIONS {
        return Err(AggregationError::SearchSpaceTooLarge { voters, options });
    }
    if voters == 0 || options == 0 {
        return Err(AggregationError::InvalidRule("need at least one voter and one option".into()));
    }
    if let VotingRule::Dictator(v) = rule {
        if v >= voters {
            return Err(AggregationError::InvalidRule(format!("dictator {v} out of range")));
        }
    }
    let perms = permutations(options);
    let mut digits = vec![0usize; voters];
    loop {
        let profile: Vec<Vec<usize>> = digits.iter().map(|&d| perms[d].clone()).collect();
        let sincere = rule.winner(&profile, options);
        for voter in 0..voters {
            let rank = |o: usize| profile[voter].iter().position(|&x| x == o).expect("permutation");
            let mut trial = profile.clone();
            for (k, ballot) in perms.iter().enumerate() {
                if k == digits[voter] {
                    continue;
                }
                trial[voter] = ballot.clone();
                let outcome = rule.winner(&trial, options);
                if rank(outcome) < rank(sincere) {
                    return Ok(Some(Manipulation {
                        profile,
                        voter,
                        insincere_ballot: ballot.clone(),
                        sincere_outcome: sincere,
                        manipulated_outcome: outcome,
                    }));
                }
            }
        }
        // advance the mixed-radix counter, last voter fastest
        let mut i = voters;
        loop {
            if i == 0 {
                return Ok(None);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < perms.len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImpartialityViolation {
    SelfInterest { agent: String, weight: f64 },
    ExceedsCap { principal: String, share: f64, cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpartialityVerdict {
    pub passed: bool,
    pub violations: Vec<ImpartialityViolation>,
}

/// The agent must carry zero weight. With a `cap`, a principal's normalized
/// share must not exceed it; a declared `favored` id narrows the cap check to
/// that principal. Unequal weights alone are not a violation.
pub fn impartiality_check(
    weights: &BTreeMap<String, f64>,
    agent: &str,
    favored: Option<&str>,
    cap: Option<f64>,
) -> Result<ImpartialityVerdict, AggregationError> {
    if let Some((id, _)) = weights.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
        return Err(AggregationError::NegativeWeight(id.clone()));
    }
    let mut violations = Vec::new();
    if let Some(&w) = weights.get(agent) {
        if w > 0.0 {
            violations.push(ImpartialityViolation::SelfInterest {
                agent: agent.to_string(),
                weight: w,
            });
        }
    }
    if let Some(cap) = cap {
        let total: f64 = weights.values().sum();
        for (id, &w) in weights {
            if id == agent || favored.is_some_and(|f| f != id) {
                continue;
            }
            let share = if total > 0.0 { w / total } else { 0.0 };
            if share > cap {
                violations.push(ImpartialityViolation::ExceedsCap {
                    principal: id.clone(),
                    share,
                    cap,
                });
            }
        }
    }
    Ok(ImpartialityVerdict {
        passed: violations.is_empty(),
        violations,
    })
}
