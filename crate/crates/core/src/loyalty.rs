//! Loyalty checks: order conditions between utility tables (alignment,
//! disgorgement, no-conflict) and information-flow duties over a MACID
//! (confidentiality, disclosure).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::macid::{
    self, DecisionRule, Macid, MacidError, NodeKind, PolicyProfile, EXHAUSTIVE_PROFILE_LIMIT,
};

/// Mutual information at or below this many bits counts as zero.
pub const MI_TOL: f64 = 1e-9;
/// Tolerance for value-of-information and expected-utility comparisons.
pub const EU_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoyaltyError {
    #[error("outcome spaces differ: only left {only_left:?}, only right {only_right:?}")]
    OutcomeSpaceMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("utility for outcome `{0}` is not finite")]
    NonFinite(String),
    #[error(transparent)]
    Macid(#[from] MacidError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The principal's own interests.
    PrincipalTrue,
    /// The agent's utility while bound as a fiduciary.
    AgentFiduciary,
    /// The agent's utility absent fiduciary obligations.
    AgentNonFiduciary,
    /// The objective the deployed system optimizes.
    SystemObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityTable {
    pub role: Role,
    pub values: BTreeMap<String, f64>,
}

impl UtilityTable {
    pub fn new(role: Role, values: &[(&str, f64)]) -> Self {
        UtilityTable {
            role,
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    Aligned,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentVerdict {
    pub status: AlignmentStatus,
    /// Ordered outcome pairs `(c1, c2)` for which the condition fails.
    pub witnesses: Vec<(String, String)>,
}

impl AlignmentVerdict {
    fn from_witnesses(witnesses: Vec<(String, String)>) -> Self {
        AlignmentVerdict {
            status: if witnesses.is_empty() {
                AlignmentStatus::Aligned
            } else {
                AlignmentStatus::Violation
            },
            witnesses,
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.status == AlignmentStatus::Aligned
    }
}

fn same_space(a: &UtilityTable, b: &UtilityTable) -> Result<(), LoyaltyError> {
    for (k, v) in a.values.iter().chain(&b.values) {
        if !v.is_finite() {
            return Err(LoyaltyError::NonFinite(k.clone()));
        }
    }
    let left: BTreeSet<&String> = a.values.keys().collect();
    let right: BTreeSet<&String> = b.values.keys().collect();
    if left != right {
        return Err(LoyaltyError::OutcomeSpaceMismatch {
            only_left: left.difference(&right).map(|s| s.to_string()).collect(),
            only_right: right.difference(&left).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

/// Ordered pairs `(c1, c2)` with `premise(c1) > premise(c2)` that fail `holds`.
fn pair_witnesses(
    premise: &UtilityTable,
    target: &UtilityTable,
    holds: impl Fn(f64, f64) -> bool,
) -> Result<AlignmentVerdict, LoyaltyError> {
    same_space(premise, target)?;
    let mut witnesses = Vec::new();
    for (c1, &p1) in &premise.values {
        for (c2, &p2) in &premise.values {
            if p1 > p2 && !holds(target.values[c1], target.values[c2]) {
                witnesses.push((c1.clone(), c2.clone()));
            }
        }
    }
    Ok(AlignmentVerdict::from_witnesses(witnesses))
}

/// Every strict preference of the principal is a strict preference of the
/// fiduciary agent.
pub fn alignment_check(principal: &UtilityTable, agent_fiduciary: &UtilityTable) -> Result<AlignmentVerdict, LoyaltyError> {
    pair_witnesses(principal, agent_fiduciary, |a, b| a > b)
}

/// Wherever the agent would profit without fiduciary obligations, its
/// fiduciary utility does not prefer that outcome.
pub fn disgorgement_check(
    agent_nonfiduciary: &UtilityTable,
    agent_fiduciary: &UtilityTable,
) -> Result<AlignmentVerdict, LoyaltyError> {
    pair_witnesses(agent_nonfiduciary, agent_fiduciary, |a, b| a <= b)
}

/// The system objective preserves every strict preference of the aggregated
/// principal utility.
pub fn no_conflict_check(
    system_objective: &UtilityTable,
    aggregated_principal: &UtilityTable,
) -> Result<AlignmentVerdict, LoyaltyError> {
    pair_witnesses(aggregated_principal, system_objective, |a, b| a > b)
}

fn expect_kind(macid: &Macid, id: &str, kinds: &[NodeKind]) -> Result<(), LoyaltyError> {
    let node = macid.node(id)?;
    if !kinds.contains(&node.kind) {
        return Err(MacidError::NodeKindMismatch {
            node: id.to_string(),
            expected: kinds[0],
            actual: node.kind,
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidentialityVerdict {
    pub passed: bool,
    pub mutual_information_bits: f64,
}

/// Passes when the report carries no information about the secret under the
/// audited profile.
pub fn confidentiality_check(
    macid: &Macid,
    profile: &PolicyProfile,
    report_node: &str,
    secret_node: &str,
) -> Result<ConfidentialityVerdict, LoyaltyError> {
    confidentiality_check_with_tol(macid, profile, report_node, secret_node, MI_TOL)
}

pub fn confidentiality_check_with_tol(
    macid: &Macid,
    profile: &PolicyProfile,
    report_node: &str,
    secret_node: &str,
    tol: f64,
) -> Result<ConfidentialityVerdict, LoyaltyError> {
    expect_kind(macid, report_node, &[NodeKind::Decision])?;
    expect_kind(macid, secret_node, &[NodeKind::Chance, NodeKind::Decision])?;
    let joint = macid::joint_distribution(macid, profile)?;
    let bits = macid::mutual_information(&joint.pair(report_node, secret_node)?)?;
    Ok(ConfidentialityVerdict {
        passed: bits <= tol,
        mutual_information_bits: bits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisclosureVerdict {
    pub passed: bool,
    pub material: bool,
    pub value_of_information: f64,
    pub mutual_information_bits: f64,
    pub principal_expected_utility: f64,
    /// Principal's best expected utility when the report is constant.
    pub silent_baseline: f64,
    pub note: String,
}

/// Principal's best response at `decision` with every other rule fixed.
fn best_response_value(macid: &Macid, profile: &PolicyProfile, decision: &str, agent: &str) -> Result<f64, LoyaltyError> {
    let rows = macid.parent_rows(decision)?;
    let size = macid.node(decision)?.domain.len();
    let count = (size as u128).checked_pow(rows as u32).unwrap_or(u128::MAX);
    if count > EXHAUSTIVE_PROFILE_LIMIT {
        return Err(MacidError::SearchSpaceTooLarge {
            size: count,
            limit: EXHAUSTIVE_PROFILE_LIMIT,
        }
        .into());
    }
    let mut best = f64::NEG_INFINITY;
    let mut actions = vec![0usize; rows];
    loop {
        let trial = profile.clone().with_rule(DecisionRule::deterministic(decision, &actions, size));
        best = best.max(macid::expected_utility(macid, &trial, agent)?);
        let mut i = rows;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < size {
                break;
            }
            actions[i] = 0;
        }
    }
}

/// If the material node has positive value of information for the
/// principal's decision, the report must carry information about it and leave
/// the principal no worse off than a silent report. A sufficient condition,
/// not a necessary one.
pub fn disclosure_check(
    macid: &Macid,
    profile: &PolicyProfile,
    report_node: &str,
    material_node: &str,
    principal_decision: &str,
) -> Result<DisclosureVerdict, LoyaltyError> {
    disclosure_check_with_tol(macid, profile, report_node, material_node, principal_decision, MI_TOL)
}

/// Same as [`disclosure_check`] with one tolerance for information and utility.
pub fn disclosure_check_with_tol(
    macid: &Macid,
    profile: &PolicyProfile,
    report_node: &str,
    material_node: &str,
    principal_decision: &str,
    tol: f64,
) -> Result<DisclosureVerdict, LoyaltyError> {
    expect_kind(macid, report_node, &[NodeKind::Decision])?;
    expect_kind(macid, material_node, &[NodeKind::Chance])?;
    expect_kind(macid, principal_decision, &[NodeKind::Decision])?;
    let principal = macid
        .node(principal_decision)?
        .owner
        .clone()
        .expect("decision nodes have owners");

    let voi = macid::value_of_information(macid, principal_decision, material_node)?;
    let joint = macid::joint_distribution(macid, profile)?;
    let bits = macid::mutual_information(&joint.pair(report_node, material_node)?)?;
    let eu = macid::expected_utility(macid, profile, &principal)?;

    let silent_rows = macid.parent_rows(report_node)?;
    let silent_size = macid.node(report_node)?.domain.len();
    let silent = profile
        .clone()
        .with_rule(DecisionRule::deterministic(report_node, &vec![0; silent_rows], silent_size));
    let baseline = best_response_value(macid, &silent, principal_decision, &principal)?;

    let material = voi > tol;
    let (passed, note) = if !material {
        (true, format!("`{material_node}` is not material to `{principal_decision}`"))
    } else if bits <= tol {
        (false, format!("`{report_node}` carries no information about material `{material_node}`"))
    } else if eu < baseline - tol {
        (false, format!("principal expected utility {eu} is below the silent baseline {baseline}"))
    } else {
        (true, format!("`{report_node}` informs `{principal_decision}` about `{material_node}`"))
    };
    Ok(DisclosureVerdict {
        passed,
        material,
        value_of_information: voi,
        mutual_information_bits: bits,
        principal_expected_utility: eu,
        silent_baseline: baseline,
        note,
    })
}
