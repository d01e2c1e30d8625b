//! Care diagnostics: how much the data moved a binary decision away from its
//! prior, how far deployment inputs drift from training inputs, and the
//! assembled prudence findings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Status;

/// `|ln ratio|` below this flags the prior as dominant.
pub const DEFAULT_DOMINANCE_THRESHOLD: f64 = 0.1;

pub const PRIOR_DOMINANCE_NOTE: &str =
    "likelihood ratio is close to 1: the training data barely moved the decision away from the prior";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CareError {
    #[error("likelihoods must lie in (0, 1], got {0} and {1}")]
    ZeroLikelihood(f64, f64),
    #[error("prior must lie in [0, 1], got {0}")]
    InvalidPrior(f64),
    #[error("dominance threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("support mismatch: {0}")]
    SupportMismatch(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("care standard `{requested}` is not the one declared by the context (`{declared}`)")]
    UnknownStandard { requested: String, declared: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryEvidence {
    /// `P(h = 1)`.
    pub prior: f64,
    /// `P(D | h = 1)`.
    pub likelihood1: f64,
    /// `P(D | h = 0)`.
    pub likelihood0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InductiveBiasReport {
    pub ratio: f64,
    pub posterior: f64,
    pub prior_dominated: bool,
    /// Prior is exactly 0 or 1, so no data can move the posterior.
    pub degenerate_prior: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn inductive_bias_diagnostic(evidence: &BinaryEvidence, threshold: f64) -> Result<InductiveBiasReport, CareError> {
    let BinaryEvidence { prior, likelihood1, likelihood0 } = *evidence;
    if !(prior >= 0.0 && prior <= 1.0) {
        return Err(CareError::InvalidPrior(prior));
    }
    if !(likelihood1 > 0.0 && likelihood1 <= 1.0 && likelihood0 > 0.0 && likelihood0 <= 1.0) {
        return Err(CareError::ZeroLikelihood(likelihood1, likelihood0));
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(CareError::InvalidThreshold(threshold));
    }
    let ratio = likelihood1 / likelihood0;
    let posterior = if ratio == 1.0 {
        prior
    } else {
        prior * ratio / (prior * ratio + (1.0 - prior))
    };
    let prior_dominated = ratio.ln().abs() < threshold;
    Ok(InductiveBiasReport {
        ratio,
        posterior,
        prior_dominated,
        degenerate_prior: prior == 0.0 || prior == 1.0,
        note: prior_dominated.then(|| PRIOR_DOMINANCE_NOTE.to_string()),
    })
}

/// Training and deployment distributions over one declared support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionPair {
    pub support: Vec<String>,
    pub train: Vec<f64>,
    pub deploy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftScore {
    /// `KL(deploy || train)` in nats.
    Finite { kl_nats: f64 },
    /// Deployment puts mass where training had none.
    AbsoluteContinuityViolation { points: Vec<String> },
}

fn check_distribution(name: &str, p: &[f64]) -> Result<(), CareError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CareError::InvalidDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CareError::InvalidDistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

pub fn distribution_shift_score(pair: &DistributionPair) -> Result<ShiftScore, CareError> {
    let n = pair.support.len();
    if n == 0 {
        return Err(CareError::SupportMismatch("empty support".into()));
    }
    if pair.train.len() != n || pair.deploy.len() != n {
        return Err(CareError::SupportMismatch(format!(
            "support has {n} points, train {} and deploy {}",
            pair.train.len(),
            pair.deploy.len()
        )));
    }
    let unique: BTreeSet<&String> = pair.support.iter().collect();
    if unique.len() != n {
        return Err(CareError::SupportMismatch("duplicate support point".into()));
    }
    check_distribution("train", &pair.train)?;
    check_distribution("deploy", &pair.deploy)?;
    let points: Vec<String> = (0..n)
        .filter(|&i| pair.deploy[i] > 0.0 && pair.train[i] == 0.0)
        .map(|i| pair.support[i].clone())
        .collect();
    if !points.is_empty() {
        return Ok(ShiftScore::AbsoluteContinuityViolation { points });
    }
    let kl: f64 = pair
        .deploy
        .iter()
        .zip(&pair.train)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum();
    Ok(ShiftScore::Finite { kl_nats: kl.max(0.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CareFinding {
    InductiveBias { id: String, report: InductiveBiasReport },
    DistributionShift { id: String, score: ShiftScore },
    Attestation { id: String, attested: bool, note: String },
}

impl CareFinding {
    pub fn id(&self) -> &str {
        match self {
            CareFinding::InductiveBias { id, .. }
            | CareFinding::DistributionShift { id, .. }
            | CareFinding::Attestation { id, .. } => id,
        }
    }

    pub fn status(&self) -> Status {
        match self {
            CareFinding::InductiveBias { report, .. } if report.prior_dominated => Status::Warn,
            CareFinding::DistributionShift {
                score: ShiftScore::AbsoluteContinuityViolation { .. },
                ..
            } => Status::Warn,
            CareFinding::Attestation { attested: false, .. } => Status::Fail,
            _ => Status::Pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CareEntry {
    pub id: String,
    pub declared: bool,
    pub status: Status,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finding: Option<CareFinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrudenceReport {
    pub standard: String,
    pub status: Status,
    pub entries: Vec<CareEntry>,
}

fn finding_message(f: &CareFinding) -> String {
    match f {
        CareFinding::InductiveBias { report, .. } => match &report.note {
            Some(note) => format!("ratio {}: {note}", report.ratio),
            None => format!("ratio {}, posterior {}", report.ratio, report.posterior),
        },
        CareFinding::DistributionShift { score, .. } => match score {
            ShiftScore::Finite { kl_nats } => format!("KL(deploy || train) = {kl_nats} nats"),
            ShiftScore::AbsoluteContinuityViolation { points } => {
                format!("deployment mass outside training support at {points:?}")
            }
        },
        CareFinding::Attestation { attested, note, .. } => {
            if *attested {
                format!("attested: {note}")
            } else {
                format!("not attested: {note}")
            }
        }
    }
}

/// One entry per declared check (missing evidence fails) followed by any
/// undeclared findings. The step status is the worst entry; with no entries
/// at all it is Warn.
pub fn prudence_report(
    context_standard: &str,
    standard: &str,
    declared_checks: &[String],
    findings: &[CareFinding],
) -> Result<PrudenceReport, CareError> {
    if standard != context_standard {
        return Err(CareError::UnknownStandard {
            requested: standard.to_string(),
            declared: context_standard.to_string(),
        });
    }
    let mut entries = Vec::new();
    let mut used = BTreeSet::new();
    for check in declared_checks {
        let matching: Vec<&CareFinding> = findings.iter().filter(|f| f.id() == check).collect();
        if matching.is_empty() {
            entries.push(CareEntry {
                id: check.clone(),
                declared: true,
                status: Status::Fail,
                message: format!("declared check `{check}` has no evidence"),
                finding: None,
            });
        }
        for f in matching {
            used.insert(f.id().to_string());
            entries.push(CareEntry {
                id: check.clone(),
                declared: true,
                status: f.status(),
                message: finding_message(f),
                finding: Some(f.clone()),
            });
        }
    }
    for f in findings.iter().filter(|f| !used.contains(f.id())) {
        entries.push(CareEntry {
            id: f.id().to_string(),
            declared: false,
            status: f.status(),
            message: finding_message(f),
            finding: Some(f.clone()),
        });
    }
    let status = entries
        .iter()
        .map(|e| e.status)
        .max()
        .unwrap_or(Status::Warn);
    Ok(PrudenceReport {
        standard: standard.to_string(),
        status,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(prior: f64, l1: f64, l0: f64) -> BinaryEvidence {
        BinaryEvidence { prior, likelihood1: l1, likelihood0: l0 }
    }

    #[test]
    fn bayes_examples() {
        let r = inductive_bias_diagnostic(&ev(0.3, 0.4, 0.4), DEFAULT_DOMINANCE_THRESHOLD).unwrap();
        assert_eq!((r.ratio, r.posterior, r.prior_dominated), (1.0, 0.3, true));
        assert!(r.note.is_some());
        let r = inductive_bias_diagnostic(&ev(0.5, 0.9, 0.1), DEFAULT_DOMINANCE_THRESHOLD).unwrap();
        assert!((r.ratio - 9.0).abs() < 1e-12);
        assert!((r.posterior - 0.9).abs() < 1e-12);
        assert!(!r.prior_dominated);
        let r = inductive_bias_diagnostic(&ev(1.0, 0.01, 0.9), DEFAULT_DOMINANCE_THRESHOLD).unwrap();
        assert_eq!(r.posterior, 1.0);
        assert!(r.degenerate_prior);
        assert!(matches!(
            inductive_bias_diagnostic(&ev(0.5, 0.0, 0.1), 0.1),
            Err(CareError::ZeroLikelihood(..))
        ));
    }

    fn pair(train: &[f64], deploy: &[f64]) -> DistributionPair {
        DistributionPair {
            support: (0..train.len()).map(|i| format!("x{i}")).collect(),
            train: train.to_vec(),
            deploy: deploy.to_vec(),
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(
            distribution_shift_score(&pair(&[0.2, 0.8], &[0.2, 0.8])).unwrap(),
            ShiftScore::Finite { kl_nats: 0.0 }
        );
        let ShiftScore::Finite { kl_nats } = distribution_shift_score(&pair(&[0.9, 0.1], &[0.5, 0.5])).unwrap() else {
            panic!()
        };
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_nats - expected).abs() < 1e-12);
        assert!((kl_nats - 0.5108).abs() < 1e-4);
        assert!(matches!(
            distribution_shift_score(&pair(&[1.0, 0.0], &[0.5, 0.5])).unwrap(),
            ShiftScore::AbsoluteContinuityViolation { .. }
        ));
        assert!(matches!(
            distribution_shift_score(&pair(&[1.0], &[0.5, 0.5])),
            Err(CareError::SupportMismatch(_))
        ));
    }

    #[test]
    fn prudence_statuses() {
        let ok = CareFinding::InductiveBias {
            id: "bias".into(),
            report: inductive_bias_diagnostic(&ev(0.5, 0.9, 0.1), 0.1).unwrap(),
        };
        let dominated = CareFinding::InductiveBias {
            id: "bias".into(),
            report: inductive_bias_diagnostic(&ev(0.5, 0.5, 0.5), 0.1).unwrap(),
        };
        let declared = vec!["bias".to_string()];
        assert_eq!(prudence_report("s", "s", &declared, &[ok]).unwrap().status, Status::Pass);
        assert_eq!(prudence_report("s", "s", &declared, &[]).unwrap().status, Status::Fail);
        assert_eq!(prudence_report("s", "s", &declared, &[dominated]).unwrap().status, Status::Warn);
        assert!(matches!(
            prudence_report("s", "t", &declared, &[]),
            Err(CareError::UnknownStandard { .. })
        ));
    }
}
