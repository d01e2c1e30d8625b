//! Social context of a deployment: purposes, roles, information norms,
//! principal classes, and the bundled catalog of subsidiary duties.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("invalid context: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("unknown context label `{label}`; nearest is `{suggestion}`")]
    UnknownContextLabel { label: String, suggestion: String },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmissionPrinciple {
    Confidentiality,
    Disclosure,
    Attestation(String),
}

/// MACID nodes a norm is checked against.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormBinding {
    pub report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_decision: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Norm {
    pub sender: String,
    pub receiver: String,
    pub subject: String,
    pub attribute: String,
    pub principle: TransmissionPrinciple,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<NormBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub name: String,
    pub purposes: Vec<String>,
    pub roles: Vec<RoleSpec>,
    #[serde(default)]
    pub norms: Vec<Norm>,
    pub care_standard: String,
    #[serde(default)]
    pub subsidiary_duties: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationshipModel {
    BestInterests,
    Obedience,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalClassSpec {
    pub id: String,
    pub role: String,
    /// 1 is the highest priority.
    pub rank: u32,
    pub model: RelationshipModel,
}

/// Every schema violation in `spec`, each with a path. Empty means valid.
pub fn validate_context(spec: &ContextSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.name.trim().is_empty() {
        out.push(violation("name", "must not be empty"));
    }
    if spec.purposes.is_empty() {
        out.push(violation("purposes", "at least one purpose is required"));
    }
    let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in spec.roles.iter().enumerate() {
        if let Some(&j) = first_seen.get(r.id.as_str()) {
            out.push(violation(
                format!("roles[{i}].id"),
                format!("duplicate role id `{}` (also roles[{j}].id)", r.id),
            ));
        } else {
            first_seen.insert(&r.id, i);
        }
    }
    for (i, n) in spec.norms.iter().enumerate() {
        for (field, role) in [("sender", &n.sender), ("receiver", &n.receiver), ("subject", &n.subject)] {
            if !first_seen.contains_key(role.as_str()) {
                out.push(violation(format!("norms[{i}].{field}"), format!("undeclared role `{role}`")));
            }
        }
        let b = n.binding.as_ref();
        match n.principle {
            TransmissionPrinciple::Confidentiality => {
                if b.is_none_or(|b| b.secret.is_none()) {
                    out.push(violation(
                        format!("norms[{i}].binding"),
                        "confidentiality norms must bind a report and a secret node",
                    ));
                }
            }
            TransmissionPrinciple::Disclosure => {
                if b.is_none_or(|b| b.material.is_none() || b.principal_decision.is_none()) {
                    out.push(violation(
                        format!("norms[{i}].binding"),
                        "disclosure norms must bind report, material and principal_decision nodes",
                    ));
                }
            }
            TransmissionPrinciple::Attestation(_) => {}
        }
    }
    if spec.care_standard.trim().is_empty() {
        out.push(violation("care_standard", "must not be empty"));
    }
    let keys: BTreeSet<&str> = catalog().entries().map(|e| e.key.as_str()).collect();
    for (i, key) in spec.subsidiary_duties.iter().enumerate() {
        if !keys.contains(key.as_str()) {
            out.push(violation(format!("subsidiary_duties[{i}]"), format!("`{key}` is not a catalog key")));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identification {
    /// Classes sorted stably by rank.
    pub classes: Vec<PrincipalClassSpec>,
    /// Class ids whose interests are alignment targets.
    pub best_interests: Vec<String>,
    /// Class ids served by obedience only; not alignment targets.
    pub obedience: Vec<String>,
}

pub fn identify_principals(spec: &ContextSpec, classes: &[PrincipalClassSpec]) -> Result<Identification, ContextError> {
    let mut problems = validate_context(spec);
    let roles: BTreeSet<&str> = spec.roles.iter().map(|r| r.id.as_str()).collect();
    let mut ids = BTreeSet::new();
    for (i, c) in classes.iter().enumerate() {
        if !ids.insert(c.id.as_str()) {
            problems.push(violation(format!("principals[{i}].id"), format!("duplicate class id `{}`", c.id)));
        }
        if !roles.contains(c.role.as_str()) {
            problems.push(violation(format!("principals[{i}].role"), format!("undeclared role `{}`", c.role)));
        }
    }
    if classes.is_empty() {
        problems.push(violation("principals", "at least one principal class is required"));
    }
    let ranks: BTreeSet<u32> = classes.iter().map(|c| c.rank).collect();
    if !ranks.is_empty() && ranks.iter().copied().ne(1..=ranks.len() as u32) {
        problems.push(violation(
            "principals",
            format!("ranks {ranks:?} must be contiguous starting at 1"),
        ));
    }
    if !classes.is_empty() && classes.iter().all(|c| c.model != RelationshipModel::BestInterests) {
        problems.push(violation("principals", "at least one class must use the best-interests model"));
    }
    if !problems.is_empty() {
        return Err(ContextError::InvalidSpec(problems));
    }
    let mut sorted = classes.to_vec();
    sorted.sort_by_key(|c| c.rank);
    let pick = |m: RelationshipModel| sorted.iter().filter(|c| c.model == m).map(|c| c.id.clone()).collect();
    Ok(Identification {
        best_interests: pick(RelationshipModel::BestInterests),
        obedience: pick(RelationshipModel::Obedience),
        classes: sorted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyKind {
    Loyalty,
    Care,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckBinding {
    /// Checked by the named library operation.
    Automated(String),
    Attestation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsidiaryDutyEntry {
    pub key: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_context: Option<String>,
    pub duty: String,
    pub kind: DutyKind,
    /// The duty concerns information flows.
    pub information_flow: bool,
    /// The context is proposed in the literature, not established in law.
    #[serde(default)]
    pub speculative: bool,
    pub check: CheckBinding,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogContext {
    label: String,
    speculative: bool,
    entries: Vec<SubsidiaryDutyEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    schema_version: u32,
    contexts: Vec<CatalogContext>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub schema_version: u32,
    contexts: Vec<(String, Vec<SubsidiaryDutyEntry>)>,
}

impl Catalog {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.contexts.iter().map(|(l, _)| l.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = &SubsidiaryDutyEntry> {
        self.contexts.iter().flat_map(|(_, e)| e)
    }

    pub fn entry(&self, key: &str) -> Option<&SubsidiaryDutyEntry> {
        self.entries().find(|e| e.key == key)
    }
}

const CATALOG_JSON: &str = include_str!("../data/subsidiary_duties.json");

/// The bundled catalog.
pub fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let file: CatalogFile = serde_json::from_str(CATALOG_JSON).expect("bundled catalog is valid JSON");
        Catalog {
            schema_version: file.schema_version,
            contexts: file
                .contexts
                .into_iter()
                .map(|c| {
                    let entries = c
                        .entries
                        .into_iter()
                        .map(|e| SubsidiaryDutyEntry {
                            context: c.label.clone(),
                            speculative: c.speculative,
                            ..e
                        })
                        .collect();
                    (c.label, entries)
                })
                .collect(),
        }
    })
}

/// Entries for a context label (case-insensitive).
pub fn catalog_lookup(label: &str) -> Result<Vec<SubsidiaryDutyEntry>, ContextError> {
    let wanted = label.trim().to_lowercase();
    let cat = catalog();
    if let Some((_, entries)) = cat.contexts.iter().find(|(l, _)| l.to_lowercase() == wanted) {
        return Ok(entries.clone());
    }
    let suggestion = cat
        .labels()
        .max_by(|a, b| {
            let sa = strsim::normalized_levenshtein(&wanted, &a.to_lowercase());
            let sb = strsim::normalized_levenshtein(&wanted, &b.to_lowercase());
            sa.total_cmp(&sb).then_with(|| b.cmp(a))
        })
        .unwrap_or_default()
        .to_string();
    Err(ContextError::UnknownContextLabel {
        label: label.to_string(),
        suggestion,
    })
}
