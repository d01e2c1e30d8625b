//! Scenario files, the six-step audit pipeline, and report rendering.
//!
//! Steps run in a fixed order: context, identification, assessment,
//! aggregation, loyalty, care. A failing check is recorded as a finding and
//! the pipeline continues; a step is skipped only when its section is absent
//! or an earlier step left its inputs undefined.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{
    self, ApprovalBallot, ClassScore, PriorityClasses, UtilityMatrix, VotingRule,
};
use crate::assessment::{
    self, FeatureMap, PairwiseComparison, PortfolioProblem, RewardEstimate, RewardMethod, RewardParams, Side,
    Trajectory,
};
use crate::care::{self, BinaryEvidence, CareFinding, DistributionPair};
use crate::context::{
    self, CheckBinding, ContextSpec, DutyKind, Identification, PrincipalClassSpec, TransmissionPrinciple,
};
use crate::loyalty::{self, Role, UtilityTable};
use crate::macid::{self, Macid, NodeKind, PolicyProfile};
use crate::mdp::{self, DelayedReward, DiscountSpec, Mdp, Policy};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DISCLAIMER: &str = "These checks cover only what the scenario models. A clean report is evidence \
     toward compliance, not proof of it.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Skipped,
    Warn,
    Fail,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Skipped => "SKIPPED",
            Status::Warn => "WARN",
            Status::Fail => "FAIL",
        }
    }

    /// 0 for Pass, 1 for Warn (and Skipped), 2 for Fail.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Skipped | Status::Warn => 1,
            Status::Fail => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Context,
    Identification,
    Assessment,
    Aggregation,
    Loyalty,
    Care,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::Context,
        Step::Identification,
        Step::Assessment,
        Step::Aggregation,
        Step::Loyalty,
        Step::Care,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn title(self) -> &'static str {
        match self {
            Step::Context => "Context",
            Step::Identification => "Identification",
            Step::Assessment => "Assessment",
            Step::Aggregation => "Aggregation",
            Step::Loyalty => "Loyalty",
            Step::Care => "Care",
        }
    }

    pub fn rubric(self) -> &'static str {
        match self {
            Step::Context => "sector, purposes, roles, information norms",
            Step::Identification => "principal classes and priority",
            Step::Assessment => "estimated interests, discounting, legal standards",
            Step::Aggregation => "combining principals, conflicts, impartiality",
            Step::Loyalty => "alignment, subsidiary loyalty duties",
            Step::Care => "contextual prudence, inductive bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub check: String,
    pub status: Status,
    pub message: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub evidence: BTreeMap<String, Value>,
}

fn finding(check: &str, status: Status, message: impl Into<String>, evidence: Value) -> Finding {
    let evidence = match evidence {
        Value::Object(map) => map.into_iter().collect(),
        Value::Null => BTreeMap::new(),
        other => BTreeMap::from([("value".to_string(), other)]),
    };
    Finding {
        check: check.to_string(),
        status,
        message: message.into(),
        evidence,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: Step,
    pub number: u8,
    pub rubric: String,
    pub status: Status,
    pub findings: Vec<Finding>,
}

impl StepRecord {
    fn new(step: Step, findings: Vec<Finding>) -> Self {
        let status = findings.iter().map(|f| f.status).max().unwrap_or(Status::Pass);
        StepRecord {
            step,
            number: step.number(),
            rubric: step.rubric().to_string(),
            status,
            findings,
        }
    }

    fn skipped(step: Step, cause: &str, evidence: Value) -> Self {
        StepRecord::new(step, vec![finding("skipped", Status::Skipped, cause, evidence)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub scenario: String,
    pub input_digest: String,
    pub seed: u64,
    pub tolerance: f64,
    pub disclaimer: String,
    pub status: Status,
    pub steps: Vec<StepRecord>,
}

impl AuditReport {
    pub fn step(&self, step: Step) -> &StepRecord {
        &self.steps[step as usize]
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

// ---------------------------------------------------------------------------
// Scenario file format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub id: String,
    #[serde(default)]
    pub version: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    #[serde(default)]
    pub mdp: Option<Mdp>,
    #[serde(default)]
    pub macid: Option<Macid>,
}

/// `(state, action)` labels.
pub type LabeledTrajectory = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledComparison {
    pub left: LabeledTrajectory,
    pub right: LabeledTrajectory,
    pub preferred: Side,
}

fn default_learn_rate() -> f64 {
    0.1
}

fn default_iters() -> usize {
    200
}

fn default_bound() -> f64 {
    1.0
}

fn default_samples() -> usize {
    100
}

fn default_temperature() -> f64 {
    assessment::DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    MaxentIrl {
        #[serde(default)]
        features: Option<FeatureMap>,
        demonstrations: Vec<LabeledTrajectory>,
        beta: f64,
        #[serde(default = "default_learn_rate")]
        learn_rate: f64,
        #[serde(default = "default_iters")]
        iters: usize,
    },
    FeasibleSetIrl {
        policy: Vec<String>,
        beta: f64,
        #[serde(default = "default_bound")]
        bound: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    PreferenceFit {
        features: FeatureMap,
        comparisons: Vec<LabeledComparison>,
        #[serde(default = "default_learn_rate")]
        learn_rate: f64,
        #[serde(default = "default_iters")]
        iters: usize,
    },
    LegalStandard {
        portfolio: PortfolioProblem,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountConfig {
    /// Observed action per state.
    pub behavior: Vec<String>,
    pub grid: Vec<f64>,
    /// Uniform when omitted.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdviceConfig {
    /// Posterior argmax of the discount inference when omitted.
    #[serde(default)]
    pub beta_fit: Option<f64>,
    pub beta_advice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConsistencyConfig {
    pub discount: DiscountSpec,
    pub early: DelayedReward,
    pub late: DelayedReward,
    pub horizon: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentConfig {
    pub reward: RewardConfig,
    #[serde(default)]
    pub discount: Option<DiscountConfig>,
    #[serde(default)]
    pub advice: Option<AdviceConfig>,
    #[serde(default)]
    pub time_consistency: Option<TimeConsistencyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalConfig {
    pub options: Vec<String>,
    pub ballots: Vec<ApprovalBallot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpartialityConfig {
    pub agent: String,
    #[serde(default)]
    pub favored: Option<String>,
    #[serde(default)]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulationConfig {
    pub rule: VotingRule,
    pub voters: usize,
    pub options: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    #[serde(default)]
    pub approval: Option<ApprovalConfig>,
    /// Rows are principal class ids.
    #[serde(default)]
    pub utilities: Option<UtilityMatrix>,
    #[serde(default)]
    pub class_score: ClassScore,
    /// Per-class weights for the aggregated utility (default 1), plus any
    /// weight the system gives itself.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub system_choice: Option<String>,
    #[serde(default)]
    pub impartiality: Option<ImpartialityConfig>,
    #[serde(default)]
    pub manipulation: Option<ManipulationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attestation {
    pub id: String,
    pub attested: bool,
    #[serde(default)]
    pub note: String,
}

fn default_rounds() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Equilibrium {
        #[serde(default = "default_rounds")]
        max_rounds: usize,
    },
    /// Chosen action label per parent row, keyed by decision node.
    Rules(BTreeMap<String, Vec<String>>),
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig::Equilibrium {
            max_rounds: default_rounds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoyaltyConfig {
    #[serde(default)]
    pub tables: Vec<UtilityTable>,
    #[serde(default)]
    pub profile: ProfileConfig,
    /// Keyed by subsidiary-duty catalog key.
    #[serde(default)]
    pub attestations: Vec<Attestation>,
}

fn default_threshold() -> f64 {
    care::DEFAULT_DOMINANCE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasInput {
    pub id: String,
    pub evidence: BinaryEvidence,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftInput {
    pub id: String,
    pub distributions: DistributionPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CareConfig {
    pub standard: String,
    /// Check ids that must have evidence.
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub inductive_bias: Vec<BiasInput>,
    #[serde(default)]
    pub distribution_shift: Vec<ShiftInput>,
    /// Keyed by check id or subsidiary-duty catalog key.
    #[serde(default)]
    pub attestations: Vec<Attestation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub context: ContextSpec,
    pub principals: Vec<PrincipalClassSpec>,
    #[serde(default)]
    pub world: World,
    #[serde(default)]
    pub assessment: Option<AssessmentConfig>,
    #[serde(default)]
    pub aggregation: Option<AggregationConfig>,
    #[serde(default)]
    pub loyalty: Option<LoyaltyConfig>,
    #[serde(default)]
    pub care: Option<CareConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    References(Vec<ScenarioError>),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// A parsed scenario with the digest of its canonical form.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub digest: String,
}

/// sha256 of the compact JSON rendering with object keys sorted.
pub fn canonical_digest(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values always serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .fold(String::from("sha256:"), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn load_scenario(text: &str) -> Result<LoadedScenario, ScenarioError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| schema(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    if let Some(v) = value.get("schema_version") {
        if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) {
            return Err(schema("schema_version", format!("unsupported version {v}; expected {SCHEMA_VERSION}")));
        }
    }
    let digest = canonical_digest(&value);
    let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    let problems = validate_references(&scenario);
    if !problems.is_empty() {
        return Err(ScenarioError::References(problems));
    }
    Ok(LoadedScenario { scenario, digest })
}

fn state_index(mdp: &Mdp, label: &str) -> Option<usize> {
    mdp.state_index(label)
}

fn trajectory(mdp: &Mdp, steps: &[(String, String)]) -> Result<Trajectory, String> {
    steps
        .iter()
        .map(|(s, a)| {
            let si = state_index(mdp, s).ok_or_else(|| format!("unknown state `{s}`"))?;
            let ai = mdp.action_index(a).ok_or_else(|| format!("unknown action `{a}`"))?;
            Ok((si, ai))
        })
        .collect::<Result<Vec<_>, String>>()
        .map(Trajectory)
}

fn policy(mdp: &Mdp, actions: &[String]) -> Result<Policy, String> {
    if actions.len() != mdp.n_states() {
        return Err(format!("{} actions for {} states", actions.len(), mdp.n_states()));
    }
    actions
        .iter()
        .map(|a| mdp.action_index(a).ok_or_else(|| format!("unknown action `{a}`")))
        .collect::<Result<Vec<_>, String>>()
        .map(Policy)
}

fn profile_rules(macid: &Macid, rules: &BTreeMap<String, Vec<String>>) -> Result<BTreeMap<String, Vec<usize>>, (String, String)> {
    let mut out = BTreeMap::new();
    for (node, labels) in rules {
        let n = macid.node(node).map_err(|e| (node.clone(), e.to_string()))?;
        if n.kind != NodeKind::Decision {
            return Err((node.clone(), format!("`{node}` is not a decision node")));
        }
        let rows = macid.parent_rows(node).map_err(|e| (node.clone(), e.to_string()))?;
        if labels.len() != rows {
            return Err((node.clone(), format!("{} entries for {rows} parent rows", labels.len())));
        }
        let actions = labels
            .iter()
            .map(|l| {
                n.domain
                    .iter()
                    .position(|d| d == l)
                    .ok_or_else(|| (node.clone(), format!("`{l}` is not in the domain of `{node}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(node.clone(), actions);
    }
    Ok(out)
}

/// Cross-section reference checks: every state, action and node id named by
/// a config section must exist in the declared world model.
pub fn validate_references(s: &Scenario) -> Vec<ScenarioError> {
    let mut out = Vec::new();
    if let Some(a) = &s.assessment {
        let needs_mdp = !matches!(a.reward, RewardConfig::LegalStandard { .. })
            || a.discount.is_some()
            || a.advice.is_some();
        match (&s.world.mdp, needs_mdp) {
            (None, true) => out.push(schema("world.mdp", "required by the assessment section")),
            (Some(m), _) => {
                match &a.reward {
                    RewardConfig::MaxentIrl { demonstrations, .. } => {
                        for (i, d) in demonstrations.iter().enumerate() {
                            if let Err(e) = trajectory(m, d) {
                                out.push(schema(format!("assessment.reward.demonstrations[{i}]"), e));
                            }
                        }
                    }
                    RewardConfig::FeasibleSetIrl { policy: p, .. } => {
                        if let Err(e) = policy(m, p) {
                            out.push(schema("assessment.reward.policy", e));
                        }
                    }
                    RewardConfig::PreferenceFit { comparisons, .. } => {
                        for (i, c) in comparisons.iter().enumerate() {
                            for (side, t) in [("left", &c.left), ("right", &c.right)] {
                                if let Err(e) = trajectory(m, t) {
                                    out.push(schema(format!("assessment.reward.comparisons[{i}].{side}"), e));
                                }
                            }
                        }
                    }
                    RewardConfig::LegalStandard { .. } => {}
                }
                if let Some(d) = &a.discount {
                    if let Err(e) = policy(m, &d.behavior) {
                        out.push(schema("assessment.discount.behavior", e));
                    }
                }
            }
            (None, false) => {}
        }
    }
    let bound_norms: Vec<(usize, &context::NormBinding)> = s
        .context
        .norms
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.binding.as_ref().map(|b| (i, b)))
        .collect();
    match &s.world.macid {
        None if !bound_norms.is_empty() => {
            out.push(schema("world.macid", "required by norms with node bindings"));
        }
        None => {
            if let Some(LoyaltyConfig {
                profile: ProfileConfig::Rules(_),
                ..
            }) = &s.loyalty
            {
                out.push(schema("world.macid", "required by loyalty.profile"));
            }
        }
        Some(m) => {
            for (i, b) in bound_norms {
                let nodes = [
                    ("report", Some(&b.report)),
                    ("secret", b.secret.as_ref()),
                    ("material", b.material.as_ref()),
                    ("principal_decision", b.principal_decision.as_ref()),
                ];
                for (field, id) in nodes {
                    if let Some(id) = id {
                        if m.node(id).is_err() {
                            out.push(schema(format!("context.norms[{i}].binding.{field}"), format!("unknown node `{id}`")));
                        }
                    }
                }
            }
            if let Some(LoyaltyConfig {
                profile: ProfileConfig::Rules(rules),
                ..
            }) = &s.loyalty
            {
                if let Err((node, e)) = profile_rules(m, rules) {
                    out.push(schema(format!("loyalty.profile.rules.{node}"), e));
                }
            }
        }
    }
    if let Some(l) = &s.loyalty {
        let mut roles = BTreeSet::new();
        for (i, t) in l.tables.iter().enumerate() {
            if !roles.insert(t.role) {
                out.push(schema(format!("loyalty.tables[{i}].role"), "duplicate role"));
            }
        }
    }
    if let Some(agg) = &s.aggregation {
        let classes: BTreeSet<&str> = s.principals.iter().map(|p| p.id.as_str()).collect();
        if let Some(u) = &agg.utilities {
            for (i, p) in u.principals().iter().enumerate() {
                if !classes.contains(p.as_str()) {
                    out.push(schema(format!("aggregation.utilities.principals[{i}]"), format!("`{p}` is not a principal class")));
                }
            }
            if let Some(c) = &agg.system_choice {
                if u.option_index(c).is_none() {
                    out.push(schema("aggregation.system_choice", format!("`{c}` is not an option")));
                }
            }
        }
        let agent = agg.impartiality.as_ref().map(|i| i.agent.as_str());
        for k in agg.weights.keys() {
            if !classes.contains(k.as_str()) && Some(k.as_str()) != agent {
                out.push(schema(format!("aggregation.weights.{k}"), "not a principal class or the agent"));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { seed: None, tol: DEFAULT_TOL }
    }
}

/// Values passed from earlier steps to later ones.
#[derive(Default)]
struct Carry {
    identification: Option<Identification>,
    aggregated: Option<UtilityTable>,
    /// Library operations that produced a verdict.
    ops_run: BTreeSet<&'static str>,
}

pub fn run_audit(loaded: &LoadedScenario, opts: AuditOptions) -> AuditReport {
    let s = &loaded.scenario;
    let seed = opts.seed.or(s.metadata.seed).unwrap_or(0);
    let mut carry = Carry::default();
    let steps = vec![
        context_step(s),
        identification_step(s, &mut carry),
        assessment_step(s, seed, &mut carry),
        aggregation_step(s, &mut carry),
        loyalty_step(s, opts.tol, &mut carry),
        care_step(s, &carry),
    ];
    let worst = steps.iter().map(|r| r.status).max().unwrap_or(Status::Pass);
    AuditReport {
        tool: "fiduciary".into(),
        version: TOOL_VERSION.into(),
        schema_version: SCHEMA_VERSION,
        scenario: s.metadata.id.clone(),
        input_digest: loaded.digest.clone(),
        seed,
        tolerance: opts.tol,
        disclaimer: DISCLAIMER.into(),
        status: if worst == Status::Skipped { Status::Warn } else { worst },
        steps,
    }
}

fn context_step(s: &Scenario) -> StepRecord {
    let ctx = &s.context;
    let mut findings: Vec<Finding> = context::validate_context(ctx)
        .into_iter()
        .map(|v| finding("context.schema", Status::Fail, v.message, json!({ "path": v.path })))
        .collect();
    if findings.is_empty() {
        findings.push(finding(
            "context.schema",
            Status::Pass,
            format!("context `{}` is well formed", ctx.name),
            json!({ "purposes": ctx.purposes.len(), "roles": ctx.roles.len(), "norms": ctx.norms.len() }),
        ));
    }
    for (i, n) in ctx.norms.iter().enumerate() {
        let how = match (&n.principle, &n.binding) {
            (TransmissionPrinciple::Attestation(name), _) => format!("attestation `{name}`"),
            (_, Some(b)) => format!("checked against report node `{}`", b.report),
            (_, None) => "unbound".to_string(),
        };
        findings.push(finding(
            "context.norm",
            Status::Pass,
            format!("{} -> {} about {} ({}): {how}", n.sender, n.receiver, n.subject, n.attribute),
            json!({ "index": i, "principle": n.principle }),
        ));
    }
    let cat = context::catalog();
    for key in &ctx.subsidiary_duties {
        if let Some(e) = cat.entry(key) {
            let mut msg = format!("{} / {}", e.context, e.duty);
            if e.speculative {
                msg.push_str(" (proposed context, not settled law)");
            }
            findings.push(finding(
                "context.duty",
                Status::Pass,
                msg,
                json!({ "key": key, "kind": e.kind, "information_flow": e.information_flow, "check": e.check }),
            ));
        }
    }
    StepRecord::new(Step::Context, findings)
}

fn identification_step(s: &Scenario, carry: &mut Carry) -> StepRecord {
    match context::identify_principals(&s.context, &s.principals) {
        Ok(id) => {
            let findings = id
                .classes
                .iter()
                .map(|c| {
                    let msg = match c.model {
                        context::RelationshipModel::BestInterests => format!("`{}` served in its best interests", c.id),
                        context::RelationshipModel::Obedience => {
                            format!("`{}` served by obedience only; not an alignment target", c.id)
                        }
                    };
                    finding(
                        "identification.class",
                        Status::Pass,
                        msg,
                        json!({ "class": c.id, "role": c.role, "rank": c.rank, "model": c.model }),
                    )
                })
                .collect();
            carry.identification = Some(id);
            StepRecord::new(Step::Identification, findings)
        }
        Err(context::ContextError::InvalidSpec(violations)) => StepRecord::new(
            Step::Identification,
            violations
                .into_iter()
                .map(|v| finding("identification.schema", Status::Fail, v.message, json!({ "path": v.path })))
                .collect(),
        ),
        Err(e) => StepRecord::new(
            Step::Identification,
            vec![finding("identification.schema", Status::Fail, e.to_string(), json!({ "error": e.to_string() }))],
        ),
    }
}

fn fail_error(check: &str, e: impl std::fmt::Display) -> Finding {
    finding(check, Status::Fail, e.to_string(), json!({ "error": e.to_string() }))
}

fn assessment_step(s: &Scenario, seed: u64, carry: &mut Carry) -> StepRecord {
    let Some(cfg) = &s.assessment else {
        return StepRecord::skipped(Step::Assessment, "scenario has no assessment section", Value::Null);
    };
    let mut findings = Vec::new();
    let mdp = s.world.mdp.as_ref();
    // reward estimate plus the features needed to expand it, and its discount
    let mut estimate: Option<(RewardEstimate, Option<FeatureMap>, f64)> = None;

    match &cfg.reward {
        RewardConfig::MaxentIrl {
            features,
            demonstrations,
            beta,
            learn_rate,
            iters,
        } => {
            let mdp = mdp.expect("validated");
            let f = features
                .clone()
                .unwrap_or_else(|| FeatureMap::one_hot_states(mdp.n_states(), mdp.n_actions()));
            let demos: Vec<Trajectory> = demonstrations.iter().map(|d| trajectory(mdp, d).expect("validated")).collect();
            match assessment::maxent_irl(mdp, &f, &demos, *beta, *learn_rate, *iters) {
                Ok(fit) => {
                    findings.push(finding(
                        "assessment.maxent_irl",
                        Status::Pass,
                        format!("fit {} demonstrations", demos.len()),
                        json!({
                            "weights": fit.estimate.params,
                            "log_likelihood": fit.log_likelihood,
                            "gradient_norm": fit.gradient_norm,
                            "iterations": fit.iterations,
                        }),
                    ));
                    findings.push(policy_equivalence(mdp, &fit.estimate, &f, &demos, *beta));
                    estimate = Some((fit.estimate, Some(f), *beta));
                }
                Err(e) => findings.push(fail_error("assessment.maxent_irl", e)),
            }
        }
        RewardConfig::FeasibleSetIrl {
            policy: p,
            beta,
            bound,
            samples,
        } => {
            let mdp = mdp.expect("validated");
            let pol = policy(mdp, p).expect("validated");
            match assessment::feasible_rewards_irl(mdp, &pol, *beta, *bound) {
                Ok(set) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let drawn = set.sample(*samples, samples.saturating_mul(100), &mut rng);
                    findings.push(finding(
                        "assessment.feasible_set_irl",
                        Status::Pass,
                        "reward is not identified by behavior alone; the zero reward is feasible",
                        json!({
                            "constraints": set.constraints.len(),
                            "zero_feasible": set.zero_feasible,
                            "samples_requested": samples,
                            "samples_accepted": drawn.len(),
                        }),
                    ));
                    let declared = mdp.reward_table();
                    let violations = set.violations(declared, DEFAULT_TOL);
                    if violations.is_empty() {
                        findings.push(finding(
                            "assessment.declared_reward",
                            Status::Pass,
                            "declared reward rationalizes the observed policy",
                            Value::Null,
                        ));
                        estimate = Some((
                            RewardEstimate {
                                params: RewardParams::Tabular(declared.to_vec()),
                                method: RewardMethod::FeasibleSetIrl,
                                discount_posterior: None,
                            },
                            None,
                            *beta,
                        ));
                    } else {
                        findings.push(finding(
                            "assessment.declared_reward",
                            Status::Warn,
                            "declared reward does not rationalize the observed policy",
                            json!({ "violations": violations.iter().map(|(s, a, m)| json!({
                                "state": mdp.states()[*s], "action": mdp.actions()[*a], "margin": m
                            })).collect::<Vec<_>>() }),
                        ));
                    }
                }
                Err(e) => findings.push(fail_error("assessment.feasible_set_irl", e)),
            }
        }
        RewardConfig::PreferenceFit {
            features,
            comparisons,
            learn_rate,
            iters,
        } => {
            let mdp = mdp.expect("validated");
            let cmps: Vec<PairwiseComparison> = comparisons
                .iter()
                .map(|c| PairwiseComparison {
                    left: trajectory(mdp, &c.left).expect("validated"),
                    right: trajectory(mdp, &c.right).expect("validated"),
                    preferred: c.preferred,
                })
                .collect();
            match assessment::fit_preference_reward(features, &cmps, *learn_rate, *iters) {
                Ok(fit) => {
                    let RewardParams::Linear(theta) = &fit.estimate.params else {
                        unreachable!("preference fits are linear")
                    };
                    let agree = cmps
                        .iter()
                        .filter(|c| {
                            let (l, r) = (
                                assessment::trajectory_return(features, theta, &c.left),
                                assessment::trajectory_return(features, theta, &c.right),
                            );
                            match c.preferred {
                                Side::Left => l > r,
                                Side::Right => r > l,
                            }
                        })
                        .count();
                    let status = if agree == cmps.len() { Status::Pass } else { Status::Warn };
                    findings.push(finding(
                        "assessment.preference_fit",
                        status,
                        format!("fitted reward orders {agree} of {} comparisons as judged", cmps.len()),
                        json!({ "weights": theta, "log_likelihood": fit.log_likelihood, "agreeing": agree }),
                    ));
                    estimate = Some((fit.estimate, Some(features.clone()), 0.0));
                }
                Err(e) => findings.push(fail_error("assessment.preference_fit", e)),
            }
        }
        RewardConfig::LegalStandard { portfolio } => {
            carry.ops_run.insert("prudent_investor_weights");
            match assessment::prudent_investor_weights(portfolio) {
                Ok(w) => {
                    let (status, msg) = if w.ridge > 0.0 {
                        (Status::Warn, "covariance is singular; weights computed with a ridge")
                    } else {
                        (Status::Pass, "mean-variance weights under the prudent investor template")
                    };
                    findings.push(finding(
                        "assessment.legal_standard",
                        status,
                        msg,
                        json!({ "weights": w.weights, "ridge": w.ridge, "objective": w.objective }),
                    ));
                }
                Err(e) => findings.push(fail_error("assessment.legal_standard", e)),
            }
        }
    }

    let mut fitted_beta = None;
    if let Some(d) = &cfg.discount {
        let mdp = mdp.expect("validated");
        let behavior = policy(mdp, &d.behavior).expect("validated");
        let prior = d
            .prior
            .clone()
            .unwrap_or_else(|| vec![1.0 / d.grid.len().max(1) as f64; d.grid.len()]);
        match assessment::infer_discount(mdp, &behavior, &d.grid, &prior, d.temperature) {
            Ok(post) => {
                let argmax = post.argmax();
                fitted_beta = Some(argmax);
                findings.push(finding(
                    "assessment.discount",
                    Status::Pass,
                    format!("most probable discount {argmax}"),
                    json!({ "posterior": post.entries, "argmax": argmax }),
                ));
                if let Some((est, _, _)) = &mut estimate {
                    est.discount_posterior = Some(post);
                }
            }
            Err(e) => findings.push(fail_error("assessment.discount", e)),
        }
    }

    if let Some(a) = &cfg.advice {
        let mdp = mdp.expect("validated");
        let beta_fit = a.beta_fit.or(fitted_beta);
        match (&estimate, beta_fit) {
            (Some((est, feats, _)), Some(bf)) => {
                match assessment::patient_recommendation(mdp, est, feats.as_ref(), bf, a.beta_advice) {
                    Ok(adv) => findings.push(finding(
                        "assessment.patient_advice",
                        Status::Pass,
                        if adv.divergent_states.is_empty() {
                            "patient advice agrees with the fitted discount".to_string()
                        } else {
                            format!(
                                "patient advice differs from fitted behavior in {}",
                                adv.divergent_states.iter().map(|&s| mdp.states()[s].as_str()).collect::<Vec<_>>().join(", ")
                            )
                        },
                        json!({
                            "beta_fit": bf,
                            "beta_advice": a.beta_advice,
                            "divergent_states": adv.divergent_states.iter().map(|&s| mdp.states()[s].clone()).collect::<Vec<_>>(),
                            "advised": adv.advised.0.iter().map(|&x| mdp.actions()[x].clone()).collect::<Vec<_>>(),
                        }),
                    )),
                    Err(e) => findings.push(fail_error("assessment.patient_advice", e)),
                }
            }
            (None, _) => findings.push(finding(
                "assessment.patient_advice",
                Status::Fail,
                "no reward table is available for advice",
                json!({ "reward_method": method_name(&cfg.reward) }),
            )),
            (_, None) => findings.push(finding(
                "assessment.patient_advice",
                Status::Fail,
                "no fitted discount; set beta_fit or a discount section",
                json!({ "beta_fit": Value::Null }),
            )),
        }
    }

    if let Some(t) = &cfg.time_consistency {
        match mdp::detect_preference_reversal(t.discount, t.early, t.late, t.horizon) {
            Ok(Some(rev)) => findings.push(finding(
                "assessment.time_consistency",
                Status::Warn,
                format!("preference reverses at epoch {}", rev.epoch),
                serde_json::to_value(&rev).unwrap_or(Value::Null),
            )),
            Ok(None) => findings.push(finding(
                "assessment.time_consistency",
                Status::Pass,
                "no preference reversal",
                json!({ "horizon": t.horizon }),
            )),
            Err(e) => findings.push(fail_error("assessment.time_consistency", e)),
        }
    }
    StepRecord::new(Step::Assessment, findings)
}

fn method_name(r: &RewardConfig) -> &'static str {
    match r {
        RewardConfig::MaxentIrl { .. } => "maxent_irl",
        RewardConfig::FeasibleSetIrl { .. } => "feasible_set_irl",
        RewardConfig::PreferenceFit { .. } => "preference_fit",
        RewardConfig::LegalStandard { .. } => "legal_standard",
    }
}

/// Greedy policy under the learned reward against demonstrated actions.
fn policy_equivalence(mdp: &Mdp, est: &RewardEstimate, f: &FeatureMap, demos: &[Trajectory], beta: f64) -> Finding {
    let learned = est
        .reward_table(Some(f))
        .map_err(|e| e.to_string())
        .and_then(|t| mdp.with_reward(t).map_err(|e| e.to_string()))
        .and_then(|m| mdp::solve(&m, beta).map_err(|e| e.to_string()));
    let vf = match learned {
        Ok(vf) => vf,
        Err(e) => return fail_error("assessment.policy_equivalence", e),
    };
    let mut mismatched = BTreeSet::new();
    for d in demos {
        for &(s, a) in &d.0 {
            if vf.policy.action(s) != a {
                mismatched.insert(mdp.states()[s].clone());
            }
        }
    }
    if mismatched.is_empty() {
        finding(
            "assessment.policy_equivalence",
            Status::Pass,
            "learned reward reproduces every demonstrated action",
            Value::Null,
        )
    } else {
        finding(
            "assessment.policy_equivalence",
            Status::Warn,
            "learned reward does not reproduce some demonstrated actions",
            json!({ "states": mismatched }),
        )
    }
}

fn aggregation_step(s: &Scenario, carry: &mut Carry) -> StepRecord {
    let Some(cfg) = &s.aggregation else {
        return StepRecord::skipped(Step::Aggregation, "scenario has no aggregation section", Value::Null);
    };
    let Some(id) = carry.identification.clone() else {
        return StepRecord::skipped(
            Step::Aggregation,
            "principal identification failed, so there is nothing to aggregate",
            json!({ "depends_on": "identification" }),
        );
    };
    let mut findings = Vec::new();

    if let Some(ap) = &cfg.approval {
        match aggregation::approval_winners(&ap.ballots, &ap.options) {
            Ok(out) => {
                let ev = json!({ "winners": out.winners, "counts": out.counts, "tied": out.tied });
                match &cfg.system_choice {
                    Some(c) if !out.winners.contains(c) => findings.push(finding(
                        "aggregation.approval",
                        Status::Fail,
                        format!("system choice `{c}` is not an approval winner"),
                        ev,
                    )),
                    _ => findings.push(finding(
                        "aggregation.approval",
                        Status::Pass,
                        if out.tied { "approval winners tied" } else { "unique approval winner" },
                        ev,
                    )),
                }
            }
            Err(e) => findings.push(fail_error("aggregation.approval", e)),
        }
    }

    if let Some(u) = &cfg.utilities {
        match restrict_to_best_interests(u, &id) {
            Err(missing) => findings.push(finding(
                "aggregation.utilities",
                Status::Fail,
                "utility matrix lacks rows for best-interests classes",
                json!({ "missing": missing }),
            )),
            Ok((m, dropped)) => {
                if !dropped.is_empty() {
                    findings.push(finding(
                        "aggregation.utilities",
                        Status::Pass,
                        "rows for obedience-only classes are not aggregated",
                        json!({ "dropped": dropped }),
                    ));
                }
                aggregate_matrix(cfg, &m, &id, &mut findings, carry);
            }
        }
    }

    if let Some(imp) = &cfg.impartiality {
        match aggregation::impartiality_check(&cfg.weights, &imp.agent, imp.favored.as_deref(), imp.cap) {
            Ok(v) => findings.push(finding(
                "aggregation.impartiality",
                if v.passed { Status::Pass } else { Status::Fail },
                if v.passed {
                    "no self-interest weight and no share above the cap"
                } else {
                    "aggregation weights are not impartial"
                },
                json!({ "weights": cfg.weights, "violations": v.violations }),
            )),
            Err(e) => findings.push(fail_error("aggregation.impartiality", e)),
        }
    }

    if let Some(m) = &cfg.manipulation {
        match aggregation::find_manipulation(m.rule, m.voters, m.options) {
            Ok(Some(hit)) => findings.push(finding(
                "aggregation.manipulation",
                Status::Warn,
                "declared ranked rule is open to insincere ballots",
                serde_json::to_value(&hit).unwrap_or(Value::Null),
            )),
            Ok(None) => findings.push(finding(
                "aggregation.manipulation",
                Status::Pass,
                "no profitable insincere ballot exists",
                json!({ "voters": m.voters, "options": m.options }),
            )),
            Err(e) => findings.push(fail_error("aggregation.manipulation", e)),
        }
    }

    if findings.is_empty() {
        findings.push(finding(
            "aggregation.empty",
            Status::Warn,
            "aggregation section declares no mechanism",
            json!({ "declared": 0 }),
        ));
    }
    StepRecord::new(Step::Aggregation, findings)
}

type Restricted = (UtilityMatrix, Vec<String>);

fn restrict_to_best_interests(u: &UtilityMatrix, id: &Identification) -> Result<Restricted, Vec<String>> {
    let missing: Vec<String> = id
        .best_interests
        .iter()
        .filter(|c| u.principal_index(c).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    let dropped = u
        .principals()
        .iter()
        .filter(|p| !id.best_interests.contains(p))
        .cloned()
        .collect();
    let rows = id
        .best_interests
        .iter()
        .map(|c| {
            let p = u.principal_index(c).expect("checked above");
            (0..u.options().len()).map(|o| u.value(p, o)).collect()
        })
        .collect();
    let m = UtilityMatrix::new(id.best_interests.clone(), u.options().to_vec(), rows).expect("subset of a valid matrix");
    Ok((m, dropped))
}

fn aggregate_matrix(
    cfg: &AggregationConfig,
    m: &UtilityMatrix,
    id: &Identification,
    findings: &mut Vec<Finding>,
    carry: &mut Carry,
) {
    let options = m.options();
    let front = aggregation::pareto_front(m);
    let front_ids: Vec<&String> = front.iter().map(|&o| &options[o]).collect();
    match cfg.system_choice.as_deref().and_then(|c| m.option_index(c)) {
        Some(c) if !front.contains(&c) => {
            let col = m.column(c);
            let dominator = (0..options.len())
                .find(|&o| aggregation::dominates(&m.column(o), &col))
                .map(|o| options[o].clone());
            findings.push(finding(
                "aggregation.pareto",
                Status::Fail,
                format!("system choice `{}` is Pareto dominated", options[c]),
                json!({ "front": front_ids, "dominated_by": dominator }),
            ));
        }
        _ => findings.push(finding(
            "aggregation.pareto",
            Status::Pass,
            format!("{} of {} options are Pareto efficient", front.len(), options.len()),
            json!({ "front": front_ids }),
        )),
    }

    // best-interests classes grouped by rank, highest priority first
    let mut by_rank: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for c in &id.classes {
        if id.best_interests.contains(&c.id) {
            by_rank.entry(c.rank).or_default().push(c.id.clone());
        }
    }
    let classes = PriorityClasses(by_rank.into_values().collect());
    carry.ops_run.insert("lexicographic_select");
    match aggregation::lexicographic_select(m, &classes, cfg.class_score) {
        Ok(sel) => {
            let ties: Vec<&String> = sel.final_ties.iter().map(|&o| &options[o]).collect();
            let ev = json!({
                "selected": sel.option_id,
                "final_ties": ties,
                "tie_break": sel.tie_break,
                "class_scores": sel.class_scores,
            });
            match cfg.system_choice.as_deref().and_then(|c| m.option_index(c)) {
                Some(c) if !sel.final_ties.contains(&c) => findings.push(finding(
                    "aggregation.priority",
                    Status::Fail,
                    format!("system choice `{}` overrides higher-priority classes", options[c]),
                    ev,
                )),
                _ if sel.tie_break => findings.push(finding(
                    "aggregation.priority",
                    Status::Warn,
                    "priority classes leave a tie; lowest index chosen",
                    ev,
                )),
                _ => findings.push(finding(
                    "aggregation.priority",
                    Status::Pass,
                    format!("priority order selects `{}`", sel.option_id),
                    ev,
                )),
            }
        }
        Err(e) => findings.push(fail_error("aggregation.priority", e)),
    }

    let aggregated: BTreeMap<String, f64> = (0..options.len())
        .map(|o| {
            let v = m
                .principals()
                .iter()
                .enumerate()
                .map(|(p, c)| cfg.weights.get(c).copied().unwrap_or(1.0) * m.value(p, o))
                .sum();
            (options[o].clone(), v)
        })
        .collect();
    carry.aggregated = Some(UtilityTable {
        role: Role::PrincipalTrue,
        values: aggregated,
    });
}

fn verdict_finding(check: &str, v: &loyalty::AlignmentVerdict, ok: &str, bad: &str) -> Finding {
    if v.is_aligned() {
        finding(check, Status::Pass, ok, Value::Null)
    } else {
        finding(check, Status::Fail, bad, json!({ "witnesses": v.witnesses }))
    }
}

fn loyalty_step(s: &Scenario, tol: f64, carry: &mut Carry) -> StepRecord {
    let Some(cfg) = &s.loyalty else {
        return StepRecord::skipped(Step::Loyalty, "scenario has no loyalty section", Value::Null);
    };
    let mut findings = Vec::new();
    let table = |role: Role| cfg.tables.iter().find(|t| t.role == role);

    if let Some(sys) = table(Role::SystemObjective) {
        carry.ops_run.insert("no_conflict_check");
        match &carry.aggregated {
            Some(agg) => match loyalty::no_conflict_check(sys, agg) {
                Ok(v) => findings.push(verdict_finding(
                    "loyalty.no_conflict",
                    &v,
                    "system objective preserves the aggregated principal ordering",
                    "system objective reverses aggregated principal preferences",
                )),
                Err(e) => findings.push(fail_error("loyalty.no_conflict", e)),
            },
            None => findings.push(finding(
                "loyalty.no_conflict",
                Status::Fail,
                "no aggregated principal utility to compare the system objective against",
                json!({ "missing": "aggregation.utilities" }),
            )),
        }
    }
    if let (Some(ub), Some(uf)) = (table(Role::PrincipalTrue), table(Role::AgentFiduciary)) {
        carry.ops_run.insert("alignment_check");
        match loyalty::alignment_check(ub, uf) {
            Ok(v) => findings.push(verdict_finding(
                "loyalty.alignment",
                &v,
                "agent preserves every strict principal preference",
                "agent utility breaks principal preferences",
            )),
            Err(e) => findings.push(fail_error("loyalty.alignment", e)),
        }
    }
    if let (Some(unf), Some(uf)) = (table(Role::AgentNonFiduciary), table(Role::AgentFiduciary)) {
        match loyalty::disgorgement_check(unf, uf) {
            Ok(v) => findings.push(verdict_finding(
                "loyalty.disgorgement",
                &v,
                "agent cannot profit where its unconstrained interests point",
                "agent still profits in the direction of its unconstrained interests",
            )),
            Err(e) => findings.push(fail_error("loyalty.disgorgement", e)),
        }
    }

    let bound: Vec<(usize, &context::Norm, &context::NormBinding)> = s
        .context
        .norms
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.binding.as_ref().map(|b| (i, n, b)))
        .filter(|(_, n, _)| !matches!(n.principle, TransmissionPrinciple::Attestation(_)))
        .collect();
    if let (Some(m), false) = (&s.world.macid, bound.is_empty()) {
        match loyalty_profile(m, &cfg.profile) {
            Err(f) => findings.push(f),
            Ok((profile, ev)) => {
                findings.push(finding("loyalty.profile", Status::Pass, "audited decision rules", ev));
                let on = |p: &TransmissionPrinciple| -> BTreeSet<&str> {
                    bound
                        .iter()
                        .filter(|(_, n, _)| &n.principle == p)
                        .map(|(_, _, b)| b.report.as_str())
                        .collect()
                };
                let overlap: BTreeSet<&str> = on(&TransmissionPrinciple::Confidentiality)
                    .intersection(&on(&TransmissionPrinciple::Disclosure))
                    .copied()
                    .collect();
                for (i, n, b) in &bound {
                    let f = norm_finding(m, &profile, *i, n, b, tol, overlap.contains(b.report.as_str()));
                    if f.status != Status::Fail || !f.evidence.contains_key("error") {
                        carry.ops_run.insert(match n.principle {
                            TransmissionPrinciple::Confidentiality => "confidentiality_check",
                            _ => "disclosure_check",
                        });
                    }
                    findings.push(f);
                }
            }
        }
    }

    findings.extend(duty_coverage(s, &cfg.attestations, carry, |k| k != DutyKind::Care));

    if findings.is_empty() {
        findings.push(finding(
            "loyalty.empty",
            Status::Warn,
            "loyalty section declares no checks",
            json!({ "declared": 0 }),
        ));
    }
    StepRecord::new(Step::Loyalty, findings)
}

fn loyalty_profile(m: &Macid, cfg: &ProfileConfig) -> Result<(PolicyProfile, Value), Finding> {
    let (profile, rules) = match cfg {
        ProfileConfig::Equilibrium { max_rounds } => match macid::solve_equilibrium(m, *max_rounds) {
            Ok(eq) => (eq.profile, eq.rules),
            Err(macid::MacidError::NoConvergence { rounds, cycle }) => {
                return Err(finding(
                    "loyalty.profile",
                    Status::Fail,
                    "no pure equilibrium; best responses cycle",
                    json!({ "rounds": rounds, "cycle": cycle }),
                ));
            }
            Err(e) => return Err(fail_error("loyalty.profile", e)),
        },
        ProfileConfig::Rules(labels) => {
            let rules = profile_rules(m, labels).expect("validated");
            match PolicyProfile::from_deterministic(m, &rules) {
                Ok(p) => (p, rules),
                Err(e) => return Err(fail_error("loyalty.profile", e)),
            }
        }
    };
    let mut eus = BTreeMap::new();
    for a in m.agents() {
        match macid::expected_utility(m, &profile, a) {
            Ok(v) => {
                eus.insert(a.clone(), v);
            }
            Err(e) => return Err(fail_error("loyalty.profile", e)),
        }
    }
    let labels: BTreeMap<&String, Vec<&String>> = rules
        .iter()
        .map(|(node, acts)| {
            let dom = &m.node(node).expect("rule nodes exist").domain;
            (node, acts.iter().map(|&a| &dom[a]).collect())
        })
        .collect();
    Ok((profile, json!({ "rules": labels, "expected_utilities": eus })))
}

fn norm_finding(
    m: &Macid,
    profile: &PolicyProfile,
    index: usize,
    norm: &context::Norm,
    b: &context::NormBinding,
    tol: f64,
    overlapping: bool,
) -> Finding {
    let conflict = |mut f: Finding| {
        if overlapping {
            f.status = Status::Warn;
            f.message = format!(
                "`{}` carries both a confidentiality and a disclosure duty; zero information flow would defeat disclosure, so no verdict is given",
                b.report
            );
        }
        f
    };
    match norm.principle {
        TransmissionPrinciple::Confidentiality => {
            let secret = b.secret.as_deref().expect("validated binding");
            match loyalty::confidentiality_check_with_tol(m, profile, &b.report, secret, tol) {
                Ok(v) => conflict(finding(
                    "loyalty.confidentiality",
                    if v.passed { Status::Pass } else { Status::Fail },
                    if v.passed {
                        format!("`{}` reveals nothing about `{secret}`", b.report)
                    } else {
                        format!("`{}` leaks information about `{secret}`", b.report)
                    },
                    json!({ "norm": index, "report": b.report, "secret": secret, "mutual_information_bits": v.mutual_information_bits }),
                )),
                Err(e) => fail_error("loyalty.confidentiality", e),
            }
        }
        TransmissionPrinciple::Disclosure => {
            let material = b.material.as_deref().expect("validated binding");
            let decision = b.principal_decision.as_deref().expect("validated binding");
            match loyalty::disclosure_check_with_tol(m, profile, &b.report, material, decision, tol) {
                Ok(v) => conflict(finding(
                    "loyalty.disclosure",
                    if v.passed { Status::Pass } else { Status::Fail },
                    if v.passed { format!("{} (sufficient condition only)", v.note) } else { v.note.clone() },
                    json!({
                        "norm": index,
                        "report": b.report,
                        "material": material,
                        "principal_decision": decision,
                        "value_of_information": v.value_of_information,
                        "mutual_information_bits": v.mutual_information_bits,
                        "principal_expected_utility": v.principal_expected_utility,
                        "silent_baseline": v.silent_baseline,
                    }),
                )),
                Err(e) => fail_error("loyalty.disclosure", e),
            }
        }
        TransmissionPrinciple::Attestation(_) => unreachable!("filtered out"),
    }
}

/// Declared subsidiary duties of the selected kinds must be covered by a
/// check that ran or by a positive attestation.
fn duty_coverage(
    s: &Scenario,
    attestations: &[Attestation],
    carry: &Carry,
    select: impl Fn(DutyKind) -> bool,
) -> Vec<Finding> {
    let cat = context::catalog();
    let mut out = Vec::new();
    for key in &s.context.subsidiary_duties {
        let Some(e) = cat.entry(key) else { continue };
        if !select(e.kind) {
            continue;
        }
        let attested = attestations.iter().find(|a| &a.id == key);
        let f = match (&e.check, attested) {
            (_, Some(a)) if a.attested => finding(
                "duty.coverage",
                Status::Pass,
                format!("`{}` attested: {}", e.duty, a.note),
                json!({ "key": key }),
            ),
            (_, Some(a)) => finding(
                "duty.coverage",
                Status::Fail,
                format!("`{}` attestation declined: {}", e.duty, a.note),
                json!({ "key": key, "attested": false }),
            ),
            (CheckBinding::Automated(op), None) if carry.ops_run.contains(op.as_str()) => finding(
                "duty.coverage",
                Status::Pass,
                format!("`{}` covered by {op}", e.duty),
                json!({ "key": key, "op": op }),
            ),
            (CheckBinding::Automated(op), None) => finding(
                "duty.coverage",
                Status::Fail,
                format!("`{}` needs {op} or an attestation, and neither is present", e.duty),
                json!({ "key": key, "op": op }),
            ),
            (CheckBinding::Attestation, None) => finding(
                "duty.coverage",
                Status::Fail,
                format!("`{}` needs an attestation", e.duty),
                json!({ "key": key }),
            ),
        };
        out.push(f);
    }
    out
}

fn care_step(s: &Scenario, carry: &Carry) -> StepRecord {
    let Some(cfg) = &s.care else {
        return StepRecord::skipped(Step::Care, "scenario has no care section", Value::Null);
    };
    let mut findings = Vec::new();
    let mut care_findings = Vec::new();
    for b in &cfg.inductive_bias {
        match care::inductive_bias_diagnostic(&b.evidence, b.threshold) {
            Ok(report) => care_findings.push(CareFinding::InductiveBias { id: b.id.clone(), report }),
            Err(e) => findings.push(finding("care.inductive_bias", Status::Fail, e.to_string(), json!({ "id": b.id }))),
        }
    }
    for d in &cfg.distribution_shift {
        match care::distribution_shift_score(&d.distributions) {
            Ok(score) => care_findings.push(CareFinding::DistributionShift { id: d.id.clone(), score }),
            Err(e) => findings.push(finding("care.distribution_shift", Status::Fail, e.to_string(), json!({ "id": d.id }))),
        }
    }
    let duty_keys: BTreeSet<&String> = s.context.subsidiary_duties.iter().collect();
    for a in cfg.attestations.iter().filter(|a| !duty_keys.contains(&a.id)) {
        care_findings.push(CareFinding::Attestation {
            id: a.id.clone(),
            attested: a.attested,
            note: a.note.clone(),
        });
    }
    match care::prudence_report(&s.context.care_standard, &cfg.standard, &cfg.checks, &care_findings) {
        Ok(rep) => {
            for e in rep.entries {
                let mut ev = serde_json::Map::new();
                ev.insert("id".into(), json!(e.id));
                ev.insert("declared".into(), json!(e.declared));
                if let Some(f) = &e.finding {
                    ev.insert("finding".into(), serde_json::to_value(f).unwrap_or(Value::Null));
                }
                findings.push(finding("care.prudence", e.status, format!("{}: {}", e.id, e.message), Value::Object(ev)));
            }
            if findings.is_empty() {
                findings.push(finding(
                    "care.prudence",
                    Status::Warn,
                    "no care evidence declared",
                    json!({ "standard": rep.standard }),
                ));
            }
        }
        Err(e) => findings.push(finding(
            "care.prudence",
            Status::Fail,
            e.to_string(),
            json!({ "requested": cfg.standard, "declared": s.context.care_standard }),
        )),
    }
    findings.extend(duty_coverage(s, &cfg.attestations, carry, |k| k == DutyKind::Care));
    StepRecord::new(Step::Care, findings)
}

// ---------------------------------------------------------------------------
// Rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Machine,
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn emit_report(report: &AuditReport, format: Format) -> String {
    match format {
        Format::Machine => {
            let value = serde_json::to_value(report).expect("reports serialize");
            let mut out = serde_json::to_string_pretty(&value).expect("values serialize");
            out.push('\n');
            out
        }
        Format::Text => {
            let mut out = String::new();
            let _ = writeln!(out, "{} {} audit of `{}`", report.tool, report.version, report.scenario);
            let _ = writeln!(out, "input {}  seed {}  tol {:e}", report.input_digest, report.seed, report.tolerance);
            let _ = writeln!(out, "note: {}", report.disclaimer);
            out.push('\n');
            for step in &report.steps {
                let _ = writeln!(out, "{}. {:<15} {}", step.number, step.step.title(), step.status.label());
                for f in &step.findings {
                    let _ = write!(out, "   [{}] {}: {}", f.status.label(), f.check, f.message);
                    if f.status == Status::Fail || f.status == Status::Warn {
                        let ev: Vec<String> = f.evidence.iter().map(|(k, v)| format!("{k}={}", compact(v))).collect();
                        if !ev.is_empty() {
                            let _ = write!(out, " ({})", ev.join(", "));
                        }
                    }
                    out.push('\n');
                }
            }
            let _ = writeln!(out, "\noverall: {}", report.status.label());
            out
        }
    }
}
