//! Finite multi-agent causal influence models (MACIDs).
//!
//! A model is a DAG of chance, decision and utility nodes. Chance nodes carry
//! conditional probability tables, utility nodes carry real-valued tables over
//! their parents, and decision nodes are filled in by a [`PolicyProfile`].
//! Every query here is answered by exact enumeration of the joint assignment
//! space, so models are expected to be small.
//!
//! Table layout: a node's parent assignments are enumerated in mixed radix over
//! its parent list, first parent most significant, each parent's values in
//! declared domain order. CPD and decision-rule tables hold one probability row
//! per parent assignment; utility tables hold one value per parent assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-stochastic tolerance for CPDs and decision rules.
pub const PROB_TOL: f64 = 1e-9;

/// Two expected utilities closer than this are treated as equal.
const EU_TOL: f64 = 1e-12;

/// Largest deterministic profile space searched exhaustively.
pub const EXHAUSTIVE_PROFILE_LIMIT: u128 = 1 << 18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacidError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("decision node `{0}` has no rule in the profile")]
    IncompleteProfile(String),
    #[error("invalid decision rule for `{node}`: {reason}")]
    InvalidRule { node: String, reason: String },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("edge `{from}` -> `{to}` already exists")]
    EdgeExists { from: String, to: String },
    #[error("node `{node}` is a {actual} node, expected {expected}")]
    NodeKindMismatch {
        node: String,
        expected: NodeKind,
        actual: NodeKind,
    },
    #[error("best-response iteration did not converge after {rounds} rounds (cycle of length {})", cycle.len())]
    NoConvergence {
        rounds: usize,
        cycle: Vec<BTreeMap<String, Vec<usize>>>,
    },
    #[error("search space of {size} profiles exceeds the limit of {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Chance,
    Decision,
    Utility,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Chance => "chance",
            NodeKind::Decision => "decision",
            NodeKind::Utility => "utility",
        };
        f.write_str(s)
    }
}

/// A node of the influence diagram. Utility nodes have an empty domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain: Vec<String>,
}

impl Node {
    pub fn chance(id: &str, domain: &[&str]) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Chance,
            owner: None,
            domain: domain.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn decision(id: &str, owner: &str, domain: &[&str]) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Decision,
            owner: Some(owner.to_string()),
            domain: domain.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn utility(id: &str, owner: &str) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Utility,
            owner: Some(owner.to_string()),
            domain: Vec::new(),
        }
    }
}

/// Conditional probability table of a chance node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpd {
    pub node: String,
    pub table: Vec<Vec<f64>>,
}

/// A (possibly stochastic) decision rule: one distribution over the node's
/// domain per joint assignment of its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub node: String,
    pub table: Vec<Vec<f64>>,
}

impl DecisionRule {
    /// One-hot rule choosing `actions[row]` in each parent row.
    pub fn deterministic(node: &str, actions: &[usize], domain_size: usize) -> Self {
        let table = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; domain_size];
                row[a] = 1.0;
                row
            })
            .collect();
        DecisionRule {
            node: node.to_string(),
            table,
        }
    }

    /// Recovers the action index per row when every row is one-hot.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        self.table
            .iter()
            .map(|row| {
                let mut hit = None;
                for (i, &p) in row.iter().enumerate() {
                    if p == 1.0 {
                        if hit.is_some() {
                            return None;
                        }
                        hit = Some(i);
                    } else if p != 0.0 {
                        return None;
                    }
                }
                hit
            })
            .collect()
    }
}

/// Decision rules keyed by decision node id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyProfile {
    rules: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PolicyProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, rule: DecisionRule) -> Self {
        self.insert(rule);
        self
    }

    pub fn insert(&mut self, rule: DecisionRule) {
        self.rules.insert(rule.node, rule.table);
    }

    pub fn rule(&self, node: &str) -> Option<DecisionRule> {
        self.rules.get(node).map(|t| DecisionRule {
            node: node.to_string(),
            table: t.clone(),
        })
    }

    pub fn table(&self, node: &str) -> Option<&[Vec<f64>]> {
        self.rules.get(node).map(|t| t.as_slice())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(|k| k.as_str())
    }

    /// Builds a profile of one-hot rules from action indices per parent row.
    pub fn from_deterministic(
        macid: &Macid,
        rules: &BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, MacidError> {
        let mut profile = PolicyProfile::new();
        for (node, actions) in rules {
            let idx = macid.node_index(node)?;
            let size = macid.nodes[idx].domain.len();
            if let Some(&bad) = actions.iter().find(|&&a| a >= size) {
                return Err(MacidError::InvalidRule {
                    node: node.clone(),
                    reason: format!("action index {bad} outside domain of size {size}"),
                });
            }
            profile.insert(DecisionRule::deterministic(node, actions, size));
        }
        Ok(profile)
    }
}

/// Serialized form of a model, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacidDoc {
    pub agents: Vec<String>,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub parents: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub cpds: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    pub utilities: BTreeMap<String, Vec<f64>>,
}

/// A validated multi-agent causal influence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MacidDoc", into = "MacidDoc")]
pub struct Macid {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    cpds: Vec<Option<Vec<Vec<f64>>>>,
    utilities: Vec<Option<Vec<f64>>>,
    agents: Vec<String>,
    topo: Vec<usize>,
}

impl TryFrom<MacidDoc> for Macid {
    type Error = MacidError;

    fn try_from(doc: MacidDoc) -> Result<Self, Self::Error> {
        let cpds = doc
            .cpds
            .into_iter()
            .map(|(node, table)| Cpd { node, table })
            .collect();
        Macid::new(doc.nodes, doc.parents, cpds, doc.utilities, doc.agents)
    }
}

impl From<Macid> for MacidDoc {
    fn from(m: Macid) -> Self {
        let mut parents = BTreeMap::new();
        let mut cpds = BTreeMap::new();
        let mut utilities = BTreeMap::new();
        for (i, node) in m.nodes.iter().enumerate() {
            if !m.parents[i].is_empty() {
                parents.insert(
                    node.id.clone(),
                    m.parents[i].iter().map(|&p| m.nodes[p].id.clone()).collect(),
                );
            }
            if let Some(t) = &m.cpds[i] {
                cpds.insert(node.id.clone(), t.clone());
            }
            if let Some(u) = &m.utilities[i] {
                utilities.insert(node.id.clone(), u.clone());
            }
        }
        MacidDoc {
            agents: m.agents,
            nodes: m.nodes,
            parents,
            cpds,
            utilities,
        }
    }
}

fn invalid(msg: impl Into<String>) -> MacidError {
    MacidError::InvalidModel(msg.into())
}

fn check_stochastic_row(row: &[f64], width: usize) -> Result<(), String> {
    if row.len() != width {
        return Err(format!("row has {} entries, expected {width}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
        return Err(format!("entry {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

impl Macid {
    pub fn new(
        nodes: Vec<Node>,
        parents: BTreeMap<String, Vec<String>>,
        cpds: Vec<Cpd>,
        utilities: BTreeMap<String, Vec<f64>>,
        agents: Vec<String>,
    ) -> Result<Self, MacidError> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(invalid(format!("node #{i} has an empty id")));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate node id `{}`", n.id)));
            }
        }
        let agent_set: BTreeSet<&str> = agents.iter().map(|a| a.as_str()).collect();
        if agent_set.len() != agents.len() {
            return Err(invalid("duplicate agent id"));
        }
        for n in &nodes {
            match (n.kind, &n.owner) {
                (NodeKind::Chance, Some(_)) => {
                    return Err(invalid(format!("chance node `{}` must not have an owner", n.id)))
                }
                (NodeKind::Decision | NodeKind::Utility, None) => {
                    return Err(invalid(format!("{} node `{}` needs an owner", n.kind, n.id)))
                }
                (_, Some(o)) if !agent_set.contains(o.as_str()) => {
                    return Err(invalid(format!("node `{}` is owned by undeclared agent `{o}`", n.id)))
                }
                _ => {}
            }
            if n.kind == NodeKind::Utility {
                if !n.domain.is_empty() {
                    return Err(invalid(format!("utility node `{}` must not declare a domain", n.id)));
                }
            } else {
                if n.domain.is_empty() {
                    return Err(invalid(format!("node `{}` has an empty domain", n.id)));
                }
                let distinct: BTreeSet<&String> = n.domain.iter().collect();
                if distinct.len() != n.domain.len() {
                    return Err(invalid(format!("node `{}` has duplicate domain values", n.id)));
                }
            }
        }

        let mut parent_idx = vec![Vec::new(); nodes.len()];
        for (child, ps) in &parents {
            let c = *index
                .get(child)
                .ok_or_else(|| invalid(format!("parents declared for unknown node `{child}`")))?;
            let mut seen = BTreeSet::new();
            for p in ps {
                let pi = *index
                    .get(p)
                    .ok_or_else(|| invalid(format!("unknown parent `{p}` of `{child}`")))?;
                if nodes[pi].kind == NodeKind::Utility {
                    return Err(invalid(format!("utility node `{p}` cannot have children")));
                }
                if !seen.insert(pi) {
                    return Err(invalid(format!("duplicate parent `{p}` of `{child}`")));
                }
                parent_idx[c].push(pi);
            }
        }

        let topo = topological_order(&nodes, &parent_idx)
            .ok_or_else(|| invalid("edge structure contains a cycle"))?;

        let rows = |i: usize| -> usize {
            parent_idx[i]
                .iter()
                .map(|&p| nodes[p].domain.len())
                .product()
        };

        let mut cpd_tables = vec![None; nodes.len()];
        for cpd in cpds {
            let i = *index
                .get(&cpd.node)
                .ok_or_else(|| invalid(format!("CPD for unknown node `{}`", cpd.node)))?;
            if nodes[i].kind != NodeKind::Chance {
                return Err(invalid(format!("CPD given for non-chance node `{}`", cpd.node)));
            }
            if cpd_tables[i].is_some() {
                return Err(invalid(format!("duplicate CPD for `{}`", cpd.node)));
            }
            if cpd.table.len() != rows(i) {
                return Err(invalid(format!(
                    "CPD for `{}` has {} rows, expected {}",
                    cpd.node,
                    cpd.table.len(),
                    rows(i)
                )));
            }
            for (r, row) in cpd.table.iter().enumerate() {
                check_stochastic_row(row, nodes[i].domain.len())
                    .map_err(|e| invalid(format!("CPD `{}` row {r}: {e}", cpd.node)))?;
            }
            cpd_tables[i] = Some(cpd.table);
        }

        let mut util_tables = vec![None; nodes.len()];
        for (node, table) in utilities {
            let i = *index
                .get(&node)
                .ok_or_else(|| invalid(format!("utility table for unknown node `{node}`")))?;
            if nodes[i].kind != NodeKind::Utility {
                return Err(invalid(format!("utility table given for non-utility node `{node}`")));
            }
            if table.len() != rows(i) {
                return Err(invalid(format!(
                    "utility table for `{node}` has {} entries, expected {}",
                    table.len(),
                    rows(i)
                )));
            }
            if table.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("utility table for `{node}` has a non-finite entry")));
            }
            util_tables[i] = Some(table);
        }

        for (i, n) in nodes.iter().enumerate() {
            match n.kind {
                NodeKind::Chance if cpd_tables[i].is_none() => {
                    return Err(invalid(format!("chance node `{}` has no CPD", n.id)))
                }
                NodeKind::Utility if util_tables[i].is_none() => {
                    return Err(invalid(format!("utility node `{}` has no table", n.id)))
                }
                _ => {}
            }
        }
        for a in &agents {
            let owns_utility = nodes
                .iter()
                .any(|n| n.kind == NodeKind::Utility && n.owner.as_deref() == Some(a.as_str()));
            if !owns_utility {
                return Err(invalid(format!("agent `{a}` owns no utility node")));
            }
        }

        Ok(Macid {
            nodes,
            index,
            parents: parent_idx,
            cpds: cpd_tables,
            utilities: util_tables,
            agents,
            topo,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn node(&self, id: &str) -> Result<&Node, MacidError> {
        Ok(&self.nodes[self.node_index(id)?])
    }

    pub fn parents(&self, id: &str) -> Result<Vec<&str>, MacidError> {
        let i = self.node_index(id)?;
        Ok(self.parents[i]
            .iter()
            .map(|&p| self.nodes[p].id.as_str())
            .collect())
    }

    /// Number of joint parent assignments of a node.
    pub fn parent_rows(&self, id: &str) -> Result<usize, MacidError> {
        Ok(self.rows(self.node_index(id)?))
    }

    /// Decision node ids sorted by id.
    pub fn decision_nodes(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Decision)
            .map(|n| n.id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    fn node_index(&self, id: &str) -> Result<usize, MacidError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| MacidError::UnknownNode(id.to_string()))
    }

    fn rows(&self, i: usize) -> usize {
        self.parents[i]
            .iter()
            .map(|&p| self.nodes[p].domain.len())
            .product()
    }

    fn row_of(&self, i: usize, values: &[usize]) -> usize {
        self.parents[i]
            .iter()
            .fold(0, |acc, &p| acc * self.nodes[p].domain.len() + values[p])
    }

    fn agent_index(&self, agent: &str) -> Result<usize, MacidError> {
        self.agents
            .iter()
            .position(|a| a == agent)
            .ok_or_else(|| MacidError::UnknownAgent(agent.to_string()))
    }

    /// Returns a copy of the model with `from` appended to `to`'s parent list.
    pub fn with_edge(&self, from: &str, to: &str) -> Result<Macid, MacidError> {
        let f = self.node_index(from)?;
        let t = self.node_index(to)?;
        if self.parents[t].contains(&f) {
            return Err(MacidError::EdgeExists {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        if self.nodes[t].kind != NodeKind::Decision {
            return Err(MacidError::NodeKindMismatch {
                node: to.to_string(),
                expected: NodeKind::Decision,
                actual: self.nodes[t].kind,
            });
        }
        if self.nodes[f].kind == NodeKind::Utility {
            return Err(invalid(format!("utility node `{from}` cannot have children")));
        }
        let mut parents = self.parents.clone();
        parents[t].push(f);
        let topo = topological_order(&self.nodes, &parents)
            .ok_or_else(|| invalid(format!("edge `{from}` -> `{to}` would create a cycle")))?;
        Ok(Macid {
            parents,
            topo,
            ..self.clone()
        })
    }

    /// d-separation of `xs` and `ys` given `given`, by reachability over
    /// active trails (utility nodes included as ordinary graph nodes).
    pub fn d_separated(&self, xs: &[&str], ys: &[&str], given: &[&str]) -> Result<bool, MacidError> {
        let n = self.nodes.len();
        let mut observed = vec![false; n];
        for g in given {
            observed[self.node_index(g)?] = true;
        }
        let mut targets = vec![false; n];
        for y in ys {
            targets[self.node_index(y)?] = true;
        }
        let mut children = vec![Vec::new(); n];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        // Observed nodes and their ancestors activate v-structures.
        let mut anc_of_obs = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
        while let Some(v) = stack.pop() {
            if anc_of_obs[v] {
                continue;
            }
            anc_of_obs[v] = true;
            stack.extend(self.parents[v].iter().copied());
        }
        // (node, arrived_from_child)
        let mut visited = BTreeSet::new();
        let mut queue = Vec::new();
        for x in xs {
            queue.push((self.node_index(x)?, true));
        }
        while let Some((v, up)) = queue.pop() {
            if !visited.insert((v, up)) {
                continue;
            }
            if !observed[v] && targets[v] {
                return Ok(false);
            }
            if up {
                if !observed[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                    queue.extend(children[v].iter().map(|&c| (c, false)));
                }
            } else {
                if !observed[v] {
                    queue.extend(children[v].iter().map(|&c| (c, false)));
                }
                if anc_of_obs[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        Ok(true)
    }

    fn check_profile(&self, profile: &PolicyProfile) -> Result<(), MacidError> {
        for node in profile.nodes() {
            let i = self.node_index(node)?;
            if self.nodes[i].kind != NodeKind::Decision {
                return Err(MacidError::InvalidRule {
                    node: node.to_string(),
                    reason: "profile assigns a rule to a non-decision node".into(),
                });
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.kind != NodeKind::Decision {
                continue;
            }
            let table = profile
                .table(&n.id)
                .ok_or_else(|| MacidError::IncompleteProfile(n.id.clone()))?;
            if table.len() != self.rows(i) {
                return Err(MacidError::InvalidRule {
                    node: n.id.clone(),
                    reason: format!("{} rows, expected {}", table.len(), self.rows(i)),
                });
            }
            for (r, row) in table.iter().enumerate() {
                check_stochastic_row(row, n.domain.len()).map_err(|e| MacidError::InvalidRule {
                    node: n.id.clone(),
                    reason: format!("row {r}: {e}"),
                })?;
            }
        }
        Ok(())
    }

    fn rule_refs<'a>(&'a self, profile: &'a PolicyProfile) -> Vec<Rule<'a>> {
        self.nodes
            .iter()
            .map(|n| match n.kind {
                NodeKind::Decision => profile
                    .table(&n.id)
                    .map(Rule::Stochastic)
                    .unwrap_or(Rule::Absent),
                _ => Rule::Absent,
            })
            .collect()
    }

    /// Depth-first chain-rule enumeration in topological order; `visit`
    /// receives every positive-mass full assignment (indexed by node).
    fn enumerate(&self, rules: &[Rule<'_>], visit: &mut dyn FnMut(&[usize], f64)) {
        let order: Vec<usize> = self
            .topo
            .iter()
            .copied()
            .filter(|&i| self.nodes[i].kind != NodeKind::Utility)
            .collect();
        let mut values = vec![0usize; self.nodes.len()];
        self.enumerate_from(&order, 0, 1.0, &mut values, rules, visit);
    }

    fn enumerate_from(
        &self,
        order: &[usize],
        depth: usize,
        mass: f64,
        values: &mut Vec<usize>,
        rules: &[Rule<'_>],
        visit: &mut dyn FnMut(&[usize], f64),
    ) {
        if depth == order.len() {
            visit(values, mass);
            return;
        }
        let i = order[depth];
        let row = self.row_of(i, values);
        match (&self.cpds[i], &rules[i]) {
            (Some(cpd), _) => {
                for (v, &p) in cpd[row].iter().enumerate() {
                    if p > 0.0 {
                        values[i] = v;
                        self.enumerate_from(order, depth + 1, mass * p, values, rules, visit);
                    }
                }
            }
            (None, Rule::Stochastic(table)) => {
                for (v, &p) in table[row].iter().enumerate() {
                    if p > 0.0 {
                        values[i] = v;
                        self.enumerate_from(order, depth + 1, mass * p, values, rules, visit);
                    }
                }
            }
            (None, Rule::Deterministic(actions)) => {
                values[i] = actions[row];
                self.enumerate_from(order, depth + 1, mass, values, rules, visit);
            }
            (None, Rule::Absent) => unreachable!("decision node without a rule"),
        }
    }

    /// Expected utility of every agent (in declared agent order).
    fn agent_utilities(&self, rules: &[Rule<'_>]) -> Vec<f64> {
        let owners: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Utility)
            .map(|(i, n)| {
                let owner = n.owner.as_deref().unwrap_or_default();
                (i, self.agents.iter().position(|a| a == owner).unwrap_or(0))
            })
            .collect();
        let mut eu = vec![0.0; self.agents.len()];
        self.enumerate(rules, &mut |values, p| {
            for &(u, a) in &owners {
                let table = self.utilities[u].as_ref().expect("validated utility table");
                eu[a] += p * table[self.row_of(u, values)];
            }
        });
        eu
    }

    fn deterministic_rules<'a>(&self, assignment: &'a [(usize, Vec<usize>)]) -> Vec<Rule<'a>> {
        let mut rules = vec![Rule::Absent; self.nodes.len()];
        for (node, actions) in assignment {
            rules[*node] = Rule::Deterministic(actions);
        }
        rules
    }

    fn decision_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind == NodeKind::Decision)
            .collect();
        idx.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        idx
    }

    fn rule_count(&self, i: usize) -> u128 {
        let base = self.nodes[i].domain.len() as u128;
        let rows = self.rows(i) as u32;
        base.checked_pow(rows).unwrap_or(u128::MAX)
    }
}

#[derive(Clone, Copy)]
enum Rule<'a> {
    Absent,
    Stochastic(&'a [Vec<f64>]),
    Deterministic(&'a [usize]),
}

fn topological_order(nodes: &[Node], parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = nodes.len();
    let mut indegree: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (nodes[i].id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let v = first.1;
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((nodes[c].id.as_str(), c));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Decodes rule `index` into per-row actions, first row most significant.
fn decode_rule(mut index: u128, rows: usize, base: usize) -> Vec<usize> {
    let mut actions = vec![0; rows];
    for slot in actions.iter_mut().rev() {
        *slot = (index % base as u128) as usize;
        index /= base as u128;
    }
    actions
}

/// Exact joint distribution over all chance and decision nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    variables: Vec<String>,
    domains: Vec<Vec<String>>,
    entries: Vec<(Vec<usize>, f64)>,
}

impl JointDistribution {
    /// Variables in topological order; assignments index into this list.
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    /// Positive-mass assignments in lexicographic order.
    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    /// Probability of a full assignment given as value indices; zero if unreachable.
    pub fn probability(&self, assignment: &[usize]) -> f64 {
        self.entries
            .binary_search_by(|(a, _)| a.as_slice().cmp(assignment))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Probability of a full assignment given by value labels.
    pub fn probability_of(&self, labels: &[(&str, &str)]) -> Result<f64, MacidError> {
        let mut assignment = vec![usize::MAX; self.variables.len()];
        for (var, label) in labels {
            let v = self.position(var)?;
            assignment[v] = self.domains[v]
                .iter()
                .position(|d| d == label)
                .ok_or_else(|| MacidError::InvalidDistribution(format!("`{label}` not in dom({var})")))?;
        }
        if assignment.contains(&usize::MAX) {
            return Err(MacidError::InvalidDistribution(
                "assignment does not cover every variable".into(),
            ));
        }
        Ok(self.probability(&assignment))
    }

    fn position(&self, var: &str) -> Result<usize, MacidError> {
        self.variables
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| MacidError::UnknownNode(var.to_string()))
    }

    pub fn domain(&self, var: &str) -> Result<&[String], MacidError> {
        Ok(&self.domains[self.position(var)?])
    }

    /// Marginal over the listed variables, keyed by their value indices.
    pub fn marginal(&self, vars: &[&str]) -> Result<BTreeMap<Vec<usize>, f64>, MacidError> {
        let pos: Vec<usize> = vars.iter().map(|v| self.position(v)).collect::<Result<_, _>>()?;
        let mut out = BTreeMap::new();
        for (a, p) in &self.entries {
            let key: Vec<usize> = pos.iter().map(|&i| a[i]).collect();
            *out.entry(key).or_insert(0.0) += p;
        }
        Ok(out)
    }

    /// Two-variable joint table suitable for [`mutual_information`].
    pub fn pair(&self, x: &str, y: &str) -> Result<BTreeMap<(usize, usize), f64>, MacidError> {
        Ok(self
            .marginal(&[x, y])?
            .into_iter()
            .map(|(k, p)| ((k[0], k[1]), p))
            .collect())
    }
}

pub fn joint_distribution(macid: &Macid, profile: &PolicyProfile) -> Result<JointDistribution, MacidError> {
    macid.check_profile(profile)?;
    let rules = macid.rule_refs(profile);
    let vars: Vec<usize> = macid
        .topo
        .iter()
        .copied()
        .filter(|&i| macid.nodes[i].kind != NodeKind::Utility)
        .collect();
    let mut entries = Vec::new();
    macid.enumerate(&rules, &mut |values, p| {
        entries.push((vars.iter().map(|&i| values[i]).collect::<Vec<_>>(), p));
    });
    Ok(JointDistribution {
        variables: vars.iter().map(|&i| macid.nodes[i].id.clone()).collect(),
        domains: vars.iter().map(|&i| macid.nodes[i].domain.clone()).collect(),
        entries,
    })
}

/// Sum over joint assignments of probability times the agent's total utility.
pub fn expected_utility(macid: &Macid, profile: &PolicyProfile, agent: &str) -> Result<f64, MacidError> {
    let a = macid.agent_index(agent)?;
    macid.check_profile(profile)?;
    let rules = macid.rule_refs(profile);
    Ok(macid.agent_utilities(&rules)[a])
}

/// How an equilibrium was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolveMethod {
    /// Every deterministic profile was checked for profitable deviations; the
    /// selected equilibrium maximizes total expected utility.
    Exhaustive { profiles: u128, equilibria: usize },
    /// Best-response iteration reached a fixed point.
    BestResponse { rounds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub profile: PolicyProfile,
    /// Action index per parent row, keyed by decision node.
    pub rules: BTreeMap<String, Vec<usize>>,
    pub expected_utilities: BTreeMap<String, f64>,
    pub method: SolveMethod,
}

/// Pure-strategy Nash equilibrium over deterministic decision rules.
///
/// When the deterministic profile space is at most
/// [`EXHAUSTIVE_PROFILE_LIMIT`], every profile is checked for a profitable
/// single-node deviation and the equilibrium with the largest total expected
/// utility is returned (ties: lexicographically smallest profile, decision
/// nodes ordered by id). If no pure equilibrium exists, best-response
/// iteration is run to report the cycle. Larger spaces go straight to
/// best-response iteration from the all-zero profile.
pub fn solve_equilibrium(macid: &Macid, max_rounds: usize) -> Result<Equilibrium, MacidError> {
    let decisions = macid.decision_indices();
    let counts: Vec<u128> = decisions.iter().map(|&d| macid.rule_count(d)).collect();
    let total = counts
        .iter()
        .try_fold(1u128, |acc, &c| acc.checked_mul(c))
        .unwrap_or(u128::MAX);

    if total <= EXHAUSTIVE_PROFILE_LIMIT {
        if let Some((choice, equilibria)) = exhaustive_equilibrium(macid, &decisions, &counts, total) {
            return finish(macid, &decisions, &choice, SolveMethod::Exhaustive { profiles: total, equilibria });
        }
        return match best_response_iteration(macid, &decisions, max_rounds) {
            // Unreachable in exact arithmetic: a best-response fixed point is an equilibrium.
            Ok((choice, rounds)) => finish(macid, &decisions, &choice, SolveMethod::BestResponse { rounds }),
            Err(e) => Err(e),
        };
    }
    let (choice, rounds) = best_response_iteration(macid, &decisions, max_rounds)?;
    finish(macid, &decisions, &choice, SolveMethod::BestResponse { rounds })
}

fn finish(
    macid: &Macid,
    decisions: &[usize],
    choice: &[u128],
    method: SolveMethod,
) -> Result<Equilibrium, MacidError> {
    let assignment = decode_profile(macid, decisions, choice);
    let rules: BTreeMap<String, Vec<usize>> = assignment
        .iter()
        .map(|(i, a)| (macid.nodes[*i].id.clone(), a.clone()))
        .collect();
    let profile = PolicyProfile::from_deterministic(macid, &rules)?;
    let eu = macid.agent_utilities(&macid.deterministic_rules(&assignment));
    Ok(Equilibrium {
        profile,
        rules,
        expected_utilities: macid.agents.iter().cloned().zip(eu).collect(),
        method,
    })
}

fn decode_profile(macid: &Macid, decisions: &[usize], choice: &[u128]) -> Vec<(usize, Vec<usize>)> {
    decisions
        .iter()
        .zip(choice)
        .map(|(&d, &r)| (d, decode_rule(r, macid.rows(d), macid.nodes[d].domain.len())))
        .collect()
}

fn owner_of(macid: &Macid, node: usize) -> usize {
    let owner = macid.nodes[node].owner.as_deref().unwrap_or_default();
    macid.agents.iter().position(|a| a == owner).unwrap_or(0)
}

fn exhaustive_equilibrium(
    macid: &Macid,
    decisions: &[usize],
    counts: &[u128],
    total: u128,
) -> Option<(Vec<u128>, usize)> {
    let total = total as usize;
    let split = |mut idx: usize| -> Vec<u128> {
        let mut out = vec![0u128; counts.len()];
        for (slot, &c) in out.iter_mut().zip(counts).rev() {
            *slot = (idx as u128) % c;
            idx /= c as usize;
        }
        out
    };
    let join = |choice: &[u128]| -> usize {
        choice
            .iter()
            .zip(counts)
            .fold(0usize, |acc, (&r, &c)| acc * c as usize + r as usize)
    };

    let mut table = Vec::with_capacity(total);
    for idx in 0..total {
        let assignment = decode_profile(macid, decisions, &split(idx));
        table.push(macid.agent_utilities(&macid.deterministic_rules(&assignment)));
    }

    let owners: Vec<usize> = decisions.iter().map(|&d| owner_of(macid, d)).collect();
    let mut best: Option<(usize, f64)> = None;
    let mut found = 0;
    for idx in 0..total {
        let choice = split(idx);
        let stable = (0..decisions.len()).all(|k| {
            let own = table[idx][owners[k]];
            let mut alt = choice.clone();
            (0..counts[k]).all(|r| {
                alt[k] = r;
                table[join(&alt)][owners[k]] <= own + EU_TOL
            })
        });
        if stable {
            found += 1;
            let welfare: f64 = table[idx].iter().sum();
            if best.is_none_or(|(_, w)| welfare > w + EU_TOL) {
                best = Some((idx, welfare));
            }
        }
    }
    best.map(|(idx, _)| (split(idx), found))
}

fn best_response_iteration(
    macid: &Macid,
    decisions: &[usize],
    max_rounds: usize,
) -> Result<(Vec<u128>, usize), MacidError> {
    let mut choice = vec![0u128; decisions.len()];
    let mut seen: HashMap<Vec<u128>, usize> = HashMap::new();
    let mut history: Vec<Vec<u128>> = vec![choice.clone()];
    seen.insert(choice.clone(), 0);
    for round in 1..=max_rounds {
        let mut changed = false;
        for k in 0..decisions.len() {
            let d = decisions[k];
            let owner = owner_of(macid, d);
            let mut assignment = decode_profile(macid, decisions, &choice);
            let current = macid.agent_utilities(&macid.deterministic_rules(&assignment))[owner];
            let mut best = (choice[k], current);
            for r in 0..macid.rule_count(d) {
                assignment[k].1 = decode_rule(r, macid.rows(d), macid.nodes[d].domain.len());
                let eu = macid.agent_utilities(&macid.deterministic_rules(&assignment))[owner];
                if eu > best.1 + EU_TOL {
                    best = (r, eu);
                }
            }
            if best.0 != choice[k] {
                choice[k] = best.0;
                changed = true;
            }
        }
        if !changed {
            return Ok((choice, round));
        }
        if let Some(&start) = seen.get(&choice) {
            let cycle = history[start..]
                .iter()
                .map(|c| describe(macid, decisions, c))
                .collect();
            return Err(MacidError::NoConvergence { rounds: round, cycle });
        }
        seen.insert(choice.clone(), history.len());
        history.push(choice.clone());
    }
    Err(MacidError::NoConvergence {
        rounds: max_rounds,
        cycle: history.iter().map(|c| describe(macid, decisions, c)).collect(),
    })
}

fn describe(macid: &Macid, decisions: &[usize], choice: &[u128]) -> BTreeMap<String, Vec<usize>> {
    decode_profile(macid, decisions, choice)
        .into_iter()
        .map(|(i, a)| (macid.nodes[i].id.clone(), a))
        .collect()
}

/// Value of observing `chance` at `decision` for the decision's owner.
///
/// Decisions of other agents are held at the no-communication reference (the
/// constant rule choosing their first domain value), so information that would
/// otherwise reach the owner only through another agent's strategic report is
/// not counted as already available. The owner's decision nodes are optimized
/// jointly over deterministic rules, once with the extra edge and once
/// restricted to rules that ignore it. The restricted maximum is taken inside
/// the extended model, so the difference is exactly non-negative.
pub fn value_of_information(macid: &Macid, decision: &str, chance: &str) -> Result<f64, MacidError> {
    let d = macid.node_index(decision)?;
    let c = macid.node_index(chance)?;
    if macid.nodes[d].kind != NodeKind::Decision {
        return Err(MacidError::NodeKindMismatch {
            node: decision.to_string(),
            expected: NodeKind::Decision,
            actual: macid.nodes[d].kind,
        });
    }
    if macid.nodes[c].kind != NodeKind::Chance {
        return Err(MacidError::NodeKindMismatch {
            node: chance.to_string(),
            expected: NodeKind::Chance,
            actual: macid.nodes[c].kind,
        });
    }
    let extended = macid.with_edge(chance, decision)?;
    let owner = owner_of(macid, d);
    let decisions = extended.decision_indices();
    let own: Vec<usize> = decisions
        .iter()
        .copied()
        .filter(|&i| owner_of(&extended, i) == owner)
        .collect();
    let counts: Vec<u128> = own.iter().map(|&i| extended.rule_count(i)).collect();
    let total = counts
        .iter()
        .try_fold(1u128, |acc, &c| acc.checked_mul(c))
        .unwrap_or(u128::MAX);
    if total > EXHAUSTIVE_PROFILE_LIMIT {
        return Err(MacidError::SearchSpaceTooLarge {
            size: total,
            limit: EXHAUSTIVE_PROFILE_LIMIT,
        });
    }

    let mut assignment: Vec<(usize, Vec<usize>)> = decisions
        .iter()
        .map(|&i| (i, vec![0; extended.rows(i)]))
        .collect();
    let slots: Vec<usize> = own
        .iter()
        .map(|i| decisions.iter().position(|x| x == i).unwrap_or(0))
        .collect();
    let signal = macid.nodes[c].domain.len();

    let mut with_edge = f64::NEG_INFINITY;
    let mut without_edge = f64::NEG_INFINITY;
    for idx in 0..total {
        let mut rest = idx;
        for (k, &slot) in slots.iter().enumerate().rev() {
            let r = rest % counts[k];
            rest /= counts[k];
            let node = own[k];
            assignment[slot].1 = decode_rule(r, extended.rows(node), extended.nodes[node].domain.len());
        }
        let eu = extended.agent_utilities(&extended.deterministic_rules(&assignment))[owner];
        with_edge = with_edge.max(eu);
        let target = &assignment[slots[own.iter().position(|&i| i == d).unwrap_or(0)]].1;
        let ignores_signal = target.chunks(signal).all(|block| block.iter().all(|&a| a == block[0]));
        if ignores_signal {
            without_edge = without_edge.max(eu);
        }
    }
    Ok(with_edge - without_edge)
}

/// Mutual information in bits of a two-variable joint table.
pub fn mutual_information<X, Y>(joint: &BTreeMap<(X, Y), f64>) -> Result<f64, MacidError>
where
    X: Ord + Clone,
    Y: Ord + Clone,
{
    if joint.values().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(MacidError::InvalidDistribution("negative or non-finite mass".into()));
    }
    let total: f64 = joint.values().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(MacidError::InvalidDistribution(format!("joint sums to {total}")));
    }
    let mut px: BTreeMap<&X, f64> = BTreeMap::new();
    let mut py: BTreeMap<&Y, f64> = BTreeMap::new();
    for ((x, y), &p) in joint {
        *px.entry(x).or_insert(0.0) += p;
        *py.entry(y).or_insert(0.0) += p;
    }
    let mut mi = 0.0;
    for ((x, y), &p) in joint {
        if p > 0.0 {
            mi += p * (p / (px[x] * py[y])).log2();
        }
    }
    Ok(mi)
}
