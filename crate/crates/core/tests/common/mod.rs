//! Fixtures and brute-force oracles shared by the integration tests.
//!
//! Nothing here calls the library routine it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use fiduciary::loyalty::UtilityTable;
use fiduciary::macid::{Cpd, DecisionRule, Macid, Node, PolicyProfile};
use fiduciary::mdp::{Mdp, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Bundled scenario files, sorted by name.
pub fn scenario_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Mdp {
    let states: Vec<String> = (0..ns).map(|i| format!("s{i}")).collect();
    let actions: Vec<String> = (0..na).map(|i| format!("a{i}")).collect();
    let transition = (0..ns).map(|_| (0..na).map(|_| random_row(rng, ns)).collect()).collect();
    let reward = (0..ns)
        .map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Mdp::new(states, actions, transition, reward).expect("random MDP is valid")
}

/// Every deterministic stationary policy.
pub fn all_policies(ns: usize, na: usize) -> Vec<Policy> {
    let count = na.pow(ns as u32);
    (0..count)
        .map(|mut k| {
            Policy(
                (0..ns)
                    .map(|_| {
                        let a = k % na;
                        k /= na;
                        a
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Policy value by Jacobi iteration of the fixed-policy Bellman equation,
/// run until the update stops moving.
pub fn policy_value_by_iteration(mdp: &Mdp, policy: &Policy, beta: f64) -> Vec<f64> {
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                let a = policy.0[s];
                let p = mdp.transition(s, a);
                mdp.reward(s, a) + beta * (0..n).map(|j| p[j] * v[j]).sum::<f64>()
            })
            .collect();
        let gap = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if gap < 1e-13 {
            break;
        }
    }
    v
}

/// Four-state deterministic chain: `left` moves down one state, `right` up
/// one, both saturating at the ends.
pub fn chain() -> Mdp {
    let mut transition = vec![vec![vec![0.0; 4]; 2]; 4];
    for s in 0..4 {
        transition[s][0][s.saturating_sub(1)] = 1.0;
        transition[s][1][(s + 1).min(3)] = 1.0;
    }
    Mdp::new(
        (0..4).map(|i| format!("s{i}")).collect(),
        vec!["left".into(), "right".into()],
        transition,
        vec![vec![0.0; 2]; 4],
    )
    .expect("chain is valid")
}

/// Demonstrations that always move right and then stay at the end.
pub fn chain_demos() -> Vec<fiduciary::assessment::Trajectory> {
    use fiduciary::assessment::Trajectory;
    vec![
        Trajectory(vec![(0, 1), (1, 1), (2, 1), (3, 1)]),
        Trajectory(vec![(1, 1), (2, 1), (3, 1), (3, 1)]),
        Trajectory(vec![(2, 1), (3, 1), (3, 1), (3, 1)]),
        Trajectory(vec![(0, 1), (1, 1), (2, 1), (3, 1)]),
    ]
}

/// Kendall rank correlation (tau-a) between two score vectors.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut score = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = (a[i] - a[j]).signum();
            let y = (b[i] - b[j]).signum();
            if a[i] != a[j] && b[i] != b[j] {
                score += x * y;
            }
            pairs += 1.0;
        }
    }
    score / pairs
}

/// Weak-dominance Pareto filter by checking every ordered pair.
pub fn pareto_oracle(values: &[Vec<f64>]) -> BTreeSet<usize> {
    let options = values[0].len();
    let column = |o: usize| values.iter().map(|row| row[o]).collect::<Vec<f64>>();
    (0..options)
        .filter(|&o| {
            let c = column(o);
            !(0..options).any(|d| {
                let dc = column(d);
                dc.iter().zip(&c).all(|(x, y)| x >= y) && dc.iter().zip(&c).any(|(x, y)| x > y)
            })
        })
        .collect()
}

/// Ordered outcome pairs strictly preferred under `premise` for which
/// `holds(target[c1], target[c2])` fails.
pub fn pair_oracle(premise: &UtilityTable, target: &UtilityTable, holds: impl Fn(f64, f64) -> bool) -> Vec<(String, String)> {
    let keys: Vec<&String> = premise.values.keys().collect();
    let mut out = Vec::new();
    for c1 in &keys {
        for c2 in &keys {
            if premise.values[*c1] > premise.values[*c2] && !holds(target.values[*c1], target.values[*c2]) {
                out.push(((*c1).clone(), (*c2).clone()));
            }
        }
    }
    out.sort();
    out
}

pub fn random_table(rng: &mut ChaCha8Rng, role: fiduciary::loyalty::Role, outcomes: usize) -> UtilityTable {
    let values: BTreeMap<String, f64> = (0..outcomes)
        .map(|i| (format!("o{i}"), f64::from(rng.random_range(0..4u8))))
        .collect();
    UtilityTable { role, values }
}

/// Chance S uniform over {safe, risky}; the advisor reports R with parent S;
/// the client picks D with parent R and is paid 1 for investing when S is
/// safe or declining when it is risky. The advisor shares the client's payoff.
pub fn disclosure_macid() -> Macid {
    let nodes = vec![
        Node::chance("S", &["safe", "risky"]),
        Node::decision("R", "advisor", &["safe", "risky"]),
        Node::decision("D", "client", &["invest", "decline"]),
        Node::utility("UC", "client"),
        Node::utility("UA", "advisor"),
    ];
    let parents = BTreeMap::from([
        ("R".to_string(), vec!["S".to_string()]),
        ("D".to_string(), vec!["R".to_string()]),
        ("UC".to_string(), vec!["S".to_string(), "D".to_string()]),
        ("UA".to_string(), vec!["S".to_string(), "D".to_string()]),
    ]);
    let payoff = vec![1.0, 0.0, 0.0, 1.0];
    Macid::new(
        nodes,
        parents,
        vec![Cpd { node: "S".into(), table: vec![vec![0.5, 0.5]] }],
        BTreeMap::from([("UC".to_string(), payoff.clone()), ("UA".to_string(), payoff)]),
        vec!["advisor".into(), "client".into()],
    )
    .expect("disclosure model is valid")
}

pub fn disclosure_profile(report: [usize; 2], decision: [usize; 2]) -> PolicyProfile {
    PolicyProfile::new()
        .with_rule(DecisionRule::deterministic("R", &report, 2))
        .with_rule(DecisionRule::deterministic("D", &decision, 2))
}

/// Client's best expected payoff in the disclosure model, enumerating every
/// deterministic rule for D, when D sees S directly or sees nothing.
pub fn disclosure_voi_oracle() -> f64 {
    let p_s = [0.5, 0.5];
    let payoff = |s: usize, d: usize| if s == d { 1.0 } else { 0.0 };
    let mut informed = f64::NEG_INFINITY;
    for rule in all_policies(2, 2) {
        let eu: f64 = (0..2).map(|s| p_s[s] * payoff(s, rule.0[s])).sum();
        informed = informed.max(eu);
    }
    let mut blind = f64::NEG_INFINITY;
    for d in 0..2 {
        let eu: f64 = (0..2).map(|s| p_s[s] * payoff(s, d)).sum();
        blind = blind.max(eu);
    }
    informed - blind
}

/// Mutual information in bits from a dense joint table.
pub fn mi_oracle(joint: &[Vec<f64>]) -> f64 {
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..joint[0].len()).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).log2();
            }
        }
    }
    mi
}
