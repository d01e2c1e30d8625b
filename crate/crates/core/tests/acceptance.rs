//! Acceptance gate: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fiduciary::aggregation::{find_manipulation, pareto_front, UtilityMatrix, VotingRule};
use fiduciary::assessment::{
    feasible_rewards_irl, fit_preference_reward, infer_discount, maxent_irl, maxent_objective,
    prudent_investor_weights, trajectory_return, FeatureMap, PairwiseComparison, PortfolioProblem, RewardParams,
    Side, Trajectory,
};
use fiduciary::audit::{emit_report, load_scenario, run_audit, AuditOptions, Format, Status, Step};
use fiduciary::care::{inductive_bias_diagnostic, BinaryEvidence};
use fiduciary::loyalty::{alignment_check, disgorgement_check, Role, UtilityTable};
use fiduciary::macid::{
    joint_distribution, mutual_information, value_of_information, Cpd, DecisionRule, Macid, Node, PolicyProfile,
};
use fiduciary::mdp::{
    detect_preference_reversal, evaluate_policy, solve, value_iteration, default_max_iters, Choice, DelayedReward,
    DiscountSpec, Mdp, Policy,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:?}, budget {budget:?}"))?;
    Ok(took)
}

fn random_mdps() -> Vec<Mdp> {
    let mut rng = common::rng(1);
    (0..50).map(|_| common::random_mdp(&mut rng, 5, 3)).collect()
}

fn c01_mdp_optimality() -> Outcome {
    let start = Instant::now();
    let policies = common::all_policies(5, 3);
    let mut worst: f64 = f64::INFINITY;
    for (i, mdp) in random_mdps().iter().enumerate() {
        let vf = solve(mdp, 0.9).map_err(|e| e.to_string())?;
        let greedy = evaluate_policy(mdp, &vf.policy, 0.9).map_err(|e| e.to_string())?.values;
        for p in &policies {
            let v = evaluate_policy(mdp, p, 0.9).map_err(|e| e.to_string())?.values;
            for s in 0..5 {
                let margin = greedy[s] - v[s];
                worst = worst.min(margin);
                ensure(margin >= -1e-6, || format!("mdp {i}: policy {:?} beats greedy at s{s} by {}", p.0, -margin))?;
            }
        }
    }
    let took = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("50 MDPs x 243 policies, min margin {worst:.3e}, {took:.2?}"))
}

fn c02_contraction() -> Outcome {
    let beta = 0.9;
    let mut checked = 0;
    for (i, mdp) in random_mdps().iter().enumerate() {
        let vf = value_iteration(mdp, beta, 1e-12, default_max_iters(beta, 1e-12)).map_err(|e| e.to_string())?;
        for (k, w) in vf.gaps.windows(2).enumerate() {
            ensure(w[1] <= beta * w[0] + 1e-12, || format!("mdp {i}: gap {} -> {} at iterate {k}", w[0], w[1]))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} successive gap pairs"))
}

fn random_features(rng: &mut rand_chacha::ChaCha8Rng, ns: usize, na: usize, k: usize) -> FeatureMap {
    FeatureMap::new(
        (0..ns)
            .map(|_| (0..na).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect(),
    )
    .expect("feature table")
}

fn sample_trajectory(rng: &mut rand_chacha::ChaCha8Rng, mdp: &Mdp, len: usize) -> Trajectory {
    let mut s = rng.random_range(0..mdp.n_states());
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let a = rng.random_range(0..mdp.n_actions());
        steps.push((s, a));
        let p = mdp.transition(s, a);
        let mut u: f64 = rng.random();
        let mut next = p.len() - 1;
        for (j, &pj) in p.iter().enumerate() {
            if u < pj {
                next = j;
                break;
            }
            u -= pj;
        }
        s = next;
    }
    Trajectory(steps)
}

fn c03_maxent_gradient() -> Outcome {
    let mut rng = common::rng(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for point in 0..10 {
        let mdp = common::random_mdp(&mut rng, 4, 2);
        let features = random_features(&mut rng, 4, 2, 3);
        let demos: Vec<Trajectory> = (0..4).map(|_| sample_trajectory(&mut rng, &mdp, 5)).collect();
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = maxent_objective(&mdp, &features, &demos, 0.9, &theta).map_err(|e| e.to_string())?;
        let mut fd = vec![0.0; 3];
        for k in 0..3 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let (lu, _) = maxent_objective(&mdp, &features, &demos, 0.9, &up).map_err(|e| e.to_string())?;
            let (ld, _) = maxent_objective(&mdp, &features, &demos, 0.9, &down).map_err(|e| e.to_string())?;
            fd[k] = (lu - ld) / (2.0 * h);
        }
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        let rel = diff / norm;
        worst = worst.max(rel);
        ensure(rel < 1e-4, || format!("point {point}: relative error {rel:.3e}"))?;
    }
    Ok(format!("10 points, max relative error {worst:.3e}"))
}

fn c04_policy_equivalence() -> Outcome {
    let mdp = common::chain();
    let features = FeatureMap::one_hot_states(4, 2);
    let fit = maxent_irl(&mdp, &features, &common::chain_demos(), 0.9, 0.5, 300).map_err(|e| e.to_string())?;
    let table = fit.estimate.reward_table(Some(&features)).map_err(|e| e.to_string())?;
    let learned = solve(&mdp.with_reward(table).map_err(|e| e.to_string())?, 0.9).map_err(|e| e.to_string())?;
    let demonstrated = Policy(vec![1, 1, 1, 1]);
    ensure(learned.policy == demonstrated, || format!("greedy policy {:?}", learned.policy.0))?;

    let mut instances = 1;
    let set = feasible_rewards_irl(&mdp, &demonstrated, 0.9, 1.0).map_err(|e| e.to_string())?;
    ensure(set.zero_feasible && set.contains(&vec![vec![0.0; 2]; 4], 0.0), || "zero reward infeasible on chain".into())?;
    for (i, m) in random_mdps().iter().enumerate() {
        let opt = solve(m, 0.9).map_err(|e| e.to_string())?.policy;
        let set = feasible_rewards_irl(m, &opt, 0.9, 1.0).map_err(|e| e.to_string())?;
        ensure(set.zero_feasible && set.contains(&vec![vec![0.0; 3]; 5], 0.0), || format!("zero reward infeasible on mdp {i}"))?;
        ensure(set.contains(m.reward_table(), 1e-9), || format!("true reward infeasible on mdp {i}"))?;
        instances += 1;
    }
    let RewardParams::Linear(theta) = &fit.estimate.params else {
        return Err("max-ent fit should be linear".into());
    };
    Ok(format!("greedy policy matches demos (theta {theta:.3?}); zero reward feasible on {instances} instances"))
}

fn c05_preference_ranking() -> Outcome {
    let mut rng = common::rng(5);
    let mdp = common::random_mdp(&mut rng, 4, 2);
    let features = random_features(&mut rng, 4, 2, 3);
    let theta_star = [1.0, -0.5, 2.0];
    let trajectories: Vec<Trajectory> = (0..12).map(|_| sample_trajectory(&mut rng, &mdp, 4)).collect();
    let truth: Vec<f64> = trajectories.iter().map(|t| trajectory_return(&features, &theta_star, t)).collect();
    let mut comparisons = Vec::new();
    while comparisons.len() < 200 {
        let i = rng.random_range(0..trajectories.len());
        let j = rng.random_range(0..trajectories.len());
        if truth[i] == truth[j] {
            continue;
        }
        comparisons.push(PairwiseComparison {
            left: trajectories[i].clone(),
            right: trajectories[j].clone(),
            preferred: if truth[i] > truth[j] { Side::Left } else { Side::Right },
        });
    }
    let fit = fit_preference_reward(&features, &comparisons, 0.5, 2000).map_err(|e| e.to_string())?;
    let RewardParams::Linear(theta) = &fit.estimate.params else {
        return Err("preference fit should be linear".into());
    };
    let fitted: Vec<f64> = trajectories.iter().map(|t| trajectory_return(&features, theta, t)).collect();
    let tau = common::kendall_tau(&truth, &fitted);
    ensure(tau == 1.0, || format!("Kendall tau {tau}"))?;
    Ok(format!("200 comparisons over 12 trajectories, tau = {tau}"))
}

/// States `c0..c5` pay `c` for `take` or lead to `goal` (paying 1) on `wait`,
/// so a discount `beta` waits exactly where `beta > c`.
fn threshold_mdp() -> Mdp {
    let costs = [0.55, 0.65, 0.75, 0.85, 0.925, 0.97];
    let n = costs.len() + 2;
    let (goal, done) = (costs.len(), costs.len() + 1);
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    let mut reward = vec![vec![0.0; 2]; n];
    for (s, &c) in costs.iter().enumerate() {
        transition[s][0][done] = 1.0;
        transition[s][1][goal] = 1.0;
        reward[s][0] = c;
    }
    transition[goal][0][done] = 1.0;
    transition[goal][1][goal] = 1.0;
    reward[goal][0] = 1.0;
    transition[done][0][done] = 1.0;
    transition[done][1][done] = 1.0;
    let mut states: Vec<String> = (0..costs.len()).map(|i| format!("c{i}")).collect();
    states.extend(["goal".to_string(), "done".to_string()]);
    Mdp::new(states, vec!["take".into(), "wait".into()], transition, reward).expect("threshold MDP")
}

fn c06_discount_inference() -> Outcome {
    let mdp = threshold_mdp();
    let behavior = solve(&mdp, 0.95).map_err(|e| e.to_string())?.policy;
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];
    let prior = [1.0 / 7.0; 7];
    let post = infer_discount(&mdp, &behavior, &grid, &prior, 0.01).map_err(|e| e.to_string())?;
    let argmax = post.argmax();
    ensure(argmax == 0.95, || format!("argmax {argmax}, posterior {:?}", post.entries))?;
    let total: f64 = post.entries.iter().map(|e| e.1).sum();
    ensure((total - 1.0).abs() <= 1e-9, || format!("posterior sums to {total}"))?;
    Ok(format!("argmax 0.95 with mass {:.4}, total {total}", post.probability(0.95).unwrap_or(f64::NAN)))
}

/// Preference at evaluation epoch `e`, recomputed from the discount formula.
fn brute_preference(spec: DiscountSpec, early: DelayedReward, late: DelayedReward, e: u32) -> Choice {
    let weight = |t: u32| match spec {
        DiscountSpec::Exponential { beta } => beta.powi(t as i32),
        DiscountSpec::Hyperbolic { k } => 1.0 / (1.0 + k * f64::from(t)),
    };
    let ev = early.reward * weight(early.delay - e);
    let lv = late.reward * weight(late.delay - e);
    if lv > ev * (1.0 + 1e-12) {
        Choice::Late
    } else {
        Choice::Early
    }
}

fn c07_time_consistency() -> Outcome {
    let rewards = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut exponential_cases = 0;
    for b in 1..=9 {
        let spec = DiscountSpec::Exponential { beta: f64::from(b) / 10.0 };
        for de in 0..=10u32 {
            for dl in (de + 1)..=10 {
                for &re in &rewards {
                    for &rl in &rewards {
                        let early = DelayedReward { reward: re, delay: de };
                        let late = DelayedReward { reward: rl, delay: dl };
                        let found = detect_preference_reversal(spec, early, late, 10).map_err(|e| e.to_string())?;
                        ensure(found.is_none(), || format!("exponential reversal {spec:?} {early:?} {late:?}"))?;
                        exponential_cases += 1;
                    }
                }
            }
        }
    }
    let mut hyperbolic = 0;
    let spec = DiscountSpec::Hyperbolic { k: 1.0 };
    for de in 0..=10u32 {
        for dl in (de + 1)..=10 {
            for &re in &rewards {
                for &rl in &rewards {
                    let early = DelayedReward { reward: re, delay: de };
                    let late = DelayedReward { reward: rl, delay: dl };
                    if let Some(r) = detect_preference_reversal(spec, early, late, 10).map_err(|e| e.to_string())? {
                        let first = brute_preference(spec, early, late, 0);
                        ensure(first == r.initial, || format!("initial preference mismatch for {early:?} {late:?}"))?;
                        for e in 1..r.epoch {
                            ensure(brute_preference(spec, early, late, e) == first, || {
                                format!("earlier reversal at {e} for {early:?} {late:?}")
                            })?;
                        }
                        ensure(brute_preference(spec, early, late, r.epoch) == r.reversed_to, || {
                            format!("no reversal at reported epoch {} for {early:?} {late:?}", r.epoch)
                        })?;
                        hyperbolic += 1;
                    }
                }
            }
        }
    }
    ensure(hyperbolic > 0, || "no hyperbolic reversal found".into())?;
    Ok(format!("0 reversals in {exponential_cases} exponential cases; {hyperbolic} hyperbolic reversals verified"))
}

fn c08_pareto() -> Outcome {
    let mut rng = common::rng(8);
    let principals: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
    let options: Vec<String> = (0..20).map(|i| format!("o{i}")).collect();
    for trial in 0..1000 {
        let values: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..20).map(|_| f64::from(rng.random_range(0..5u8))).collect())
            .collect();
        let m = UtilityMatrix::new(principals.clone(), options.clone(), values.clone()).map_err(|e| e.to_string())?;
        let got: BTreeSet<usize> = pareto_front(&m).into_iter().collect();
        let want = common::pareto_oracle(&values);
        ensure(got == want, || format!("trial {trial}: {got:?} != {want:?}"))?;
    }
    Ok("1000 matrices match the pairwise oracle".into())
}

fn borda_oracle(profile: &[Vec<usize>], n: usize) -> usize {
    let mut score = vec![0usize; n];
    for ballot in profile {
        for (rank, &o) in ballot.iter().enumerate() {
            score[o] += n - 1 - rank;
        }
    }
    (0..n).fold(0, |best, o| if score[o] > score[best] { o } else { best })
}

fn c09_manipulation() -> Outcome {
    let start = Instant::now();
    let hit = find_manipulation(VotingRule::Borda, 3, 3)
        .map_err(|e| e.to_string())?
        .ok_or("Borda 3x3 should be manipulable")?;
    let sincere = borda_oracle(&hit.profile, 3);
    let mut trial = hit.profile.clone();
    trial[hit.voter] = hit.insincere_ballot.clone();
    let manipulated = borda_oracle(&trial, 3);
    let rank = |o: usize| hit.profile[hit.voter].iter().position(|&x| x == o).expect("ranked");
    ensure(sincere == hit.sincere_outcome && manipulated == hit.manipulated_outcome, || {
        format!("oracle outcomes {sincere}/{manipulated} differ from reported")
    })?;
    ensure(rank(manipulated) < rank(sincere), || "reported manipulation does not help the voter".into())?;
    let dictator = find_manipulation(VotingRule::Dictator(0), 3, 3).map_err(|e| e.to_string())?;
    ensure(dictator.is_none(), || format!("dictator manipulable: {dictator:?}"))?;
    let took = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("Borda manipulated by voter {}, dictator never, {took:.2?}", hit.voter))
}

fn transform(t: &UtilityTable, f: impl Fn(f64) -> f64) -> UtilityTable {
    UtilityTable {
        role: t.role,
        values: t.values.iter().map(|(k, v)| (k.clone(), f(*v))).collect(),
    }
}

fn c10_loyalty_pairs() -> Outcome {
    let mut rng = common::rng(10);
    for trial in 0..1000 {
        let n = rng.random_range(1..=6);
        let a = common::random_table(&mut rng, Role::PrincipalTrue, n);
        let b = common::random_table(&mut rng, Role::AgentFiduciary, n);
        let nf = common::random_table(&mut rng, Role::AgentNonFiduciary, n);

        let got = alignment_check(&a, &b).map_err(|e| e.to_string())?;
        let want = common::pair_oracle(&a, &b, |x, y| x > y);
        let mut got_w = got.witnesses.clone();
        got_w.sort();
        ensure(got_w == want && got.is_aligned() == want.is_empty(), || format!("alignment trial {trial}"))?;

        let got = disgorgement_check(&nf, &b).map_err(|e| e.to_string())?;
        let want = common::pair_oracle(&nf, &b, |x, y| x <= y);
        let mut got_w = got.witnesses.clone();
        got_w.sort();
        ensure(got_w == want && got.is_aligned() == want.is_empty(), || format!("disgorgement trial {trial}"))?;

        let base = alignment_check(&a, &b).map_err(|e| e.to_string())?;
        let monotone: [&dyn Fn(f64) -> f64; 3] = [&|x| x.exp(), &|x| 3.0 * x - 7.0, &|x| x * x * x];
        for f in monotone {
            let left = alignment_check(&transform(&a, f), &b).map_err(|e| e.to_string())?;
            let right = alignment_check(&a, &transform(&b, f)).map_err(|e| e.to_string())?;
            ensure(left == base && right == base, || format!("transform changed verdict on trial {trial}"))?;
        }
    }
    Ok("1000 table pairs match the pair enumerator; verdicts stable under monotone maps".into())
}

/// S and K uniform bits; the report R observes both.
fn channel(report_rule: [usize; 4]) -> (Macid, PolicyProfile) {
    let nodes = vec![
        Node::chance("S", &["0", "1"]),
        Node::chance("K", &["0", "1"]),
        Node::decision("R", "sender", &["0", "1"]),
        Node::utility("U", "sender"),
    ];
    let parents = BTreeMap::from([
        ("R".to_string(), vec!["S".to_string(), "K".to_string()]),
        ("U".to_string(), vec!["R".to_string()]),
    ]);
    let m = Macid::new(
        nodes,
        parents,
        vec![
            Cpd { node: "S".into(), table: vec![vec![0.5, 0.5]] },
            Cpd { node: "K".into(), table: vec![vec![0.5, 0.5]] },
        ],
        BTreeMap::from([("U".to_string(), vec![0.0, 0.0])]),
        vec!["sender".into()],
    )
    .expect("channel model");
    let p = PolicyProfile::new().with_rule(DecisionRule::deterministic("R", &report_rule, 2));
    (m, p)
}

fn c11_information_flow() -> Outcome {
    // rows (S, K) = 00, 01, 10, 11
    let (m, p) = channel([0, 1, 1, 0]);
    let joint = joint_distribution(&m, &p).map_err(|e| e.to_string())?;
    let xor = mutual_information(&joint.pair("R", "S").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(xor.abs() <= 1e-12, || format!("XOR channel I = {xor}"))?;
    let oracle_xor = common::mi_oracle(&[vec![0.25, 0.25], vec![0.25, 0.25]]);
    ensure((xor - oracle_xor).abs() <= 1e-12, || "XOR oracle mismatch".into())?;

    let (m, p) = channel([0, 0, 1, 1]);
    let joint = joint_distribution(&m, &p).map_err(|e| e.to_string())?;
    let id = mutual_information(&joint.pair("R", "S").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(id == 1.0, || format!("identity channel I = {id}"))?;

    let dm = common::disclosure_macid();
    let voi = value_of_information(&dm, "D", "S").map_err(|e| e.to_string())?;
    let oracle = common::disclosure_voi_oracle();
    ensure((voi - 0.5).abs() <= 1e-9 && (voi - oracle).abs() <= 1e-9, || format!("VoI {voi}, oracle {oracle}"))?;
    Ok(format!("XOR I = {xor:e}, identity I = {id}, VoI = {voi} (enumeration {oracle})"))
}

fn c12_portfolio() -> Outcome {
    let p = PortfolioProblem::new(vec![0.1, 0.2], vec![vec![0.04, 0.0], vec![0.0, 0.04]], 1.0).map_err(|e| e.to_string())?;
    let w = prudent_investor_weights(&p).map_err(|e| e.to_string())?;
    ensure((w.weights[0] - 1.25).abs() <= 1e-6 && (w.weights[1] - 2.5).abs() <= 1e-6, || format!("weights {:?}", w.weights))?;
    let objective = |x: f64, y: f64| 0.1 * x + 0.2 * y - (0.04 * x * x + 0.04 * y * y);
    let mut best = f64::NEG_INFINITY;
    let steps = 1000;
    for i in 0..=steps {
        for j in 0..=steps {
            let x = -1.0 + 5.0 * f64::from(i) / f64::from(steps);
            let y = -1.0 + 5.0 * f64::from(j) / f64::from(steps);
            best = best.max(objective(x, y));
        }
    }
    let closed = objective(w.weights[0], w.weights[1]);
    ensure(closed >= best - 1e-12 && closed - best <= 1e-3, || format!("closed {closed}, grid {best}"))?;
    Ok(format!("w = {:?}, objective gap to grid {:.2e}", w.weights, closed - best))
}

fn c13_inductive_bias() -> Outcome {
    for prior in [0.0, 0.13, 0.5, 0.77, 1.0] {
        let r = inductive_bias_diagnostic(&BinaryEvidence { prior, likelihood1: 0.3, likelihood0: 0.3 }, 0.1)
            .map_err(|e| e.to_string())?;
        ensure(r.posterior == prior && r.prior_dominated && r.ratio == 1.0, || format!("prior {prior}: {r:?}"))?;
    }
    let mut rng = common::rng(13);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let prior: f64 = rng.random_range(0.0..1.0);
        let l1: f64 = rng.random_range(0.01..1.0);
        let l0: f64 = rng.random_range(0.01..1.0);
        let r = inductive_bias_diagnostic(&BinaryEvidence { prior, likelihood1: l1, likelihood0: l0 }, 0.1)
            .map_err(|e| e.to_string())?;
        let brute = prior * l1 / (prior * l1 + (1.0 - prior) * l0);
        let err = (r.posterior - brute).abs().max((r.ratio - l1 / l0).abs() / (l1 / l0));
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("prior {prior}, l1 {l1}, l0 {l0}: {} vs {brute}", r.posterior))?;
    }
    Ok(format!("unit ratio returns the prior; 1000 Bayes updates within {worst:.1e}"))
}

fn c14_determinism() -> Outcome {
    let mut seen = BTreeSet::new();
    let files = common::scenario_files();
    ensure(files.len() >= 4, || format!("only {} bundled scenarios", files.len()))?;
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let loaded = load_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let first = emit_report(&run_audit(&loaded, AuditOptions::default()), Format::Machine);
        let again = load_scenario(&text).map_err(|e| e.to_string())?;
        let report = run_audit(&again, AuditOptions::default());
        let second = emit_report(&report, Format::Machine);
        ensure(first == second, || format!("{}: reports differ between runs", path.display()))?;
        let golden = common::golden_dir().join(format!("{}.json", report.scenario));
        let expected = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
        ensure(expected == first, || format!("{}: report differs from golden file", report.scenario))?;

        let out = Command::new(env!("CARGO_BIN_EXE_fiduciary"))
            .args(["check", "--format", "machine"])
            .arg(path)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.code() == Some(report.exit_code()), || {
            format!("{}: exit {:?}, expected {}", report.scenario, out.status.code(), report.exit_code())
        })?;
        ensure(out.stdout == first.as_bytes(), || format!("{}: CLI output differs", report.scenario))?;

        seen.insert(report.status);
        if report.steps.iter().any(|s| s.status == Status::Skipped) {
            seen.insert(Status::Skipped);
        }
        ensure(report.steps.len() == 6 && report.steps.iter().map(|s| s.step).eq(Step::ALL), || {
            format!("{}: step records out of order", report.scenario)
        })?;
    }
    let all: BTreeSet<Status> = [Status::Pass, Status::Warn, Status::Fail, Status::Skipped].into();
    ensure(seen == all, || format!("corpus covers only {seen:?}"))?;
    Ok(format!("{} scenarios byte-identical, golden files match, exit codes honored", files.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("MDP optimality oracle", c01_mdp_optimality),
        ("Bellman contraction", c02_contraction),
        ("max-ent gradient vs finite differences", c03_maxent_gradient),
        ("IRL policy equivalence and zero-reward feasibility", c04_policy_equivalence),
        ("preference fitting ranks training trajectories", c05_preference_ranking),
        ("discount inference", c06_discount_inference),
        ("time consistency", c07_time_consistency),
        ("Pareto front vs dominance oracle", c08_pareto),
        ("manipulation search", c09_manipulation),
        ("loyalty pair conditions", c10_loyalty_pairs),
        ("information-flow oracles", c11_information_flow),
        ("prudent-investor closed form", c12_portfolio),
        ("inductive-bias diagnostic", c13_inductive_bias),
        ("end-to-end determinism", c14_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
