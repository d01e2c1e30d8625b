mod common;

use std::collections::BTreeMap;

use fiduciary::aggregation::{
    approval_winners, dominates, impartiality_check, pareto_front, ApprovalBallot, UtilityMatrix,
};
use fiduciary::assessment::{infer_discount, prudent_investor_weights, PortfolioProblem};
use fiduciary::care::{distribution_shift_score, inductive_bias_diagnostic, BinaryEvidence, DistributionPair, ShiftScore};
use fiduciary::loyalty::{alignment_check, no_conflict_check, Role, UtilityTable};
use fiduciary::macid::mutual_information;
use fiduciary::mdp::{
    detect_preference_reversal, discount_weight, evaluate_policy, solve, DelayedReward, DiscountSpec, Mdp,
};
use proptest::prelude::*;

fn stochastic_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    })
}

fn mdp_strategy() -> impl Strategy<Value = Mdp> {
    (2usize..5, 1usize..4).prop_flat_map(|(ns, na)| {
        (
            prop::collection::vec(prop::collection::vec(stochastic_row(ns), na), ns),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, na), ns),
        )
            .prop_map(move |(t, r)| {
                Mdp::new(
                    (0..ns).map(|i| format!("s{i}")).collect(),
                    (0..na).map(|i| format!("a{i}")).collect(),
                    t,
                    r,
                )
                .unwrap()
            })
    })
}

fn table(role: Role, values: &[f64]) -> UtilityTable {
    UtilityTable {
        role,
        values: values.iter().enumerate().map(|(i, v)| (format!("o{i}"), *v)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_values_match_policy_evaluation(mdp in mdp_strategy(), beta in 0.1f64..0.95) {
        let vf = solve(&mdp, beta).unwrap();
        prop_assert!(vf.converged);
        let exact = evaluate_policy(&mdp, &vf.policy, beta).unwrap();
        let iterated = common::policy_value_by_iteration(&mdp, &vf.policy, beta);
        for s in 0..mdp.n_states() {
            prop_assert!((exact.values[s] - iterated[s]).abs() < 1e-8);
            prop_assert!((vf.values[s] - exact.values[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn exponential_never_reverses(
        beta in 0.01f64..0.99,
        re in 0.1f64..10.0,
        rl in 0.1f64..10.0,
        de in 0u32..8,
        gap in 1u32..8,
    ) {
        let found = detect_preference_reversal(
            DiscountSpec::Exponential { beta },
            DelayedReward { reward: re, delay: de },
            DelayedReward { reward: rl, delay: de + gap },
            20,
        ).unwrap();
        prop_assert!(found.is_none());
    }

    #[test]
    fn discount_weights_decrease(k in 0.01f64..5.0, beta in 0.01f64..0.99, t in 0u32..50) {
        for spec in [DiscountSpec::Hyperbolic { k }, DiscountSpec::Exponential { beta }] {
            let now = discount_weight(spec, t).unwrap();
            let later = discount_weight(spec, t + 1).unwrap();
            prop_assert!(later < now && later > 0.0 && now <= 1.0);
        }
    }

    #[test]
    fn pareto_front_is_exactly_the_undominated_set(
        values in (1usize..4, 1usize..12).prop_flat_map(|(p, o)| {
            prop::collection::vec(prop::collection::vec(0u8..4, o), p)
        })
    ) {
        let rows: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        let m = UtilityMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            (0..rows[0].len()).map(|i| format!("o{i}")).collect(),
            rows.clone(),
        ).unwrap();
        let front = pareto_front(&m);
        prop_assert!(!front.is_empty());
        for o in 0..rows[0].len() {
            let dominated = (0..rows[0].len()).any(|d| dominates(&m.column(d), &m.column(o)));
            prop_assert_eq!(front.contains(&o), !dominated);
        }
    }

    #[test]
    fn approval_winners_have_the_top_count(
        ballots in prop::collection::vec(prop::collection::btree_set(0usize..5, 0..5), 1..8)
    ) {
        let options: Vec<String> = (0..5).map(|i| format!("x{i}")).collect();
        let ballots: Vec<ApprovalBallot> = ballots
            .iter()
            .enumerate()
            .map(|(i, b)| ApprovalBallot { voter: format!("v{i}"), approved: b.iter().map(|&o| options[o].clone()).collect() })
            .collect();
        let out = approval_winners(&ballots, &options).unwrap();
        let top = *out.counts.values().max().unwrap();
        for (o, c) in &out.counts {
            prop_assert_eq!(out.winners.contains(o), *c == top);
        }
        prop_assert_eq!(out.tied, out.winners.len() > 1);
    }

    #[test]
    fn impartiality_ignores_weight_scale(
        weights in prop::collection::vec(0.0f64..5.0, 1..5),
        agent_weight in prop_oneof![Just(0.0), 0.1f64..1.0],
        scale in 0.1f64..10.0,
        cap in 0.2f64..1.0,
    ) {
        let mut w: BTreeMap<String, f64> = weights.iter().enumerate().map(|(i, x)| (format!("p{i}"), *x)).collect();
        w.insert("agent".into(), agent_weight);
        let scaled: BTreeMap<String, f64> = w.iter().map(|(k, v)| (k.clone(), v * scale)).collect();
        let a = impartiality_check(&w, "agent", None, Some(cap)).unwrap();
        let b = impartiality_check(&scaled, "agent", None, Some(cap)).unwrap();
        prop_assert_eq!(a.passed, b.passed);
        prop_assert_eq!(a.violations.len(), b.violations.len());
        if agent_weight > 0.0 {
            prop_assert!(!a.passed);
        }
    }

    #[test]
    fn alignment_is_reflexive_and_monotone_invariant(values in prop::collection::vec(-3i32..3, 1..7), shift in -5.0f64..5.0) {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let p = table(Role::PrincipalTrue, &v);
        prop_assert!(alignment_check(&p, &table(Role::AgentFiduciary, &v)).unwrap().is_aligned());
        let moved: Vec<f64> = v.iter().map(|x| (x + shift).exp()).collect();
        prop_assert!(alignment_check(&p, &table(Role::AgentFiduciary, &moved)).unwrap().is_aligned());
        let reversed: Vec<f64> = v.iter().map(|x| -x).collect();
        let verdict = no_conflict_check(&table(Role::SystemObjective, &reversed), &p).unwrap();
        let distinct = v.iter().any(|x| *x != v[0]);
        prop_assert_eq!(verdict.is_aligned(), !distinct);
    }

    #[test]
    fn mutual_information_bounds(cells in prop::collection::vec(0.0f64..1.0, 4)) {
        let total: f64 = cells.iter().sum();
        prop_assume!(total > 1e-6);
        let p: Vec<f64> = cells.iter().map(|c| c / total).collect();
        let joint: BTreeMap<(u8, u8), f64> = [((0, 0), p[0]), ((0, 1), p[1]), ((1, 0), p[2]), ((1, 1), p[3])].into();
        let swapped: BTreeMap<(u8, u8), f64> = joint.iter().map(|(&(x, y), &v)| ((y, x), v)).collect();
        let mi = mutual_information(&joint).unwrap();
        let oracle = common::mi_oracle(&[vec![p[0], p[1]], vec![p[2], p[3]]]);
        prop_assert!(mi >= -1e-12 && mi <= 1.0 + 1e-12);
        prop_assert!((mi - oracle).abs() < 1e-12);
        prop_assert!((mi - mutual_information(&swapped).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bayes_posterior_is_a_probability(prior in 0.0f64..=1.0, l1 in 0.001f64..=1.0, l0 in 0.001f64..=1.0) {
        let r = inductive_bias_diagnostic(&BinaryEvidence { prior, likelihood1: l1, likelihood0: l0 }, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.posterior));
        if l1 > l0 { prop_assert!(r.posterior >= prior - 1e-15); }
        if l1 < l0 { prop_assert!(r.posterior <= prior + 1e-15); }
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_identity(train in stochastic_row(4), deploy in stochastic_row(4)) {
        let support: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();
        let score = distribution_shift_score(&DistributionPair { support: support.clone(), train: train.clone(), deploy }).unwrap();
        let ShiftScore::Finite { kl_nats } = score else { panic!("full support cannot violate continuity") };
        prop_assert!(kl_nats >= -1e-12);
        let same = distribution_shift_score(&DistributionPair { support, train: train.clone(), deploy: train }).unwrap();
        prop_assert_eq!(same, ShiftScore::Finite { kl_nats: 0.0 });
    }

    #[test]
    fn portfolio_satisfies_first_order_condition(
        mu in prop::collection::vec(-0.5f64..0.5, 2),
        a in 0.01f64..0.2, b in 0.01f64..0.2, rho in -0.9f64..0.9,
        lambda in 0.1f64..5.0,
    ) {
        let c = rho * (a * b).sqrt();
        let sigma = vec![vec![a, c], vec![c, b]];
        let p = PortfolioProblem::new(mu.clone(), sigma.clone(), lambda).unwrap();
        let w = prudent_investor_weights(&p).unwrap().weights;
        for i in 0..2 {
            let grad = mu[i] - 2.0 * lambda * (sigma[i][0] * w[0] + sigma[i][1] * w[1]);
            prop_assert!(grad.abs() < 1e-9);
        }
    }

    #[test]
    fn discount_posterior_is_normalized(mdp in mdp_strategy(), beta in 0.2f64..0.9) {
        let behavior = solve(&mdp, beta).unwrap().policy;
        let grid = [0.3, 0.5, 0.7, 0.9];
        let post = infer_discount(&mdp, &behavior, &grid, &[0.25; 4], 0.5).unwrap();
        prop_assert!((post.total() - 1.0).abs() < 1e-9);
        prop_assert!(post.entries.windows(2).all(|w| w[0].0 < w[1].0));
    }
}
