use proptest::prelude::*;

use reassign::fixtures;
use reassign::generate::{gen_tiny, TinyParams};
use reassign::policy::{PolicyKind, Prepared};
use reassign::sim::{profit_ceiling, run_monte_carlo, run_trial, trial_profits, trial_sequence, RunReport};
use reassign::Budget;

fn prepared(seed: u64) -> Prepared {
    Prepared::new(&gen_tiny(seed, &TinyParams::default())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trials_respect_budgets_and_capacities(
        inst_seed in 0u64..500,
        trial_seed in any::<u64>(),
        k in 0usize..4,
    ) {
        let prep = prepared(inst_seed);
        let policy = PolicyKind::ALL[k];
        let seq = trial_sequence(&prep, trial_seed, 0);
        let out = run_trial(&prep, policy, &seq, trial_seed).unwrap();

        prop_assert!(out.profit >= 0.0);
        prop_assert!(out.profit <= profit_ceiling(&prep, &seq) + 1e-9);
        let logged: f64 = out.log.iter().filter(|r| r.accepted).map(|r| prep.instance.edges[r.edge].weight).sum();
        prop_assert!((logged - out.profit).abs() < 1e-9);

        for (u, a) in prep.instance.agents.iter().enumerate() {
            let mine: Vec<_> = out.log.iter().filter(|r| r.agent == u).collect();
            prop_assert_eq!(mine.iter().filter(|r| !r.accepted).count() as u32, out.rejected[u]);
            if let Budget::Finite(d) = a.budget {
                prop_assert!(out.rejected[u] <= d);
                // Nothing after the last allowed rejection.
                if out.rejected[u] == d {
                    let last = mine.iter().rposition(|r| !r.accepted).unwrap();
                    prop_assert_eq!(last, mine.len() - 1);
                }
            }
            // One assignment per slot per agent.
            prop_assert!(mine.windows(2).all(|w| w[0].t < w[1].t));
        }
        for t in 0..seq.len() {
            let here: Vec<_> = out.log.iter().filter(|r| r.t == t).collect();
            if let Some(v) = seq.slots[t] {
                prop_assert!(here.len() <= prep.instance.task_types[v].capacity as usize);
                prop_assert!(here.iter().all(|r| prep.graph.edge_type[r.edge] == v));
            } else {
                prop_assert!(here.is_empty());
            }
        }

        prop_assert_eq!(&out, &run_trial(&prep, policy, &seq, trial_seed).unwrap());
    }
}

#[test]
fn greedy_is_deterministic_given_outcomes() {
    let prep = prepared(12);
    let a = trial_profits(&prep, PolicyKind::Greedy, 200, 4).unwrap();
    let b = trial_profits(&prep, PolicyKind::Greedy, 200, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, trial_profits(&prep, PolicyKind::Greedy, 200, 5).unwrap());
}

#[test]
fn report_statistics() {
    let r = RunReport::from_profits(PolicyKind::Random, &[1.0, 2.0, 3.0, 6.0], 4.0);
    assert_eq!((r.policy.as_str(), r.n), ("random", 4));
    assert!((r.mean - 3.0).abs() < 1e-12);
    assert!((r.std - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((r.stderr - r.std / 2.0).abs() < 1e-12);
    assert!((r.ratio - 0.75).abs() < 1e-12);
    assert_eq!(RunReport::from_profits(PolicyKind::Greedy, &[0.0], 0.0).ratio, 1.0);
}

#[test]
fn delayed_reward_proposed_matches_value_table() {
    let prep = Prepared::new(&fixtures::delayed_reward(0.1)).unwrap();
    let want = prep.tables.expected_profit();
    let r = run_monte_carlo(&prep, PolicyKind::Proposed, 100_000, 8).unwrap();
    assert!((r.mean - want).abs() <= 3.0 * r.stderr, "{} vs {want} (se {})", r.mean, r.stderr);
}

#[test]
fn prophet_pair_policies_earn_one() {
    let prep = Prepared::new(&fixtures::prophet_pair(0.1)).unwrap();
    for k in [PolicyKind::Proposed, PolicyKind::Greedy] {
        let r = run_monte_carlo(&prep, k, 20_000, 2).unwrap();
        assert!((r.mean - 1.0).abs() <= 3.0 * r.stderr + 1e-12, "{k}: {}", r.mean);
    }
}
