//! Property suites for the module-level invariants. Chains and instances
//! are drawn through the seeded generators (proptest supplies the seeds),
//! keeping the strategies simple and the hypothesis conditions exact.

use bandit_forge::counter::OpCounter;
use bandit_forge::evaluate::{evaluate, evaluate_distribution, evaluate_multi_reward};
use bandit_forge::gen::{random_chain, random_instance, random_labeling, GenConfig};
use bandit_forge::labeling::Labeling;
use bandit_forge::linalg::{lu_solve, Mat};
use bandit_forge::model::{
    is_transient, BanditChain, Hypothesis, Instance, MultiState, TRANSIENCE_TOL,
};
use bandit_forge::preference::{
    argbest, categorize, interchange_weakly_preferred, weakly_preferred, StateStats,
};
use bandit_forge::tableau::{finalize_instance, hypothesis_preserved, triangularize};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HYPOTHESES: [Hypothesis; 3] = [Hypothesis::RN, Hypothesis::RA, Hypothesis::RS];

fn hypothesis_strategy() -> impl Strategy<Value = Hypothesis> {
    (0usize..3).prop_map(|i| HYPOTHESES[i])
}

/// Dyadic state stats within the hypothesis domain; exact ties occur with
/// real probability, which the equality branch of weak preference needs.
fn stats_strategy(hypothesis: Hypothesis) -> BoxedStrategy<StateStats> {
    let r = match hypothesis {
        Hypothesis::RN => (-32i32..=32).boxed(),
        Hypothesis::RA => (-32i32..=0).boxed(),
        Hypothesis::RS => (0i32..=32).boxed(),
    };
    let a = match hypothesis {
        Hypothesis::RN => (0i32..=64).boxed(),
        Hypothesis::RA | Hypothesis::RS => (0i32..=80).boxed(),
    };
    (r, a)
        .prop_map(move |(r, a)| categorize(r as f64 / 32.0, a as f64 / 64.0, hypothesis).unwrap())
        .boxed()
}

proptest! {
    /// Weak preference is exactly the interchange comparison refined by
    /// categories.
    #[test]
    fn weak_preference_matches_the_interchange_characterization(
        hypothesis in hypothesis_strategy(),
    ) {
        let runner = &mut proptest::test_runner::TestRunner::default();
        let strategy = stats_strategy(hypothesis);
        for _ in 0..64 {
            let i = strategy.new_tree(runner).unwrap().current();
            let j = strategy.new_tree(runner).unwrap().current();
            prop_assert_eq!(
                weakly_preferred(&i, &j),
                interchange_weakly_preferred(&i, &j),
                "{:?} vs {:?}", i, j
            );
        }
    }

    /// Weak preference is a total preorder: total and transitive.
    #[test]
    fn weak_preference_is_a_total_preorder(hypothesis in hypothesis_strategy()) {
        let runner = &mut proptest::test_runner::TestRunner::default();
        let strategy = stats_strategy(hypothesis);
        for _ in 0..64 {
            let a = strategy.new_tree(runner).unwrap().current();
            let b = strategy.new_tree(runner).unwrap().current();
            let c = strategy.new_tree(runner).unwrap().current();
            prop_assert!(weakly_preferred(&a, &b) || weakly_preferred(&b, &a));
            if weakly_preferred(&a, &b) && weakly_preferred(&b, &c) {
                prop_assert!(weakly_preferred(&a, &c));
            }
        }
    }

    /// argbest returns a state weakly preferable to all candidates, is
    /// permutation invariant, and consumes at most |U| divisions and
    /// comparisons.
    #[test]
    fn argbest_contract(
        hypothesis in hypothesis_strategy(),
        seed in any::<u64>(),
        size in 1usize..8,
        rotate in 0usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = random_chain(hypothesis, size, 0.3, &mut rng);
        let mut candidates: Vec<(usize, f64, f64)> = (0..size)
            .map(|i| (i, chain.r[i], 1.0 - chain.amp[i]))
            .collect();
        let mut counter = OpCounter::new();
        let (best, best_stats) = argbest(&candidates, hypothesis, &mut counter).unwrap();
        prop_assert!(counter.divs <= size as u64);
        prop_assert!(counter.comparisons <= size as u64);
        for &(id, r, oma) in &candidates {
            let stats = categorize(r, 1.0 - oma, hypothesis).unwrap();
            prop_assert!(weakly_preferred(&best_stats, &stats), "candidate {} beats best", id);
        }
        candidates.rotate_left(rotate % size);
        let mut counter2 = OpCounter::new();
        let (best2, _) = argbest(&candidates, hypothesis, &mut counter2).unwrap();
        prop_assert_eq!(best, best2);
    }

    /// Row operations preserve linear-system solutions: the finalized data
    /// solves to the same values as the original.
    #[test]
    fn triangularization_preserves_solutions(
        hypothesis in hypothesis_strategy(),
        seed in any::<u64>(),
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = random_chain(hypothesis, n, 0.2, &mut rng);
        let labeling = random_labeling(n, &mut rng);
        let order: Vec<usize> = (1..=n).map(|l| labeling.state_with_label(l)).collect();
        let mut counter = OpCounter::new();
        let tableau = triangularize(&chain, &order, &mut counter).unwrap();
        let (r_t, q_t) = tableau.finalized_data().unwrap();
        let solve = |q: &[Vec<f64>], r: &[f64]| {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = if i == j { 1.0 - q[i][j] } else { -q[i][j] };
                }
            }
            lu_solve(&a, r).unwrap()
        };
        let original = solve(&chain.q, &chain.r);
        let finalized = solve(&q_t, &r_t);
        for (a, b) in original.iter().zip(&finalized) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    /// Finalized rates are strictly triangular in label order, hence
    /// nilpotent: the n-th power is exactly zero.
    #[test]
    fn finalized_rates_are_triangular_and_nilpotent(
        hypothesis in hypothesis_strategy(),
        seed in any::<u64>(),
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = random_chain(hypothesis, n, 0.2, &mut rng);
        let labeling = random_labeling(n, &mut rng);
        let order: Vec<usize> = (1..=n).map(|l| labeling.state_with_label(l)).collect();
        let mut counter = OpCounter::new();
        let tableau = triangularize(&chain, &order, &mut counter).unwrap();
        let (r_t, q_t) = tableau.finalized_data().unwrap();
        for (i, row) in q_t.iter().enumerate() {
            for (j, &rate) in row.iter().enumerate() {
                if rate != 0.0 {
                    prop_assert!(labeling.label(j) > labeling.label(i));
                }
            }
        }
        prop_assert!(hypothesis_preserved(&r_t, &q_t, hypothesis));
        // structural zeros make the n-th power exactly zero
        let mut power = q_t.clone();
        for _ in 1..n {
            let mut next = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut sum = 0.0;
                    for (k, row) in q_t.iter().enumerate() {
                        sum += power[i][k] * row[j];
                    }
                    next[i][j] = sum;
                }
            }
            power = next;
        }
        for row in &power {
            for &v in row {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    /// Every condition the input data satisfies persists through the row
    /// operations, not just the declared hypothesis: substochastic rows
    /// stay substochastic, reward signs stay put, transience survives.
    #[test]
    fn all_satisfied_conditions_persist(
        hypothesis in hypothesis_strategy(),
        seed in any::<u64>(),
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = random_chain(hypothesis, n, 0.3, &mut rng);
        let order: Vec<usize> = {
            let labeling = random_labeling(n, &mut rng);
            (1..=n).map(|l| labeling.state_with_label(l)).collect()
        };
        let before_substochastic = chain.amp.iter().all(|&a| a <= 1.0 + 1e-12);
        let before_nonpositive = chain.r.iter().all(|&r| r <= 0.0);
        let before_nonnegative = chain.r.iter().all(|&r| r >= 0.0);
        let mut counter = OpCounter::new();
        let tableau = triangularize(&chain, &order, &mut counter).unwrap();
        let (r_t, q_t) = tableau.finalized_data().unwrap();
        prop_assert!(is_transient(&q_t, TRANSIENCE_TOL));
        if before_substochastic {
            prop_assert!(q_t.iter().all(|row| row.iter().sum::<f64>() <= 1.0 + 1e-9));
        }
        if before_nonpositive {
            prop_assert!(r_t.iter().all(|&r| r <= 0.0));
        }
        if before_nonnegative {
            prop_assert!(r_t.iter().all(|&r| r >= 0.0));
        }
    }

    /// The transience test agrees with an independent power-iteration
    /// check on matrices whose spectral radius is bounded away from 1.
    #[test]
    fn transience_agrees_with_power_iteration(
        seed in any::<u64>(),
        n in 1usize..6,
        expansive in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = vec![vec![0.0; n]; n];
        for row in q.iter_mut() {
            use rand::Rng;
            // radius at most 0.65 so 64 n power steps certainly reach 1e-9
            let target: f64 = if expansive {
                rng.gen_range(1.05..1.5)
            } else {
                rng.gen_range(0.1..0.65)
            };
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for (slot, v) in row.iter_mut().zip(raw) {
                *slot = v / sum * target;
            }
        }
        let fast = is_transient(&q, TRANSIENCE_TOL);
        // power iteration: some q^t has sup norm below 1e-9, t <= 64 n
        let mut m = q.clone();
        let inf_norm = |m: &Vec<Vec<f64>>| {
            m.iter()
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0_f64, f64::max)
        };
        let mut slow = false;
        for _ in 0..64 * n {
            if inf_norm(&m) < 1e-9 {
                slow = true;
                break;
            }
            if inf_norm(&m) > 1e12 {
                break;
            }
            let mut next = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut sum = 0.0;
                    for (k, row) in q.iter().enumerate() {
                        sum += m[i][k] * row[j];
                    }
                    next[i][j] = sum;
                }
            }
            m = next;
        }
        prop_assert_eq!(fast, !expansive);
        prop_assert_eq!(slow, !expansive);
    }

    /// Under the risk-neutral hypothesis with a unit start, the evaluator
    /// coefficients are probabilities of play.
    #[test]
    fn coefficients_are_probabilities_under_rn(
        seed in any::<u64>(),
        k in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GenConfig::new(Hypothesis::RN, k, 3);
        let base = random_instance(&cfg, &mut rng);
        // unit rewards per play
        let chains: Vec<BanditChain> = base
            .chains()
            .iter()
            .map(|c| BanditChain::new(vec![1.0; c.n_states()], c.q.clone()).unwrap())
            .collect();
        let instance = Instance::new(chains, Hypothesis::RN).unwrap();
        let labeling = random_labeling(instance.n_states(), &mut rng);
        let start = bandit_forge::gen::random_multistate(&instance, &mut rng);
        let mut counter = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut counter).unwrap();
        let result = evaluate(&instance, &labeling, &start, &finalized, &mut counter).unwrap();
        for (g, &z) in result.z.iter().enumerate() {
            prop_assert!(z >= -1e-12, "negative coefficient at {}", g);
            prop_assert!(z <= 1.0 + 1e-9, "coefficient above one at {}", g);
        }
        for (b, &local) in start.0.iter().enumerate() {
            let g = instance.global_id(b, local);
            prop_assert!(result.z[g] <= 1.0 + 1e-12);
        }
    }

    /// One extended pass prices every reward type exactly as separate runs
    /// would: the row operations and flows do not depend on the rewards.
    #[test]
    fn multi_reward_pass_equals_separate_runs(
        seed in any::<u64>(),
        k in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GenConfig::new(Hypothesis::RN, k, 3);
        let instance = random_instance(&cfg, &mut rng);
        let n = instance.n_states();
        let labeling = random_labeling(n, &mut rng);
        let start = bandit_forge::gen::random_multistate(&instance, &mut rng);
        let reward_sets = bandit_forge::gen::random_rewards(n, 3, &mut rng);
        let mut counter = OpCounter::new();
        let combined =
            evaluate_multi_reward(&instance, &labeling, &start, &reward_sets, &mut counter)
                .unwrap();
        for (w, rewards) in reward_sets.iter().enumerate() {
            let single_instance = instance.with_rewards(rewards).unwrap();
            let mut c = OpCounter::new();
            let single = evaluate_multi_reward(
                &single_instance,
                &labeling,
                &start,
                std::slice::from_ref(rewards),
                &mut c,
            )
            .unwrap();
            prop_assert_eq!(combined.values[w], single.values[0]);
        }
    }

    /// A product-form initial distribution evaluates to the mixture of the
    /// unit-start values.
    #[test]
    fn distribution_evaluation_is_the_mixture(
        seed in any::<u64>(),
        hypothesis in hypothesis_strategy(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GenConfig::new(hypothesis, 2, 3);
        let instance = random_instance(&cfg, &mut rng);
        let labeling = random_labeling(instance.n_states(), &mut rng);
        let mut counter = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut counter).unwrap();
        // dyadic marginals that sum to 1 exactly
        let init: Vec<Vec<f64>> = (0..instance.n_bandits())
            .map(|k| {
                use rand::Rng;
                let n_k = instance.chain(k).n_states();
                let mut weights: Vec<u32> = (0..n_k).map(|_| rng.gen_range(0..=8)).collect();
                if weights.iter().all(|&w| w == 0) {
                    weights[0] = 1;
                }
                let total: u32 = weights.iter().sum();
                weights.iter().map(|&w| w as f64 / total as f64).collect()
            })
            .collect();
        let mixed =
            evaluate_distribution(&instance, &labeling, &init, &finalized, &mut counter).unwrap();
        let mut expected = 0.0;
        for s in instance.multistate_space(1_000_000).unwrap() {
            let weight: f64 = s.0.iter().enumerate().map(|(k, &i)| init[k][i]).product();
            if weight == 0.0 {
                continue;
            }
            let v = evaluate(&instance, &labeling, &s, &finalized, &mut counter)
                .unwrap()
                .value();
            expected += weight * v;
        }
        prop_assert!(
            (mixed.value() - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
            "mixture {} vs expected {}", mixed.value(), expected
        );
    }
}

#[test]
fn categorize_rejects_out_of_domain_data() {
    assert!(categorize(1.0, 1.5, Hypothesis::RN).is_err());
    assert!(categorize(0.5, 0.5, Hypothesis::RA).is_err());
    assert!(categorize(-0.5, 0.5, Hypothesis::RS).is_err());
}

#[test]
fn labeling_roundtrip_forms() {
    let labeling = Labeling::new(vec![2, 3, 1]).unwrap();
    let order: Vec<usize> = (1..=3).map(|l| labeling.state_with_label(l)).collect();
    assert_eq!(Labeling::from_order(&order).unwrap(), labeling);
}

#[test]
fn multistate_space_matches_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for hypothesis in HYPOTHESES {
        let cfg = GenConfig::new(hypothesis, 3, 3);
        let instance = random_instance(&cfg, &mut rng);
        let space = instance.multistate_space(1_000_000).unwrap();
        assert_eq!(space.len(), instance.multistate_count());
        // lexicographic and duplicate-free
        for pair in space.windows(2) {
            assert!(pair[0].0 < pair[1].0);
        }
        let _ = MultiState(space[0].0.clone());
    }
}
