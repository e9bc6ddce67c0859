//! Exact policy evaluation for priority rules, without forming the joint
//! state space.
//!
//! With finalized data every state is played at most once, so the expected
//! utility of the rule keyed to a labeling is a linear combination of the
//! finalized rewards: `V = sum_i z(i) r~(i)`. The coefficients are computed
//! by a single sweep over labels `1..|N|`, maintaining one aggregate flow
//! vector per bandit: `y_k(j)` is the aggregate transition rate of bandit
//! `k` from its start state to `j` due to play at multi-states whose lowest
//! label has already been processed. Processing label `n` (state `i` of
//! bandit `k`) adds
//!
//! ```text
//! z(i) = y_k(i) * prod_{p != k} [ sum_j y_p(j) ]
//! ```
//!
//! to the picture, pushes `y_k(i) q~(i, j)` forward to the states `j` with
//! higher labels, and zeroes `y_k(i)`.
//!
//! The per-bandit sums `w_p` and their product `w` are maintained
//! incrementally (one division and one multiplication per step, as the
//! operation-count contract assumes), with a recomputation fallback when a
//! sum underflows or accumulated drift exceeds `1e-10` relative. The last
//! state of each bandit closes out its flow outside the incremental
//! accounting: afterwards that bandit's sum is zero and every later
//! coefficient vanishes, since a play of that state stops everything.

use crate::counter::OpCounter;
use crate::labeling::{Labeling, LabelingError};
use crate::model::{Hypothesis, Instance, ModelError, MultiState};
use crate::tableau::{Finalized, Tableau, TableauError};
use thiserror::Error;

/// Below this, a bandit's flow sum is treated as dead and the product of
/// the other bandits' sums is recomputed directly instead of divided out.
const SUM_UNDERFLOW: f64 = 1e-300;

/// Steps between incremental-product drift checks.
const DRIFT_CHECK_EVERY: usize = 4096;

const DRIFT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error("finalized data for bandit {bandit} does not match the labeling: {detail}")]
    MismatchedData { bandit: usize, detail: String },
    #[error("initial distribution for bandit {bandit} sums to {sum}, expected 1")]
    BadDistribution { bandit: usize, sum: f64 },
    #[error("initial distribution for bandit {bandit} has a negative entry at state {state}")]
    NegativeDistribution { bandit: usize, state: usize },
    #[error(
        "multi-reward evaluation requires the risk-neutral hypothesis: under exponential \
         utility the transition rates vary with the reward type"
    )]
    RequiresRiskNeutral,
    #[error("expected {expected} reward vectors of length {len}, got {got}")]
    BadRewardSets {
        expected: String,
        len: usize,
        got: String,
    },
}

/// Result of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Expected utility per reward set; `values[0]` is the primary one.
    pub values: Vec<f64>,
    /// Coefficients by global state id: `V = sum_i z(i) r~(i)`. Under the
    /// risk-neutral hypothesis with a unit start, `z(i)` is the probability
    /// that state `i`'s bandit is played while in state `i`.
    pub z: Vec<f64>,
    /// Operations consumed by this evaluation.
    pub ops: OpCounter,
}

impl EvalResult {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Expected utility of the priority rule keyed to `labeling`, starting from
/// the multi-state `start`, using finalized data produced under the same
/// labeling.
pub fn evaluate(
    instance: &Instance,
    labeling: &Labeling,
    start: &MultiState,
    finalized: &[Finalized],
    counter: &mut OpCounter,
) -> Result<EvalResult, EvalError> {
    instance.check_multistate(start)?;
    check_finalized(instance, labeling, finalized)?;
    let init = unit_init(instance, start);
    run(instance, labeling, finalized, init, false, counter)
}

/// Expected utility from a product-form initial distribution: one marginal
/// per bandit, each nonnegative and summing to 1.
pub fn evaluate_distribution(
    instance: &Instance,
    labeling: &Labeling,
    init: &[Vec<f64>],
    finalized: &[Finalized],
    counter: &mut OpCounter,
) -> Result<EvalResult, EvalError> {
    check_finalized(instance, labeling, finalized)?;
    if init.len() != instance.n_bandits() {
        return Err(EvalError::BadRewardSets {
            expected: format!("{} marginals", instance.n_bandits()),
            len: 0,
            got: format!("{}", init.len()),
        });
    }
    for (k, marginal) in init.iter().enumerate() {
        let n_k = instance.chain(k).n_states();
        if marginal.len() != n_k {
            return Err(EvalError::MismatchedData {
                bandit: k,
                detail: format!("marginal has {} entries, chain has {n_k}", marginal.len()),
            });
        }
        if let Some(state) = marginal.iter().position(|&v| v < 0.0) {
            return Err(EvalError::NegativeDistribution { bandit: k, state });
        }
        let sum: f64 = marginal.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::BadDistribution { bandit: k, sum });
        }
    }
    run(instance, labeling, finalized, init.to_vec(), true, counter)
}

/// Evaluate several reward types that share the instance's transition
/// rates, in one pass: the row operations run once on a tableau extended
/// with all reward columns, and one evaluator sweep prices every type
/// (the flow coefficients do not depend on the rewards). Risk-neutral
/// only: exponential utilities fold payoffs into the rates, so the rates
/// would vary with the reward type.
pub fn evaluate_multi_reward(
    instance: &Instance,
    labeling: &Labeling,
    start: &MultiState,
    reward_sets: &[Vec<f64>],
    counter: &mut OpCounter,
) -> Result<EvalResult, EvalError> {
    if instance.hypothesis() != Hypothesis::RN {
        return Err(EvalError::RequiresRiskNeutral);
    }
    instance.check_multistate(start)?;
    labeling.check_size(instance)?;
    let n = instance.n_states();
    if reward_sets.is_empty() || reward_sets.iter().any(|r| r.len() != n) {
        return Err(EvalError::BadRewardSets {
            expected: "at least one".into(),
            len: n,
            got: format!(
                "{} sets with lengths {:?}",
                reward_sets.len(),
                reward_sets.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    }
    let mut finalized = Vec::with_capacity(instance.n_bandits());
    for k in 0..instance.n_bandits() {
        let chain = instance.chain(k);
        let off = instance.offset(k);
        let slices: Vec<&[f64]> = reward_sets
            .iter()
            .map(|r| &r[off..off + chain.n_states()])
            .collect();
        let mut tableau = Tableau::new(k, &chain.q, &slices, false, counter)?;
        for i in labeling.bandit_order(instance, k) {
            tableau.step(i, counter)?;
        }
        finalized.push(Finalized::from_tableau(&tableau)?);
    }
    let init = unit_init(instance, start);
    run(instance, labeling, &finalized, init, false, counter)
}

fn unit_init(instance: &Instance, start: &MultiState) -> Vec<Vec<f64>> {
    (0..instance.n_bandits())
        .map(|k| {
            let mut y = vec![0.0; instance.chain(k).n_states()];
            y[start.0[k]] = 1.0;
            y
        })
        .collect()
}

/// Shape and triangularity consistency of finalized data against a
/// labeling: a finalized rate may only lead to a higher label.
fn check_finalized(
    instance: &Instance,
    labeling: &Labeling,
    finalized: &[Finalized],
) -> Result<(), EvalError> {
    labeling.check_size(instance)?;
    if finalized.len() != instance.n_bandits() {
        return Err(EvalError::MismatchedData {
            bandit: finalized.len(),
            detail: format!(
                "{} finalized bandits for an instance with {}",
                finalized.len(),
                instance.n_bandits()
            ),
        });
    }
    for (k, fin) in finalized.iter().enumerate() {
        let n_k = instance.chain(k).n_states();
        if fin.n_states() != n_k || fin.rewards.iter().any(|r| r.len() != n_k) {
            return Err(EvalError::MismatchedData {
                bandit: k,
                detail: format!(
                    "finalized data has {} states, chain has {n_k}",
                    fin.n_states()
                ),
            });
        }
        let off = instance.offset(k);
        for i in 0..n_k {
            for j in 0..n_k {
                if fin.q[i][j] != 0.0 && labeling.label(off + j) <= labeling.label(off + i) {
                    return Err(EvalError::MismatchedData {
                        bandit: k,
                        detail: format!(
                            "rate from state {i} to {j} is nonzero but the label does not increase"
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

fn run(
    instance: &Instance,
    labeling: &Labeling,
    finalized: &[Finalized],
    mut y: Vec<Vec<f64>>,
    distribution_init: bool,
    counter: &mut OpCounter,
) -> Result<EvalResult, EvalError> {
    let start_ops = *counter;
    let n_bandits = instance.n_bandits();
    let n_rewards = finalized[0].rewards.len();
    let mut sums = vec![1.0_f64; n_bandits];
    let mut product = 1.0_f64;
    if distribution_init {
        // the general initialization pays for the sums and their product
        for (k, y_k) in y.iter().enumerate() {
            sums[k] = y_k.iter().sum();
            counter.add(y_k.len() as u64 - 1);
        }
        product = sums.iter().product();
        counter.mul(n_bandits as u64 - 1);
    }
    let mut processed: Vec<Vec<bool>> = (0..n_bandits)
        .map(|k| vec![false; instance.chain(k).n_states()])
        .collect();
    let mut remaining: Vec<usize> = (0..n_bandits)
        .map(|k| instance.chain(k).n_states())
        .collect();
    let mut values = vec![0.0_f64; n_rewards];
    let mut z = vec![0.0_f64; instance.n_states()];
    let product_excluding = |sums: &[f64], k: usize| -> f64 {
        sums.iter()
            .enumerate()
            .filter(|&(p, _)| p != k)
            .map(|(_, &v)| v)
            .product()
    };
    for lab in 1..=instance.n_states() {
        let g = labeling.state_with_label(lab);
        let (k, i) = instance.locate(g)?;
        let fin = &finalized[k];
        let m = remaining[k] - 1;
        if m >= 1 {
            let others = if sums[k].abs() < SUM_UNDERFLOW {
                product_excluding(&sums, k)
            } else {
                product / sums[k]
            };
            counter.div(1);
            let zi = y[k][i] * others;
            counter.mul(1);
            z[g] = zi;
            for (w, value) in values.iter_mut().enumerate() {
                *value += fin.rewards[w][i] * zi;
            }
            counter.mul(n_rewards as u64);
            counter.add(n_rewards as u64);
            let yi = y[k][i];
            y[k][i] = 0.0;
            processed[k][i] = true;
            let mut new_sum = 0.0;
            let mut first = true;
            for j in 0..y[k].len() {
                if processed[k][j] {
                    continue;
                }
                y[k][j] += yi * fin.q[i][j];
                if first {
                    new_sum = y[k][j];
                    first = false;
                } else {
                    new_sum += y[k][j];
                    counter.add(1);
                }
            }
            counter.mul(m as u64);
            counter.add(m as u64);
            if sums[k].abs() < SUM_UNDERFLOW {
                product = product_excluding(&sums, k) * new_sum;
            } else {
                product *= new_sum / sums[k];
            }
            counter.div(1);
            counter.mul(1);
            sums[k] = new_sum;
        } else {
            // last state of this bandit: its play stops everything, so the
            // bandit's flow closes out and the product goes to zero
            let others = product_excluding(&sums, k);
            let zi = y[k][i] * others;
            z[g] = zi;
            for (w, value) in values.iter_mut().enumerate() {
                *value += fin.rewards[w][i] * zi;
            }
            y[k][i] = 0.0;
            processed[k][i] = true;
            sums[k] = 0.0;
            product = 0.0;
        }
        remaining[k] -= 1;
        if lab % DRIFT_CHECK_EVERY == 0 {
            let fresh: f64 = sums.iter().product();
            if (product - fresh).abs() > DRIFT_TOL * (1.0 + fresh.abs()) {
                product = fresh;
            }
        }
    }
    Ok(EvalResult {
        values,
        z,
        ops: counter.since(&start_ops),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BanditChain;
    use crate::tableau::finalize_instance;

    fn two_state_instance() -> Instance {
        let chain = BanditChain::new(vec![1.0, 0.0], vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        Instance::new(vec![chain], Hypothesis::RN).unwrap()
    }

    fn eval_simple(
        instance: &Instance,
        labeling: &Labeling,
        start: &MultiState,
    ) -> (EvalResult, OpCounter) {
        let mut tri = OpCounter::new();
        let finalized = finalize_instance(instance, labeling, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        let result = evaluate(instance, labeling, start, &finalized, &mut ops).unwrap();
        (result, ops)
    }

    #[test]
    fn single_bandit_matches_linear_solve() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let (result, ops) = eval_simple(&instance, &labeling, &MultiState(vec![0]));
        assert!((result.value() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(result.z, vec![1.0, 0.5]);
        // per-step accounting: one counted step with m = 1
        assert_eq!(ops.arithmetic(), 8);

        let (from_second, _) = eval_simple(&instance, &labeling, &MultiState(vec![1]));
        assert!((from_second.value() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn coefficient_identity_reproduces_value() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let mut tri = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        let result = evaluate(
            &instance,
            &labeling,
            &MultiState(vec![0]),
            &finalized,
            &mut ops,
        )
        .unwrap();
        let recombined: f64 = result
            .z
            .iter()
            .enumerate()
            .map(|(g, z)| {
                let (k, i) = instance.locate(g).unwrap();
                z * finalized[k].rewards[0][i]
            })
            .sum();
        assert!((recombined - result.value()).abs() <= 1e-12 * (1.0 + result.value().abs()));
    }

    #[test]
    fn exhausted_bandit_stops_everything() {
        let a = BanditChain::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let b = BanditChain::new(vec![5.0], vec![vec![0.0]]).unwrap();
        let instance = Instance::new(vec![a, b], Hypothesis::RN).unwrap();
        let labeling = Labeling::identity(2);
        let (result, ops) = eval_simple(&instance, &labeling, &MultiState(vec![0, 0]));
        assert_eq!(result.value(), 1.0);
        assert_eq!(result.z, vec![1.0, 0.0]);
        // both bandits are singletons: nothing enters the counted path
        assert_eq!(ops.arithmetic(), 0);
    }

    #[test]
    fn degenerate_distribution_equals_unit_start() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let mut tri = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        let unit = evaluate(
            &instance,
            &labeling,
            &MultiState(vec![0]),
            &finalized,
            &mut ops,
        )
        .unwrap();
        let dist = evaluate_distribution(
            &instance,
            &labeling,
            &[vec![1.0, 0.0]],
            &finalized,
            &mut ops,
        )
        .unwrap();
        assert_eq!(unit.value(), dist.value());
        assert_eq!(unit.z, dist.z);
    }

    #[test]
    fn uniform_distribution_averages_the_starts() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let mut tri = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        let dist = evaluate_distribution(
            &instance,
            &labeling,
            &[vec![0.5, 0.5]],
            &finalized,
            &mut ops,
        )
        .unwrap();
        assert!((dist.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_must_be_normalized_and_nonnegative() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let mut tri = OpCounter::new();
        let finalized = finalize_instance(&instance, &labeling, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        assert!(matches!(
            evaluate_distribution(
                &instance,
                &labeling,
                &[vec![0.7, 0.7]],
                &finalized,
                &mut ops
            ),
            Err(EvalError::BadDistribution { .. })
        ));
        assert!(matches!(
            evaluate_distribution(
                &instance,
                &labeling,
                &[vec![1.5, -0.5]],
                &finalized,
                &mut ops
            ),
            Err(EvalError::NegativeDistribution { .. })
        ));
    }

    #[test]
    fn mismatched_finalized_data_is_rejected() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let mut tri = OpCounter::new();
        // finalize under the reversed labeling, then evaluate under identity
        let reversed = Labeling::new(vec![2, 1]).unwrap();
        let finalized = finalize_instance(&instance, &reversed, false, &mut tri).unwrap();
        let mut ops = OpCounter::new();
        assert!(matches!(
            evaluate(
                &instance,
                &labeling,
                &MultiState(vec![0]),
                &finalized,
                &mut ops
            ),
            Err(EvalError::MismatchedData { .. })
        ));
    }

    #[test]
    fn multi_reward_is_homogeneous_and_matches_single() {
        let instance = two_state_instance();
        let labeling = Labeling::identity(2);
        let r0 = vec![1.0, 0.0];
        let doubled: Vec<f64> = r0.iter().map(|v| 2.0 * v).collect();
        let mut ops = OpCounter::new();
        let result = evaluate_multi_reward(
            &instance,
            &labeling,
            &MultiState(vec![0]),
            &[r0.clone(), doubled],
            &mut ops,
        )
        .unwrap();
        assert!((result.values[0] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(result.values[1], 2.0 * result.values[0]);

        // single reward set reduces to plain evaluation
        let mut ops2 = OpCounter::new();
        let single =
            evaluate_multi_reward(&instance, &labeling, &MultiState(vec![0]), &[r0], &mut ops2)
                .unwrap();
        assert_eq!(single.values[0], result.values[0]);
    }

    #[test]
    fn multi_reward_rejects_exponential_utilities() {
        let chain = BanditChain::new(vec![-1.0], vec![vec![0.5]]).unwrap();
        let instance = Instance::new(vec![chain], Hypothesis::RA).unwrap();
        let labeling = Labeling::identity(1);
        let mut ops = OpCounter::new();
        assert!(matches!(
            evaluate_multi_reward(
                &instance,
                &labeling,
                &MultiState(vec![0]),
                &[vec![1.0]],
                &mut ops
            ),
            Err(EvalError::RequiresRiskNeutral)
        ));
    }

    #[test]
    fn evaluator_count_matches_per_step_accounting() {
        // two bandits with 3 and 2 states
        let c1 = BanditChain::new(
            vec![1.0, 0.5, -0.25],
            vec![
                vec![0.1, 0.2, 0.3],
                vec![0.2, 0.1, 0.4],
                vec![0.3, 0.3, 0.1],
            ],
        )
        .unwrap();
        let c2 = BanditChain::new(vec![0.5, 1.5], vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        let instance = Instance::new(vec![c1, c2], Hypothesis::RN).unwrap();
        let labeling = Labeling::new(vec![2, 4, 5, 1, 3]).unwrap();
        let (result, ops) = eval_simple(&instance, &labeling, &MultiState(vec![0, 1]));
        let expected: u64 = [3usize, 2]
            .iter()
            .map(|&n_k| (1..n_k as u64).map(|m| 3 * m + 5).sum::<u64>())
            .sum();
        assert_eq!(ops.arithmetic(), expected);
        assert!(result.value().is_finite());
    }
}
