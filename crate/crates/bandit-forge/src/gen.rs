//! Seeded random generation of valid instances, labelings, and fixtures.
//!
//! Chains are rejection-sampled until they pass the transience test, so
//! every generated instance validates under its hypothesis. The generators
//! deliberately emit the boundary cases the preference machinery cares
//! about: rows with amplification exactly 1 and rewards exactly 0 appear
//! with probability `special_prob`.

use crate::labeling::Labeling;
use crate::linalg::{lu_solve, Mat};
use crate::model::{BanditChain, Hypothesis, Instance, MultiState, RawBandit, TRANSIENCE_TOL};
use rand::Rng;

/// Transient with margin: the expected-visit solve succeeds, is strictly
/// positive, and stays below a lifetime cap. The cap keeps generated
/// chains away from the nearly-singular boundary, where pivots,
/// conditioning, and value-iteration convergence all degenerate.
fn comfortably_transient(q: &[Vec<f64>]) -> bool {
    let n = q.len();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 - q[i][j] } else { -q[i][j] };
        }
    }
    match lu_solve(&a, &vec![1.0; n]) {
        Some(x) => x.iter().all(|&v| v > TRANSIENCE_TOL && v <= 1e3),
        None => false,
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub hypothesis: Hypothesis,
    pub n_bandits: usize,
    /// States per bandit are drawn uniformly from `1..=max_states`.
    pub max_states: usize,
    /// Probability of boundary rows (amplification exactly 1) and boundary
    /// rewards (exactly 0).
    pub special_prob: f64,
}

impl GenConfig {
    pub fn new(hypothesis: Hypothesis, n_bandits: usize, max_states: usize) -> Self {
        GenConfig {
            hypothesis,
            n_bandits,
            max_states,
            special_prob: 0.2,
        }
    }
}

/// One random chain satisfying `hypothesis`, including transience.
pub fn random_chain(
    hypothesis: Hypothesis,
    n: usize,
    special_prob: f64,
    rng: &mut impl Rng,
) -> BanditChain {
    for attempt in 0..200 {
        // after repeated rejections, stop emitting boundary rows: a chain
        // whose every row amplifies cannot be transient
        let special = if attempt < 50 { special_prob } else { 0.0 };
        let mut q = vec![vec![0.0; n]; n];
        for row in q.iter_mut() {
            let target = match hypothesis {
                Hypothesis::RN => {
                    if rng.gen_bool(special) {
                        1.0
                    } else {
                        rng.gen_range(0.2..0.95)
                    }
                }
                Hypothesis::RA | Hypothesis::RS => {
                    if rng.gen_bool(special) {
                        1.0
                    } else if rng.gen_bool(0.3) {
                        rng.gen_range(0.95..1.15)
                    } else {
                        rng.gen_range(0.2..0.95)
                    }
                }
            };
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for (slot, v) in row.iter_mut().zip(raw) {
                *slot = v / sum * target;
            }
        }
        let r: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(special) {
                    0.0
                } else {
                    match hypothesis {
                        Hypothesis::RN => rng.gen_range(-1.0..1.0),
                        Hypothesis::RA => rng.gen_range(-1.0..0.0),
                        Hypothesis::RS => rng.gen_range(0.0..1.0),
                    }
                }
            })
            .collect();
        if comfortably_transient(&q) {
            return BanditChain::new(r, q).expect("generated shapes are consistent");
        }
    }
    unreachable!("rejection sampling failed to produce a transient chain")
}

/// A random valid instance under `cfg.hypothesis`.
pub fn random_instance(cfg: &GenConfig, rng: &mut impl Rng) -> Instance {
    let chains = (0..cfg.n_bandits)
        .map(|_| {
            let n = rng.gen_range(1..=cfg.max_states);
            random_chain(cfg.hypothesis, n, cfg.special_prob, rng)
        })
        .collect();
    Instance::new(chains, cfg.hypothesis).expect("generated chains are nonempty")
}

/// Raw probabilistic data with payoffs, for exercising chain construction.
pub fn random_raw_bandit(n: usize, rng: &mut impl Rng) -> RawBandit {
    let mut p = vec![vec![0.0; n]; n];
    for row in p.iter_mut() {
        let target = rng.gen_range(0.3..1.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        for (slot, v) in row.iter_mut().zip(raw) {
            *slot = v / sum * target;
        }
    }
    RawBandit {
        p,
        x0: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        x: (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    }
}

/// A uniformly random labeling of `n` states (Fisher-Yates).
pub fn random_labeling(n: usize, rng: &mut impl Rng) -> Labeling {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    Labeling::from_order(&order).expect("a permutation is bijective")
}

/// A uniformly random multi-state of the instance.
pub fn random_multistate(instance: &Instance, rng: &mut impl Rng) -> MultiState {
    MultiState(
        (0..instance.n_bandits())
            .map(|k| rng.gen_range(0..instance.chain(k).n_states()))
            .collect(),
    )
}

/// Random reward vectors (one per type) over the instance's global states.
pub fn random_rewards(n_states: usize, n_types: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n_types)
        .map(|_| (0..n_states).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}
