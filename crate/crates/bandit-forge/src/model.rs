//! Bandit instances: raw probabilistic data, reward/transition-rate
//! construction per utility function, and hypothesis validation.
//!
//! A *bandit* (chain) is a finite-state Markov reward process that evolves
//! only when played. Playing state `i` earns reward `r(i)` and moves the
//! chain to state `j` with transition rate `q(i, j)`; the missing row mass
//! is termination, which stops every bandit at once. Under a linear utility
//! the rates are probabilities; under an exponential utility they fold the
//! per-transition (dis)utility factor into the probability, which is what
//! lets the whole analysis run on linear algebra.
//!
//! Every solver in this crate requires the instance to pass validation:
//! each chain's rate matrix must be nonnegative and transient, and the
//! declared hypothesis (risk-neutral, risk-averse, or risk-seeking) imposes
//! its own sign/mass condition.

use crate::linalg::{lu_solve, Mat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default strict-positivity tolerance for the transience test.
pub const TRANSIENCE_TOL: f64 = 1e-9;

/// Default cap on explicit multi-state enumeration.
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bandit {bandit}: p has a negative entry at row {row}, column {col}")]
    NegativeProbability {
        bandit: usize,
        row: usize,
        col: usize,
    },
    #[error("bandit {bandit}: row {row} of p sums to {sum}, which exceeds 1")]
    RowSumExceedsOne { bandit: usize, row: usize, sum: f64 },
    #[error("bandit {bandit}: expected a {expected} but got {got}")]
    ShapeMismatch {
        bandit: usize,
        expected: String,
        got: String,
    },
    #[error("bandit {bandit} has no states")]
    EmptyBandit { bandit: usize },
    #[error("exponential utility requires lambda > 0, got {0}")]
    NonpositiveLambda(f64),
    #[error("discount factor must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("instance has no bandits")]
    NoBandits,
    #[error("multi-state space has {size} states, which exceeds the cap of {cap}")]
    EnumerationCapExceeded { size: usize, cap: usize },
    #[error(
        "multi-state entry {entry} for bandit {bandit} is out of range (chain has {n} states)"
    )]
    BadMultiState {
        bandit: usize,
        entry: usize,
        n: usize,
    },
    #[error("global state id {0} is out of range")]
    BadGlobalId(usize),
}

/// Declared variant of the validation hypothesis.
///
/// All three require every chain's rate matrix to be nonnegative and
/// transient. RN additionally requires substochastic rows, RA nonpositive
/// rewards, RS nonnegative rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    RN,
    RA,
    RS,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hypothesis::RN => "RN",
            Hypothesis::RA => "RA",
            Hypothesis::RS => "RS",
        })
    }
}

/// Utility function of the decision maker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UtilitySpec {
    /// u(x) = x, optionally with a per-period discount factor folded into
    /// the transition rates.
    Linear { discount: Option<f64> },
    /// u(x) = -exp(-lambda x), lambda > 0.
    RiskAverse { lambda: f64 },
    /// u(x) = exp(lambda x), lambda > 0.
    RiskSeeking { lambda: f64 },
}

impl UtilitySpec {
    /// The hypothesis that chains built under this utility satisfy.
    pub fn hypothesis(&self) -> Hypothesis {
        match self {
            UtilitySpec::Linear { .. } => Hypothesis::RN,
            UtilitySpec::RiskAverse { .. } => Hypothesis::RA,
            UtilitySpec::RiskSeeking { .. } => Hypothesis::RS,
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match *self {
            UtilitySpec::Linear { discount: Some(c) } if !(c > 0.0 && c < 1.0) => {
                Err(ModelError::InvalidDiscount(c))
            }
            UtilitySpec::RiskAverse { lambda } | UtilitySpec::RiskSeeking { lambda }
                if lambda <= 0.0 || lambda.is_nan() =>
            {
                Err(ModelError::NonpositiveLambda(lambda))
            }
            _ => Ok(()),
        }
    }
}

/// Raw probabilistic data for one bandit: transition probabilities and
/// payoffs, before any utility transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBandit {
    /// n x n transition probabilities; each row may sum to less than 1,
    /// the deficit being the termination probability.
    pub p: Vec<Vec<f64>>,
    /// Payoff earned when play from state i terminates.
    pub x0: Vec<f64>,
    /// Payoff x[i][j] earned when play from state i moves the chain to j.
    pub x: Vec<Vec<f64>>,
}

impl RawBandit {
    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    /// Termination probability of state `i` (clamped at zero against
    /// roundoff in row sums that are exactly 1).
    pub fn termination_prob(&self, i: usize) -> f64 {
        (1.0 - self.p[i].iter().sum::<f64>()).max(0.0)
    }

    pub fn check(&self, bandit: usize) -> Result<(), ModelError> {
        let n = self.n_states();
        if n == 0 {
            return Err(ModelError::EmptyBandit { bandit });
        }
        let expect = |what: &str, ok: bool, got: String| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::ShapeMismatch {
                    bandit,
                    expected: what.to_string(),
                    got,
                })
            }
        };
        expect(
            &format!("{n}x{n} p matrix"),
            self.p.iter().all(|row| row.len() == n),
            "ragged rows".into(),
        )?;
        expect(
            &format!("x0 vector of length {n}"),
            self.x0.len() == n,
            format!("length {}", self.x0.len()),
        )?;
        expect(
            &format!("{n}x{n} x matrix"),
            self.x.len() == n && self.x.iter().all(|row| row.len() == n),
            "wrong shape".into(),
        )?;
        for (i, row) in self.p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    return Err(ModelError::NegativeProbability {
                        bandit,
                        row: i,
                        col: j,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-9 {
                return Err(ModelError::RowSumExceedsOne {
                    bandit,
                    row: i,
                    sum,
                });
            }
        }
        Ok(())
    }
}

/// One bandit's working data: rewards, transition rates, and amplifications
/// (rate row sums).
#[derive(Debug, Clone, PartialEq)]
pub struct BanditChain {
    pub r: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// amp[i] is the row sum of q at state i: the factor applied to all
    /// future utility when state i is played.
    pub amp: Vec<f64>,
}

impl BanditChain {
    /// Wrap pre-built (r, q) data, computing amplifications.
    pub fn new(r: Vec<f64>, q: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n = r.len();
        if n == 0 {
            return Err(ModelError::EmptyBandit { bandit: 0 });
        }
        if q.len() != n || q.iter().any(|row| row.len() != n) {
            return Err(ModelError::ShapeMismatch {
                bandit: 0,
                expected: format!("{n}x{n} q matrix"),
                got: format!("{} rows", q.len()),
            });
        }
        let amp = q.iter().map(|row| row.iter().sum()).collect();
        Ok(BanditChain { r, q, amp })
    }

    pub fn n_states(&self) -> usize {
        self.r.len()
    }
}

/// Construct a chain's (r, q) data from raw probabilities and payoffs.
#[allow(clippy::needless_range_loop)]
pub fn build_chain(raw: &RawBandit, u: &UtilitySpec) -> Result<BanditChain, ModelError> {
    raw.check(0)?;
    u.check()?;
    let n = raw.n_states();
    let mut r = vec![0.0; n];
    let mut q = vec![vec![0.0; n]; n];
    match *u {
        UtilitySpec::Linear { discount } => {
            let c = discount.unwrap_or(1.0);
            for i in 0..n {
                // The immediate reward is the period-start expectation; the
                // discount applies only from the next period on, via q.
                r[i] = raw.termination_prob(i) * raw.x0[i]
                    + (0..n).map(|j| raw.p[i][j] * raw.x[i][j]).sum::<f64>();
                for j in 0..n {
                    q[i][j] = c * raw.p[i][j];
                }
            }
        }
        UtilitySpec::RiskAverse { lambda } => {
            for i in 0..n {
                r[i] = -raw.termination_prob(i) * (-lambda * raw.x0[i]).exp();
                for j in 0..n {
                    q[i][j] = raw.p[i][j] * (-lambda * raw.x[i][j]).exp();
                }
            }
        }
        UtilitySpec::RiskSeeking { lambda } => {
            for i in 0..n {
                r[i] = raw.termination_prob(i) * (lambda * raw.x0[i]).exp();
                for j in 0..n {
                    q[i][j] = raw.p[i][j] * (lambda * raw.x[i][j]).exp();
                }
            }
        }
    }
    BanditChain::new(r, q)
}

/// Whether the nonnegative matrix `q` is transient (powers vanish).
///
/// Tests whether `(I - q) x = e` (all-ones right side) has a strictly
/// positive solution, which is equivalent to transience for nonnegative
/// matrices. A singular system reports non-transient rather than failing.
pub fn is_transient(q: &[Vec<f64>], tol: f64) -> bool {
    let n = q.len();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 - q[i][j] } else { -q[i][j] };
        }
    }
    match lu_solve(&a, &vec![1.0; n]) {
        Some(x) => x.iter().all(|&v| v > tol),
        None => false,
    }
}

/// A complete problem instance: disjoint chains plus a declared hypothesis.
///
/// Global state ids are assigned by chain order then local order, so the
/// states of bandit `k` occupy a contiguous id range.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    chains: Vec<BanditChain>,
    hypothesis: Hypothesis,
    offsets: Vec<usize>,
}

impl Instance {
    pub fn new(chains: Vec<BanditChain>, hypothesis: Hypothesis) -> Result<Self, ModelError> {
        if chains.is_empty() {
            return Err(ModelError::NoBandits);
        }
        for (k, c) in chains.iter().enumerate() {
            if c.n_states() == 0 {
                return Err(ModelError::EmptyBandit { bandit: k });
            }
        }
        let mut offsets = Vec::with_capacity(chains.len() + 1);
        let mut total = 0;
        for c in &chains {
            offsets.push(total);
            total += c.n_states();
        }
        offsets.push(total);
        Ok(Instance {
            chains,
            hypothesis,
            offsets,
        })
    }

    pub fn hypothesis(&self) -> Hypothesis {
        self.hypothesis
    }

    pub fn n_bandits(&self) -> usize {
        self.chains.len()
    }

    /// Total number of states across all chains.
    pub fn n_states(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn chain(&self, k: usize) -> &BanditChain {
        &self.chains[k]
    }

    pub fn chains(&self) -> &[BanditChain] {
        &self.chains
    }

    /// First global id of bandit `k`'s states.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn global_id(&self, bandit: usize, local: usize) -> usize {
        debug_assert!(local < self.chains[bandit].n_states());
        self.offsets[bandit] + local
    }

    /// Map a global id back to (bandit, local).
    pub fn locate(&self, global: usize) -> Result<(usize, usize), ModelError> {
        if global >= self.n_states() {
            return Err(ModelError::BadGlobalId(global));
        }
        let bandit = match self.offsets.binary_search(&global) {
            Ok(k) if k < self.chains.len() => k,
            Ok(k) => k - 1,
            Err(k) => k - 1,
        };
        Ok((bandit, global - self.offsets[bandit]))
    }

    /// Replace every chain's rewards with slices of a global reward vector,
    /// keeping the transition rates. Used to price constrained programs.
    pub fn with_rewards(&self, rewards: &[f64]) -> Result<Instance, ModelError> {
        if rewards.len() != self.n_states() {
            return Err(ModelError::ShapeMismatch {
                bandit: 0,
                expected: format!("reward vector of length {}", self.n_states()),
                got: format!("length {}", rewards.len()),
            });
        }
        let chains = self
            .chains
            .iter()
            .enumerate()
            .map(|(k, c)| BanditChain {
                r: rewards[self.offsets[k]..self.offsets[k] + c.n_states()].to_vec(),
                q: c.q.clone(),
                amp: c.amp.clone(),
            })
            .collect();
        Instance::new(chains, self.hypothesis)
    }

    pub fn multistate_count(&self) -> usize {
        self.chains
            .iter()
            .fold(1usize, |acc, c| acc.saturating_mul(c.n_states()))
    }

    /// Deterministic lexicographic enumeration of the multi-state space,
    /// first bandit most significant. Errors when the space exceeds `cap`.
    pub fn multistate_space(&self, cap: usize) -> Result<Vec<MultiState>, ModelError> {
        let size = self.multistate_count();
        if size > cap {
            return Err(ModelError::EnumerationCapExceeded { size, cap });
        }
        let k = self.n_bandits();
        let mut out = Vec::with_capacity(size);
        let mut current = vec![0usize; k];
        loop {
            out.push(MultiState(current.clone()));
            let mut pos = k;
            while pos > 0 {
                pos -= 1;
                current[pos] += 1;
                if current[pos] < self.chains[pos].n_states() {
                    break;
                }
                current[pos] = 0;
                if pos == 0 {
                    return Ok(out);
                }
            }
        }
    }

    /// Validate that `s` names one in-range local state per bandit.
    pub fn check_multistate(&self, s: &MultiState) -> Result<(), ModelError> {
        if s.0.len() != self.n_bandits() {
            return Err(ModelError::ShapeMismatch {
                bandit: 0,
                expected: format!("multi-state with {} entries", self.n_bandits()),
                got: format!("{} entries", s.0.len()),
            });
        }
        for (k, &i) in s.0.iter().enumerate() {
            let n = self.chains[k].n_states();
            if i >= n {
                return Err(ModelError::BadMultiState {
                    bandit: k,
                    entry: i,
                    n,
                });
            }
        }
        Ok(())
    }

    /// Build a multi-state from one global id per bandit, in bandit order.
    pub fn multistate_from_globals(&self, globals: &[usize]) -> Result<MultiState, ModelError> {
        if globals.len() != self.n_bandits() {
            return Err(ModelError::ShapeMismatch {
                bandit: 0,
                expected: format!("{} global ids", self.n_bandits()),
                got: format!("{} ids", globals.len()),
            });
        }
        let mut locals = Vec::with_capacity(globals.len());
        for (k, &g) in globals.iter().enumerate() {
            let (b, local) = self.locate(g)?;
            if b != k {
                return Err(ModelError::BadMultiState {
                    bandit: k,
                    entry: g,
                    n: self.chains[k].n_states(),
                });
            }
            locals.push(local);
        }
        Ok(MultiState(locals))
    }
}

/// One state per bandit: the joint state of the decision process.
/// Entry `k` is the local (within-chain) index of bandit `k`'s state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiState(pub Vec<usize>);

/// The three coordinates of one state. Global ids are dense and disjoint
/// across bandits; termination is not a state and has no id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StateId {
    pub bandit: usize,
    pub local: usize,
    pub global: usize,
}

impl Instance {
    pub fn state_id(&self, global: usize) -> Result<StateId, ModelError> {
        let (bandit, local) = self.locate(global)?;
        Ok(StateId {
            bandit,
            local,
            global,
        })
    }

    pub fn state_ids(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.n_states()).map(|g| self.state_id(g).expect("dense ids"))
    }
}

/// Which conditions a chain can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Nonnegative,
    Transient,
    Substochastic,
    RewardsNonpositive,
    RewardsNonnegative,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub bandit: usize,
    pub condition: Condition,
    /// Offending local state/row when one can be named.
    pub state: Option<usize>,
}

/// Per-chain record of which conditions hold.
#[derive(Debug, Clone, Serialize)]
pub struct ChainCheck {
    pub bandit: usize,
    pub nonnegative: bool,
    pub transient: bool,
    pub substochastic: bool,
    pub rewards_nonpositive: bool,
    pub rewards_nonnegative: bool,
}

/// Outcome of validating an instance against its declared hypothesis.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub hypothesis: Hypothesis,
    pub passed: bool,
    pub chains: Vec<ChainCheck>,
    /// First violated condition of the declared hypothesis, if any.
    pub first_violation: Option<Violation>,
}

/// Check every chain against all conditions and confirm or refute the
/// instance's declared hypothesis. Failures are carried in the report, not
/// raised as errors.
pub fn validate(instance: &Instance) -> ValidationReport {
    validate_with_tol(instance, TRANSIENCE_TOL)
}

pub fn validate_with_tol(instance: &Instance, tol: f64) -> ValidationReport {
    let mut chains = Vec::with_capacity(instance.n_bandits());
    let mut first_violation: Option<Violation> = None;
    for (k, c) in instance.chains().iter().enumerate() {
        let n = c.n_states();
        let mut check = ChainCheck {
            bandit: k,
            nonnegative: true,
            transient: false,
            substochastic: true,
            rewards_nonpositive: true,
            rewards_nonnegative: true,
        };
        let mut local_violations: Vec<Violation> = Vec::new();
        for i in 0..n {
            if c.q[i].iter().any(|&v| v < 0.0) {
                check.nonnegative = false;
                local_violations.push(Violation {
                    bandit: k,
                    condition: Condition::Nonnegative,
                    state: Some(i),
                });
                break;
            }
        }
        check.transient = check.nonnegative && is_transient(&c.q, tol);
        if !check.transient {
            local_violations.push(Violation {
                bandit: k,
                condition: Condition::Transient,
                state: None,
            });
        }
        for i in 0..n {
            if c.amp[i] > 1.0 + 1e-12 {
                check.substochastic = false;
                local_violations.push(Violation {
                    bandit: k,
                    condition: Condition::Substochastic,
                    state: Some(i),
                });
                break;
            }
        }
        for (i, &r) in c.r.iter().enumerate() {
            if check.rewards_nonpositive && r > 0.0 {
                check.rewards_nonpositive = false;
                local_violations.push(Violation {
                    bandit: k,
                    condition: Condition::RewardsNonpositive,
                    state: Some(i),
                });
            }
            if check.rewards_nonnegative && r < 0.0 {
                check.rewards_nonnegative = false;
                local_violations.push(Violation {
                    bandit: k,
                    condition: Condition::RewardsNonnegative,
                    state: Some(i),
                });
            }
        }
        if first_violation.is_none() {
            let relevant = |v: &&Violation| match v.condition {
                Condition::Nonnegative | Condition::Transient => true,
                Condition::Substochastic => instance.hypothesis == Hypothesis::RN,
                Condition::RewardsNonpositive => instance.hypothesis == Hypothesis::RA,
                Condition::RewardsNonnegative => instance.hypothesis == Hypothesis::RS,
            };
            first_violation = local_violations.iter().find(relevant).map(|v| (*v).clone());
        }
        chains.push(check);
    }
    let passed = chains.iter().all(|c| {
        c.nonnegative
            && c.transient
            && match instance.hypothesis {
                Hypothesis::RN => c.substochastic,
                Hypothesis::RA => c.rewards_nonpositive,
                Hypothesis::RS => c.rewards_nonnegative,
            }
    });
    ValidationReport {
        hypothesis: instance.hypothesis,
        passed,
        chains,
        first_violation,
    }
}
