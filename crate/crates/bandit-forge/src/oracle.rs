//! Brute-force ground truth on the explicit product space.
//!
//! Everything the fast algorithms compute indirectly is recomputed here the
//! expensive way: the joint state space is enumerated, policies become
//! `|S| x |S|` transition-rate matrices, values come from dense LU solves,
//! optimal values from value iteration, and the constrained problem from a
//! full LP over every labeling's column. This module is first-class and
//! tested in its own right; the rest of the crate is verified against it at
//! desk scale.

use crate::constrained::ConstrainedProgram;
use crate::labeling::Labeling;
use crate::linalg::{lu_factor, Mat};
use crate::model::{Instance, ModelError, MultiState};
use thiserror::Error;

/// Default cap on the product-space size.
pub const ORACLE_CAP: usize = 2000;

/// Hard limit for full labeling enumeration (`n!` labelings).
pub const LABELING_ENUMERATION_MAX: usize = 8;

const VI_TOL: f64 = 1e-12;
const VI_MAX_SWEEPS: usize = 200_000;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy evaluation system is singular: a policy transition matrix is not transient")]
    Singular,
    #[error("policy evaluation residual {0:.3e} exceeds {RESIDUAL_TOL:.1e}")]
    Residual(f64),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("full labeling enumeration needs at most {LABELING_ENUMERATION_MAX} states, instance has {0}")]
    TooManyStates(usize),
    #[error("policy enumeration would need {size} policies, cap is {cap}")]
    TooManyPolicies { size: usize, cap: usize },
    #[error("linear program is unbounded, which contradicts the simplex structure")]
    Unbounded,
}

/// The enumerated multi-state space with mixed-radix indexing and
/// policy-matrix construction.
pub struct ProductModel<'a> {
    instance: &'a Instance,
    states: Vec<MultiState>,
    strides: Vec<usize>,
}

impl<'a> ProductModel<'a> {
    pub fn new(instance: &'a Instance, cap: usize) -> Result<Self, OracleError> {
        let states = instance.multistate_space(cap)?;
        let k = instance.n_bandits();
        let mut strides = vec![1usize; k];
        for p in (0..k.saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * instance.chain(p + 1).n_states();
        }
        Ok(ProductModel {
            instance,
            states,
            strides,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[MultiState] {
        &self.states
    }

    pub fn index(&self, s: &MultiState) -> usize {
        s.0.iter()
            .zip(&self.strides)
            .map(|(&local, &stride)| local * stride)
            .sum()
    }

    /// The stationary policy a priority rule induces: entry per enumerated
    /// multi-state, naming the bandit to play.
    pub fn priority_policy(&self, labeling: &Labeling) -> Vec<usize> {
        self.states
            .iter()
            .map(|s| {
                (0..self.instance.n_bandits())
                    .min_by_key(|&k| labeling.label(self.instance.global_id(k, s.0[k])))
                    .unwrap()
            })
            .collect()
    }

    /// Transition-rate matrix and reward vector of a stationary policy.
    /// Row `s` has its nonzero entries exactly at the multi-states reached
    /// by moving the played bandit.
    pub fn policy_matrices(&self, policy: &[usize]) -> (Mat, Vec<f64>) {
        self.policy_matrices_with(policy, |g| {
            let (k, i) = self.instance.locate(g).unwrap();
            self.instance.chain(k).r[i]
        })
    }

    /// Like [`Self::policy_matrices`] but with rewards supplied per global
    /// state id (used for alternative reward types and finalized data).
    pub fn policy_matrices_with<F>(&self, policy: &[usize], reward_of: F) -> (Mat, Vec<f64>)
    where
        F: Fn(usize) -> f64,
    {
        self.policy_matrices_generic(policy, &reward_of, None)
    }

    /// Policy matrices over arbitrary per-bandit data (rewards and rates by
    /// local state). Passing `None` uses the instance's own rates.
    pub fn policy_matrices_generic<F>(
        &self,
        policy: &[usize],
        reward_of: &F,
        rates: Option<&[Vec<Vec<f64>>]>,
    ) -> (Mat, Vec<f64>)
    where
        F: Fn(usize) -> f64,
    {
        let n = self.states.len();
        let mut q = Mat::zeros(n, n);
        let mut r = vec![0.0; n];
        for (idx, s) in self.states.iter().enumerate() {
            let k = policy[idx];
            let i = s.0[k];
            let g = self.instance.global_id(k, i);
            r[idx] = reward_of(g);
            let row = match rates {
                Some(all) => &all[k][i],
                None => &self.instance.chain(k).q[i],
            };
            for (j, &rate) in row.iter().enumerate() {
                if rate != 0.0 {
                    // mixed-radix index arithmetic: replace digit i by j
                    let t = (idx as isize + (j as isize - i as isize) * self.strides[k] as isize)
                        as usize;
                    q[(idx, t)] += rate;
                }
            }
        }
        (q, r)
    }
}

/// Solve the policy evaluation equation `(I - Q) V = R` exactly and check
/// the residual.
pub fn solve_policy_system(q: &Mat, r: &[f64]) -> Result<Vec<f64>, OracleError> {
    let n = q.n_rows();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 - q[(i, j)] } else { -q[(i, j)] };
        }
    }
    let factors = lu_factor(&a).ok_or(OracleError::Singular)?;
    let v = factors.solve(r);
    let residual = a
        .mul_vec(&v)
        .iter()
        .zip(r)
        .map(|(lhs, rhs)| (lhs - rhs).abs())
        .fold(0.0_f64, f64::max);
    if residual > RESIDUAL_TOL {
        return Err(OracleError::Residual(residual));
    }
    Ok(v)
}

/// Value vector of an explicit stationary policy over the whole space.
pub fn oracle_evaluate_vec(
    instance: &Instance,
    policy: &[usize],
    cap: usize,
) -> Result<Vec<f64>, OracleError> {
    let pm = ProductModel::new(instance, cap)?;
    let (q, r) = pm.policy_matrices(policy);
    solve_policy_system(&q, &r)
}

/// Expected utility of an explicit stationary policy from one start.
pub fn oracle_evaluate(
    instance: &Instance,
    policy: &[usize],
    start: &MultiState,
    cap: usize,
) -> Result<f64, OracleError> {
    instance.check_multistate(start)?;
    let pm = ProductModel::new(instance, cap)?;
    let (q, r) = pm.policy_matrices(policy);
    let v = solve_policy_system(&q, &r)?;
    Ok(v[pm.index(start)])
}

/// Expected utility of the priority rule keyed to `labeling`.
pub fn oracle_evaluate_labeling(
    instance: &Instance,
    labeling: &Labeling,
    start: &MultiState,
    cap: usize,
) -> Result<f64, OracleError> {
    let pm = ProductModel::new(instance, cap)?;
    let policy = pm.priority_policy(labeling);
    let (q, r) = pm.policy_matrices(&policy);
    let v = solve_policy_system(&q, &r)?;
    Ok(v[pm.index(start)])
}

fn local_utility(
    instance: &Instance,
    pm: &ProductModel,
    v: &[f64],
    idx: usize,
    s: &MultiState,
    k: usize,
) -> f64 {
    let i = s.0[k];
    let chain = instance.chain(k);
    let mut total = chain.r[i];
    for (j, &rate) in chain.q[i].iter().enumerate() {
        if rate != 0.0 {
            let t = (idx as isize + (j as isize - i as isize) * pm.strides[k] as isize) as usize;
            total += rate * v[t];
        }
    }
    total
}

/// Optimal value vector `F` and an optimal stationary policy, by value
/// iteration to sup-norm `1e-12` followed by one exact evaluation of the
/// greedy policy.
pub fn oracle_optimal(
    instance: &Instance,
    cap: usize,
) -> Result<(Vec<f64>, Vec<usize>), OracleError> {
    let pm = ProductModel::new(instance, cap)?;
    let n = pm.n_states();
    let k_count = instance.n_bandits();
    let mut v = vec![0.0_f64; n];
    let mut converged = false;
    for _ in 0..VI_MAX_SWEEPS {
        let mut next = vec![0.0_f64; n];
        let mut diff = 0.0_f64;
        for (idx, s) in pm.states.iter().enumerate() {
            let best = (0..k_count)
                .map(|k| local_utility(instance, &pm, &v, idx, s, k))
                .fold(f64::NEG_INFINITY, f64::max);
            next[idx] = best;
            diff = diff.max((best - v[idx]).abs());
        }
        v = next;
        if diff <= VI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::NoConvergence(VI_MAX_SWEEPS));
    }
    let policy: Vec<usize> = pm
        .states
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..k_count {
                let val = local_utility(instance, &pm, &v, idx, s, k);
                if val > best {
                    best = val;
                    best_k = k;
                }
            }
            best_k
        })
        .collect();
    let (q, r) = pm.policy_matrices(&policy);
    let f = solve_policy_system(&q, &r)?;
    Ok((f, policy))
}

/// Optimal value and policy by exact policy iteration; cross-check for
/// [`oracle_optimal`].
pub fn oracle_optimal_policy_iteration(
    instance: &Instance,
    cap: usize,
) -> Result<(Vec<f64>, Vec<usize>), OracleError> {
    let pm = ProductModel::new(instance, cap)?;
    let k_count = instance.n_bandits();
    let mut policy = vec![0usize; pm.n_states()];
    for _ in 0..10_000 {
        let (q, r) = pm.policy_matrices(&policy);
        let v = solve_policy_system(&q, &r)?;
        let mut improved = false;
        let mut next = policy.clone();
        for (idx, s) in pm.states.iter().enumerate() {
            let current = local_utility(instance, &pm, &v, idx, s, policy[idx]);
            let mut best_k = policy[idx];
            let mut best = current;
            for k in 0..k_count {
                let val = local_utility(instance, &pm, &v, idx, s, k);
                if val > best + 1e-13 {
                    best = val;
                    best_k = k;
                }
            }
            if best_k != policy[idx] {
                next[idx] = best_k;
                improved = true;
            }
        }
        if !improved {
            return Ok((v, policy));
        }
        policy = next;
    }
    Err(OracleError::NoConvergence(10_000))
}

/// All `n!` labelings of `n` states, in lexicographic order of the
/// label-position form. Guarded by [`LABELING_ENUMERATION_MAX`].
pub fn all_labelings(n: usize) -> Result<Vec<Labeling>, OracleError> {
    if n > LABELING_ENUMERATION_MAX {
        return Err(OracleError::TooManyStates(n));
    }
    let mut out = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    permute(&mut order, 0, &mut out);
    Ok(out)
}

fn permute(order: &mut Vec<usize>, at: usize, out: &mut Vec<Labeling>) {
    if at == order.len() {
        out.push(Labeling::from_order(order).unwrap());
        return;
    }
    for i in at..order.len() {
        order.swap(at, i);
        permute(order, at + 1, out);
        order.swap(at, i);
    }
}

/// Outcome of the oracle LP over enumerated columns.
#[derive(Debug, Clone)]
pub struct OracleLp {
    pub feasible: bool,
    /// Optimal objective when feasible.
    pub objective: Option<f64>,
}

/// Solve the constrained program exactly: materialize one column per
/// labeling via product-space policy evaluation and run a dense two-phase
/// simplex over all of them.
pub fn oracle_constrained(
    program: &ConstrainedProgram,
    cap: usize,
) -> Result<OracleLp, OracleError> {
    let instance = &program.instance;
    let pm = ProductModel::new(instance, cap)?;
    let start_idx = pm.index(&program.start);
    let labelings = all_labelings(instance.n_states())?;
    let w = program.bounds.len();
    // columns[p] = (V_0, V_1..V_W) for labeling p at the start state
    let mut columns = Vec::with_capacity(labelings.len());
    for labeling in &labelings {
        let policy = pm.priority_policy(labeling);
        let (q, _) = pm.policy_matrices(&policy);
        let mut a = Mat::zeros(q.n_rows(), q.n_cols());
        for i in 0..q.n_rows() {
            for j in 0..q.n_cols() {
                a[(i, j)] = if i == j { 1.0 - q[(i, j)] } else { -q[(i, j)] };
            }
        }
        let factors = lu_factor(&a).ok_or(OracleError::Singular)?;
        let mut values = Vec::with_capacity(w + 1);
        for rewards in &program.rewards {
            let (_, r) = pm.policy_matrices_with(&policy, |g| rewards[g]);
            let v = factors.solve(&r);
            values.push(v[start_idx]);
        }
        columns.push(values);
    }
    // Program 2 in standard form: one variable per labeling plus one
    // surplus variable per reward constraint.
    let n_rows = w + 1;
    let mut lp_cols: Vec<Vec<f64>> = Vec::with_capacity(columns.len() + w);
    let mut objective = Vec::with_capacity(columns.len() + w);
    for col in &columns {
        let mut rows = vec![1.0];
        rows.extend_from_slice(&col[1..]);
        lp_cols.push(rows);
        objective.push(col[0]);
    }
    for idx in 0..w {
        let mut rows = vec![0.0; n_rows];
        rows[idx + 1] = -1.0;
        lp_cols.push(rows);
        objective.push(0.0);
    }
    let mut b = vec![1.0];
    b.extend_from_slice(&program.bounds);
    match lp::solve(&lp_cols, &b, &objective)? {
        lp::Outcome::Infeasible => Ok(OracleLp {
            feasible: false,
            objective: None,
        }),
        lp::Outcome::Optimal { objective, .. } => Ok(OracleLp {
            feasible: true,
            objective: Some(objective),
        }),
    }
}

/// Feasibility of the same constraints over *all* stationary deterministic
/// policies (not just priority rules). `policy_cap` bounds the `K^{|S|}`
/// enumeration.
pub fn oracle_program1_feasible(
    program: &ConstrainedProgram,
    cap: usize,
    policy_cap: usize,
) -> Result<bool, OracleError> {
    let instance = &program.instance;
    let pm = ProductModel::new(instance, cap)?;
    let start_idx = pm.index(&program.start);
    let n_states = pm.n_states();
    let k_count = instance.n_bandits();
    let n_policies = (0..n_states).try_fold(1usize, |acc, _| {
        acc.checked_mul(k_count).filter(|&v| v <= policy_cap)
    });
    let n_policies = n_policies.ok_or(OracleError::TooManyPolicies {
        size: usize::MAX,
        cap: policy_cap,
    })?;
    let w = program.bounds.len();
    let mut lp_cols: Vec<Vec<f64>> = Vec::new();
    let mut objective = Vec::new();
    let mut policy = vec![0usize; n_states];
    for _ in 0..n_policies {
        let (q, _) = pm.policy_matrices(&policy);
        let mut a = Mat::zeros(n_states, n_states);
        for i in 0..n_states {
            for j in 0..n_states {
                a[(i, j)] = if i == j { 1.0 - q[(i, j)] } else { -q[(i, j)] };
            }
        }
        let factors = lu_factor(&a).ok_or(OracleError::Singular)?;
        let mut rows = vec![1.0];
        for rewards in program.rewards.iter().skip(1) {
            let (_, r) = pm.policy_matrices_with(&policy, |g| rewards[g]);
            let v = factors.solve(&r);
            rows.push(v[start_idx]);
        }
        lp_cols.push(rows);
        objective.push(0.0);
        // next policy in base-K counter order
        let mut pos = 0;
        while pos < n_states {
            policy[pos] += 1;
            if policy[pos] < k_count {
                break;
            }
            policy[pos] = 0;
            pos += 1;
        }
    }
    for idx in 0..w {
        let mut rows = vec![0.0; w + 1];
        rows[idx + 1] = -1.0;
        lp_cols.push(rows);
        objective.push(0.0);
    }
    let mut b = vec![1.0];
    b.extend_from_slice(&program.bounds);
    Ok(matches!(
        lp::solve(&lp_cols, &b, &objective)?,
        lp::Outcome::Optimal { .. }
    ))
}

/// A self-contained dense two-phase primal simplex (Bland's rule),
/// independent of the column-generation machinery it is used to check.
pub(crate) mod lp {
    use super::OracleError;

    const TOL: f64 = 1e-9;
    const PIVOT_MIN: f64 = 1e-11;

    pub enum Outcome {
        Optimal {
            #[allow(dead_code)]
            x: Vec<f64>,
            objective: f64,
        },
        Infeasible,
    }

    /// Maximize `objective . x` subject to `cols . x = b`, `x >= 0`.
    /// `cols[j]` is the j-th column.
    pub fn solve(cols: &[Vec<f64>], b: &[f64], objective: &[f64]) -> Result<Outcome, OracleError> {
        let m = b.len();
        let n = cols.len();
        assert!(cols.iter().all(|c| c.len() == m));
        assert_eq!(objective.len(), n);
        // working tableau with artificial columns appended; flip rows so
        // the right side is nonnegative
        let mut t: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                row.extend((0..m).map(|j| if j == i { 1.0 } else { 0.0 }));
                row.push(b[i]);
                row
            })
            .collect();
        for row in t.iter_mut() {
            if row[n + m] < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        // phase 1: drive the artificial variables to zero
        let phase1: Vec<f64> = (0..n + m)
            .map(|j| if j >= n { -1.0 } else { 0.0 })
            .collect();
        run_simplex(&mut t, &mut basis, &phase1, n + m)?;
        let infeasibility: f64 = basis
            .iter()
            .enumerate()
            .filter(|&(_, &j)| j >= n)
            .map(|(row, _)| t[row][n + m])
            .sum();
        if infeasibility > TOL {
            return Ok(Outcome::Infeasible);
        }
        // phase 2: artificial columns may linger basic at zero but must not
        // re-enter
        let mut phase2: Vec<f64> = objective.to_vec();
        phase2.extend(std::iter::repeat_n(f64::NEG_INFINITY, m));
        run_simplex(&mut t, &mut basis, &phase2, n)?;
        let mut x = vec![0.0; n];
        for (row, &j) in basis.iter().enumerate() {
            if j < n {
                x[j] = t[row][n + m];
            }
        }
        let objective_value = x.iter().zip(objective).map(|(xi, ci)| xi * ci).sum::<f64>();
        Ok(Outcome::Optimal {
            x,
            objective: objective_value,
        })
    }

    /// Bland's rule simplex on the working tableau. `enterable` bounds the
    /// column range allowed to enter the basis.
    #[allow(clippy::needless_range_loop)]
    fn run_simplex(
        t: &mut [Vec<f64>],
        basis: &mut [usize],
        costs: &[f64],
        enterable: usize,
    ) -> Result<(), OracleError> {
        let m = t.len();
        let rhs = t[0].len() - 1;
        loop {
            // multipliers via the basic costs and current tableau rows
            let entering = (0..enterable).find(|&j| {
                if basis.contains(&j) || costs[j] == f64::NEG_INFINITY {
                    return false;
                }
                let reduced = costs[j]
                    - basis
                        .iter()
                        .enumerate()
                        .map(|(row, &bj)| {
                            let c = costs[bj];
                            if c == f64::NEG_INFINITY {
                                0.0
                            } else {
                                c * t[row][j]
                            }
                        })
                        .sum::<f64>();
                reduced > TOL
            });
            let Some(entering) = entering else {
                return Ok(());
            };
            let mut leaving: Option<(usize, f64)> = None;
            for row in 0..m {
                let coef = t[row][entering];
                if coef > PIVOT_MIN {
                    let ratio = t[row][rhs] / coef;
                    let better = match leaving {
                        None => true,
                        Some((best_row, best_ratio)) => {
                            ratio < best_ratio - 1e-12
                                || ((ratio - best_ratio).abs() <= 1e-12
                                    && basis[row] < basis[best_row])
                        }
                    };
                    if better {
                        leaving = Some((row, ratio));
                    }
                }
            }
            let Some((pivot_row, _)) = leaving else {
                return Err(OracleError::Unbounded);
            };
            let pivot = t[pivot_row][entering];
            for v in t[pivot_row].iter_mut() {
                *v /= pivot;
            }
            for row in 0..m {
                if row != pivot_row {
                    let factor = t[row][entering];
                    if factor != 0.0 {
                        for col in 0..=rhs {
                            let delta = factor * t[pivot_row][col];
                            t[row][col] -= delta;
                        }
                    }
                }
            }
            basis[pivot_row] = entering;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BanditChain, Hypothesis};

    fn two_state_instance() -> Instance {
        let chain = BanditChain::new(vec![1.0, 0.0], vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        Instance::new(vec![chain], Hypothesis::RN).unwrap()
    }

    #[test]
    fn single_bandit_matches_chain_solve() {
        let instance = two_state_instance();
        let policy = vec![0, 0];
        let v = oracle_evaluate_vec(&instance, &policy, ORACLE_CAP).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_single_state_geometric() {
        let chain = BanditChain::new(vec![1.0], vec![vec![0.5]]).unwrap();
        let instance = Instance::new(vec![chain], Hypothesis::RN).unwrap();
        let (f, policy) = oracle_optimal(&instance, ORACLE_CAP).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-10);
        assert_eq!(policy, vec![0]);
    }

    #[test]
    fn value_and_policy_iteration_agree() {
        let c1 = BanditChain::new(vec![1.0, -0.5], vec![vec![0.2, 0.3], vec![0.4, 0.1]]).unwrap();
        let c2 = BanditChain::new(vec![0.75], vec![vec![0.5]]).unwrap();
        let instance = Instance::new(vec![c1, c2], Hypothesis::RN).unwrap();
        let (f_vi, _) = oracle_optimal(&instance, ORACLE_CAP).unwrap();
        let (f_pi, _) = oracle_optimal_policy_iteration(&instance, ORACLE_CAP).unwrap();
        for (a, b) in f_vi.iter().zip(&f_pi) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn labeling_enumeration_counts() {
        assert_eq!(all_labelings(3).unwrap().len(), 6);
        assert_eq!(all_labelings(1).unwrap().len(), 1);
        assert!(all_labelings(9).is_err());
    }

    #[test]
    fn lp_solves_a_simple_program() {
        // max x0 + 2 x1 st x0 + x1 + s = 4, x1 <= 3 (x1 + s2 = 3)
        let cols = vec![
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let b = vec![4.0, 3.0];
        let objective = vec![1.0, 2.0, 0.0, 0.0];
        match lp::solve(&cols, &b, &objective).unwrap() {
            lp::Outcome::Optimal { objective, x } => {
                assert!((objective - 7.0).abs() < 1e-9);
                assert!((x[0] - 1.0).abs() < 1e-9);
                assert!((x[1] - 3.0).abs() < 1e-9);
            }
            _ => panic!("expected optimal"),
        }
    }

    #[test]
    fn lp_detects_infeasibility() {
        // x0 = 1 and x0 = 2 simultaneously
        let cols = vec![vec![1.0, 1.0]];
        let b = vec![1.0, 2.0];
        let objective = vec![0.0];
        assert!(matches!(
            lp::solve(&cols, &b, &objective).unwrap(),
            lp::Outcome::Infeasible
        ));
    }
}
