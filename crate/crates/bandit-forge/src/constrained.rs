//! Reward-constrained bandits by simplex with column generation.
//!
//! The master program maximizes the expected type-0 reward of an initial
//! randomization over priority rules, subject to a lower bound on each of
//! `W` other reward types. Its constraint matrix has one row for the
//! randomization weights summing to 1 and one row per bound, so every
//! basis holds exactly `W + 1` columns — priority-rule columns
//! `(1, V_1, .., V_W)` and surplus ("slack") columns — and an optimal
//! solution randomizes over at most `W + 1` rules.
//!
//! Columns are never enumerated. Given the current multipliers
//! `y_0, y_1..y_W`, the most profitable nonbasic rule column is found by
//! solving the *unconstrained* bandit with rewards
//! `R(i) = r_0(i) + sum_w y_w r_w(i)`: the optimizer prices exactly
//! because some priority rule attains the unconstrained optimum. If the
//! priced value is at most `y_0` (and no surplus column profits), the
//! basis is optimal; otherwise the multi-reward evaluator produces the
//! entering column's coefficients in one pass and a pivot is executed.
//!
//! Feasibility (phase one) brings the bounds in one at a time: iteration
//! `n` maximizes the type-`n` reward subject to the bounds already brought
//! in, stopping as soon as the bound `C_n` is reached; if it cannot be, the
//! program is infeasible and the attained maximum is the certificate.
//!
//! Risk-neutral instances only: under exponential utility the payoffs sit
//! inside the transition rates, so distinct reward types would need
//! distinct rate matrices and the shared-flow pricing breaks down.

use crate::counter::OpCounter;
use crate::evaluate::{evaluate, evaluate_multi_reward, EvalError};
use crate::labeling::Labeling;
use crate::linalg::{lu_factor, Mat};
use crate::model::{Hypothesis, Instance, ModelError, MultiState};
use crate::optimize::{optimize, OptimizeError, OptimizerCounters};
use serde::Serialize;
use thiserror::Error;

const PIVOT_MIN: f64 = 1e-11;
const DUPLICATE_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 50;

/// Negate a row multiplier, avoiding -0.0 in reports.
fn neg_dual(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        -v
    }
}

#[derive(Debug, Error)]
pub enum ConstrainedError {
    #[error(
        "constrained programs require the risk-neutral hypothesis: exponential utilities \
         make the transition rates vary with the reward type"
    )]
    RequiresRiskNeutral,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expected {expected}, got {got}")]
    BadShape { expected: String, got: String },
    #[error("iteration limit of {0} simplex pivots exceeded")]
    IterationLimit(usize),
    #[error("numerical failure in the master problem: {0}")]
    Numerical(String),
}

/// A `W`-constraint bandit problem: `W + 1` reward types over the global
/// states (type 0 is the objective), a lower bound per constrained type,
/// and the start multi-state.
#[derive(Debug, Clone)]
pub struct ConstrainedProgram {
    pub instance: Instance,
    pub rewards: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
    pub start: MultiState,
}

impl ConstrainedProgram {
    pub fn new(
        instance: Instance,
        rewards: Vec<Vec<f64>>,
        bounds: Vec<f64>,
        start: MultiState,
    ) -> Result<Self, ConstrainedError> {
        if instance.hypothesis() != Hypothesis::RN {
            return Err(ConstrainedError::RequiresRiskNeutral);
        }
        if rewards.len() != bounds.len() + 1 {
            return Err(ConstrainedError::BadShape {
                expected: format!(
                    "{} reward vectors for {} bounds",
                    bounds.len() + 1,
                    bounds.len()
                ),
                got: format!("{}", rewards.len()),
            });
        }
        let n = instance.n_states();
        if let Some(bad) = rewards.iter().position(|r| r.len() != n) {
            return Err(ConstrainedError::BadShape {
                expected: format!("reward vectors of length {n}"),
                got: format!("vector {bad} has length {}", rewards[bad].len()),
            });
        }
        instance.check_multistate(&start)?;
        Ok(ConstrainedProgram {
            instance,
            rewards,
            bounds,
            start,
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.bounds.len()
    }

    /// The bandit a rule keyed to `labeling` plays first from the start.
    pub fn first_played(&self, labeling: &Labeling) -> usize {
        (0..self.instance.n_bandits())
            .min_by_key(|&k| labeling.label(self.instance.global_id(k, self.start.0[k])))
            .unwrap()
    }
}

/// Work done by a solve, split by component.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct ConstrainedCounters {
    pub optimizer: OptimizerCounters,
    pub evaluator: OpCounter,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    /// Reduced costs at or below this are treated as zero at termination.
    pub optimality_tol: f64,
    /// A phase-one maximum this far below its bound means infeasible.
    pub feasibility_tol: f64,
    /// Total simplex pivot budget; defaults to `10 (W+1) |N|`.
    pub iteration_limit: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            optimality_tol: 1e-9,
            feasibility_tol: 1e-9,
            iteration_limit: None,
        }
    }
}

/// One priority rule of the optimal randomization.
#[derive(Debug, Clone, Serialize)]
pub struct SupportEntry {
    pub labeling: Labeling,
    pub weight: f64,
    /// Bandit this rule plays first from the start multi-state.
    pub first_played: usize,
    /// Expected reward per type under this rule alone.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationLog {
    /// `0` for the final objective phase, `n >= 1` while bringing in bound `n`.
    pub stage: usize,
    pub y0: f64,
    pub y: Vec<f64>,
    pub priced_value: f64,
    pub reduced_cost: f64,
    pub entering: String,
    pub leaving: String,
    pub step: f64,
    pub objective_after: f64,
}

/// An optimal initial randomization over at most `W + 1` priority rules.
#[derive(Debug, Clone, Serialize)]
pub struct MixedSolution {
    pub objective: f64,
    pub support: Vec<SupportEntry>,
    /// Multiplier on the weights-sum-to-one row.
    pub y0: f64,
    /// Nonnegative multipliers on the reward bounds.
    pub y: Vec<f64>,
    /// Achieved expected reward per type (index 0 is the objective).
    pub achieved: Vec<f64>,
    pub iterations: Vec<IterationLog>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Serialize)]
pub enum SolveOutcome {
    Optimal(MixedSolution),
    /// No randomization satisfies bound `constraint`; `max_achievable` is
    /// the best attainable type-`constraint` reward under the earlier
    /// bounds.
    Infeasible {
        constraint: usize,
        max_achievable: f64,
    },
}

/// Price the current multipliers: solve the unconstrained bandit with
/// rewards `r_0 + sum_w y_w r_w` and return the optimal labeling and its
/// value from the program's start.
pub fn price(
    program: &ConstrainedProgram,
    y: &[f64],
    counters: &mut ConstrainedCounters,
) -> Result<(Labeling, f64), ConstrainedError> {
    price_objective(program, 0, y, counters)
}

#[allow(clippy::needless_range_loop)]
fn price_objective(
    program: &ConstrainedProgram,
    objective: usize,
    y: &[f64],
    counters: &mut ConstrainedCounters,
) -> Result<(Labeling, f64), ConstrainedError> {
    let w = program.n_constraints();
    if y.len() != w {
        return Err(ConstrainedError::BadShape {
            expected: format!("{w} multipliers"),
            got: format!("{}", y.len()),
        });
    }
    let n = program.instance.n_states();
    let mut priced = vec![0.0; n];
    for i in 0..n {
        priced[i] = program.rewards[objective][i];
        for (w_idx, &weight) in y.iter().enumerate() {
            priced[i] += weight * program.rewards[w_idx + 1][i];
        }
    }
    let priced_instance = program.instance.with_rewards(&priced)?;
    let opt = optimize(&priced_instance, &mut counters.optimizer)?;
    let result = evaluate(
        &priced_instance,
        &opt.labeling,
        &program.start,
        &opt.finalized,
        &mut counters.evaluator,
    )?;
    Ok((opt.labeling, result.value()))
}

/// The master-program column of a priority rule: `(V_0, 1, V_1, .., V_W)`,
/// all types from one triangularizer/evaluator pass.
pub fn column_of(
    program: &ConstrainedProgram,
    labeling: &Labeling,
    counters: &mut ConstrainedCounters,
) -> Result<Vec<f64>, ConstrainedError> {
    let values = rule_values(program, labeling, counters)?;
    let mut column = Vec::with_capacity(values.len() + 1);
    column.push(values[0]);
    column.push(1.0);
    column.extend_from_slice(&values[1..]);
    Ok(column)
}

/// Expected reward per type of one rule, via the multi-reward evaluator.
fn rule_values(
    program: &ConstrainedProgram,
    labeling: &Labeling,
    counters: &mut ConstrainedCounters,
) -> Result<Vec<f64>, ConstrainedError> {
    let result = evaluate_multi_reward(
        &program.instance,
        labeling,
        &program.start,
        &program.rewards,
        &mut counters.evaluator,
    )?;
    Ok(result.values)
}

#[derive(Debug, Clone)]
enum ColumnKind {
    /// Surplus variable of constraint row `w` (1-based).
    Slack(usize),
    Rule {
        labeling: Labeling,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct BasisColumn {
    kind: ColumnKind,
    var_id: u64,
}

impl BasisColumn {
    fn describe(&self) -> String {
        match &self.kind {
            ColumnKind::Slack(w) => format!("slack{w}"),
            ColumnKind::Rule { .. } => format!("rule#{}", self.var_id),
        }
    }

    fn constraint_column(&self, n_rows: usize) -> Vec<f64> {
        match &self.kind {
            ColumnKind::Slack(w) => {
                let mut col = vec![0.0; n_rows];
                col[*w] = -1.0;
                col
            }
            ColumnKind::Rule { values, .. } => {
                let mut col = Vec::with_capacity(n_rows);
                col.push(1.0);
                col.extend_from_slice(&values[1..]);
                col
            }
        }
    }

    fn cost(&self, objective: usize) -> f64 {
        match &self.kind {
            ColumnKind::Slack(_) => 0.0,
            ColumnKind::Rule { values, .. } => values[objective],
        }
    }
}

/// The master basis: `W + 1` columns, their inverse, and the basic values.
/// The inverse is maintained by product-form updates and refactored from
/// scratch every [`REFACTOR_EVERY`] pivots.
struct Master {
    n_rows: usize,
    rhs: Vec<f64>,
    columns: Vec<BasisColumn>,
    binv: Mat,
    x: Vec<f64>,
    /// Whether surplus variable `w` (1-based) is sign-restricted yet.
    restricted: Vec<bool>,
    next_var_id: u64,
    pivots_since_refactor: usize,
    pivots: usize,
}

impl Master {
    fn new(bounds: &[f64], first_rule: BasisColumn) -> Result<Self, ConstrainedError> {
        let w = bounds.len();
        let n_rows = w + 1;
        let mut rhs = Vec::with_capacity(n_rows);
        rhs.push(1.0);
        rhs.extend_from_slice(bounds);
        let mut columns = Vec::with_capacity(n_rows);
        columns.push(first_rule);
        for row in 1..=w {
            columns.push(BasisColumn {
                kind: ColumnKind::Slack(row),
                var_id: row as u64,
            });
        }
        let mut master = Master {
            n_rows,
            rhs,
            columns,
            binv: Mat::identity(n_rows),
            x: vec![0.0; n_rows],
            restricted: vec![false; w + 1],
            next_var_id: w as u64 + 1,
            pivots_since_refactor: 0,
            pivots: 0,
        };
        master.refactor()?;
        Ok(master)
    }

    fn refactor(&mut self) -> Result<(), ConstrainedError> {
        let n = self.n_rows;
        let mut b = Mat::zeros(n, n);
        for (pos, col) in self.columns.iter().enumerate() {
            for (row, v) in col.constraint_column(n).into_iter().enumerate() {
                b[(row, pos)] = v;
            }
        }
        let factors =
            lu_factor(&b).ok_or_else(|| ConstrainedError::Numerical("singular basis".into()))?;
        let mut binv = Mat::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = factors.solve(&e);
            for i in 0..n {
                binv[(i, j)] = col[i];
            }
        }
        self.binv = binv;
        self.x = self.binv.mul_vec(&self.rhs);
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// Row multipliers for the given objective: solves `B^T y = c_B` via
    /// the maintained inverse.
    #[allow(clippy::needless_range_loop)]
    fn duals(&self, objective: usize) -> Vec<f64> {
        let n = self.n_rows;
        let mut y = vec![0.0; n];
        for (pos, col) in self.columns.iter().enumerate() {
            let c = col.cost(objective);
            if c != 0.0 {
                for j in 0..n {
                    y[j] += c * self.binv[(pos, j)];
                }
            }
        }
        y
    }

    fn objective_value(&self, objective: usize) -> f64 {
        self.columns
            .iter()
            .zip(&self.x)
            .map(|(col, &weight)| col.cost(objective) * weight)
            .sum()
    }

    fn position_of_slack(&self, w: usize) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| matches!(c.kind, ColumnKind::Slack(row) if row == w))
    }

    fn row_is_restricted(&self, pos: usize) -> bool {
        match &self.columns[pos].kind {
            ColumnKind::Rule { .. } => true,
            ColumnKind::Slack(w) => self.restricted[*w],
        }
    }

    /// Mark surplus `w` sign-restricted, clamping away pivot dust.
    fn restrict(&mut self, w: usize) {
        self.restricted[w] = true;
        if let Some(pos) = self.position_of_slack(w) {
            if self.x[pos].abs() < 1e-11 {
                self.x[pos] = 0.0;
            }
        }
    }

    /// Execute a pivot with `entering`; returns (leaving description, step).
    #[allow(clippy::needless_range_loop)]
    fn pivot(&mut self, entering: BasisColumn) -> Result<(String, f64), ConstrainedError> {
        let a = entering.constraint_column(self.n_rows);
        let d = self.binv.mul_vec(&a);
        let mut leaving: Option<(usize, f64)> = None;
        for pos in 0..self.n_rows {
            if d[pos] > PIVOT_MIN && self.row_is_restricted(pos) {
                let ratio = self.x[pos].max(0.0) / d[pos];
                let better = match leaving {
                    None => true,
                    Some((best_pos, best_ratio)) => {
                        ratio < best_ratio - 1e-12
                            || ((ratio - best_ratio).abs() <= 1e-12
                                && self.columns[pos].var_id < self.columns[best_pos].var_id)
                    }
                };
                if better {
                    leaving = Some((pos, ratio));
                }
            }
        }
        let Some((pos, theta)) = leaving else {
            return Err(ConstrainedError::Numerical(
                "no eligible leaving column".into(),
            ));
        };
        // product-form update of the inverse and the basic values
        let pivot_val = d[pos];
        for j in 0..self.n_rows {
            self.binv[(pos, j)] /= pivot_val;
        }
        for i in 0..self.n_rows {
            if i != pos && d[i] != 0.0 {
                let factor = d[i];
                for j in 0..self.n_rows {
                    let delta = factor * self.binv[(pos, j)];
                    self.binv[(i, j)] -= delta;
                }
            }
        }
        for i in 0..self.n_rows {
            if i != pos {
                self.x[i] -= theta * d[i];
                if self.row_is_restricted(i) && self.x[i] < 0.0 && self.x[i] > -1e-11 {
                    self.x[i] = 0.0;
                }
            }
        }
        let leaving_desc = self.columns[pos].describe();
        self.x[pos] = theta;
        self.columns[pos] = entering;
        self.pivots += 1;
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok((leaving_desc, theta))
    }

    /// The rule columns of the current basic solution.
    fn support(&self) -> Vec<(&Labeling, &[f64], f64)> {
        self.columns
            .iter()
            .zip(&self.x)
            .filter_map(|(col, &weight)| match &col.kind {
                ColumnKind::Rule { labeling, values } if weight > 1e-12 => {
                    Some((labeling, values.as_slice(), weight))
                }
                _ => None,
            })
            .collect()
    }

    fn achieved(&self, n_types: usize) -> Vec<f64> {
        (0..n_types)
            .map(|t| {
                self.columns
                    .iter()
                    .zip(&self.x)
                    .map(|(col, &weight)| match &col.kind {
                        ColumnKind::Rule { values, .. } => values[t] * weight,
                        ColumnKind::Slack(_) => 0.0,
                    })
                    .sum()
            })
            .collect()
    }
}

enum StageEnd {
    Optimal,
    ReachedBound,
}

/// Solve the constrained program by phase-one/phase-two column generation.
pub fn solve(
    program: &ConstrainedProgram,
    opts: &SolveOptions,
    counters: &mut ConstrainedCounters,
) -> Result<SolveOutcome, ConstrainedError> {
    let w = program.n_constraints();
    let iter_limit = opts
        .iteration_limit
        .unwrap_or(10 * (w + 1) * program.instance.n_states().max(1));
    let mut log: Vec<IterationLog> = Vec::new();

    // bootstrap: one optimizer call gives the first basic rule column
    let first_objective = if w >= 1 { 1 } else { 0 };
    let (labeling, _) = price_objective(program, first_objective, &vec![0.0; w], counters)?;
    let values = rule_values(program, &labeling, counters)?;
    let mut master = Master::new(
        &program.bounds,
        BasisColumn {
            kind: ColumnKind::Rule { labeling, values },
            var_id: w as u64 + 1,
        },
    )?;
    master.next_var_id = w as u64 + 2;

    for stage in 1..=w {
        let bound = program.bounds[stage - 1];
        run_stage(
            program,
            &mut master,
            stage,
            Some(bound),
            opts,
            iter_limit,
            counters,
            &mut log,
        )?;
        let achieved = master.objective_value(stage);
        if achieved < bound - opts.feasibility_tol {
            return Ok(SolveOutcome::Infeasible {
                constraint: stage,
                max_achievable: achieved,
            });
        }
        master.restrict(stage);
    }
    run_stage(
        program,
        &mut master,
        0,
        None,
        opts,
        iter_limit,
        counters,
        &mut log,
    )?;

    let support = master
        .support()
        .into_iter()
        .map(|(labeling, values, weight)| SupportEntry {
            labeling: labeling.clone(),
            weight,
            first_played: program.first_played(labeling),
            values: values.to_vec(),
        })
        .collect::<Vec<_>>();
    let duals = master.duals(0);
    let y: Vec<f64> = (1..=w).map(|row| neg_dual(duals[row])).collect();
    let achieved = master.achieved(w + 1);
    Ok(SolveOutcome::Optimal(MixedSolution {
        objective: achieved[0],
        support,
        y0: duals[0],
        y,
        achieved,
        iterations: log,
        pivots: master.pivots,
    }))
}

/// Column-generate with the type-`objective` reward as the goal. With
/// `stop_at`, stop as soon as the objective reaches the bound (phase one);
/// otherwise run to optimality.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    program: &ConstrainedProgram,
    master: &mut Master,
    objective_type: usize,
    stop_at: Option<f64>,
    opts: &SolveOptions,
    iter_limit: usize,
    counters: &mut ConstrainedCounters,
    log: &mut Vec<IterationLog>,
) -> Result<StageEnd, ConstrainedError> {
    let w = program.n_constraints();
    let mut stalled_once = false;
    loop {
        if let Some(bound) = stop_at {
            if master.objective_value(objective_type) >= bound - 1e-12 {
                return Ok(StageEnd::ReachedBound);
            }
        }
        let duals = master.duals(objective_type);
        let y_price: Vec<f64> = (1..=w).map(|row| neg_dual(duals[row])).collect();
        let (labeling, priced_value) =
            price_objective(program, objective_type, &y_price, counters)?;
        let rule_rc = priced_value - duals[0];
        // a sign-restricted nonbasic surplus improves when its row
        // multiplier is positive
        let slack_candidate = (1..=w)
            .filter(|&row| master.restricted[row] && master.position_of_slack(row).is_none())
            .map(|row| (row, duals[row]))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let best_slack_rc = slack_candidate.map_or(f64::NEG_INFINITY, |(_, rc)| rc);
        if rule_rc.max(best_slack_rc) <= opts.optimality_tol {
            return Ok(StageEnd::Optimal);
        }
        let entering = if rule_rc >= best_slack_rc {
            let values = rule_values(program, &labeling, counters)?;
            // stall guard: a column already basic cannot truly profit
            let duplicate = master.columns.iter().any(|col| match &col.kind {
                ColumnKind::Rule { values: basic, .. } => values
                    .iter()
                    .zip(basic)
                    .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL * (1.0 + b.abs())),
                ColumnKind::Slack(_) => false,
            });
            if duplicate {
                if rule_rc <= DUPLICATE_TOL {
                    return Ok(StageEnd::Optimal);
                }
                if !stalled_once {
                    stalled_once = true;
                    master.refactor()?;
                    continue;
                }
                return Ok(StageEnd::Optimal);
            }
            stalled_once = false;
            let id = master.next_var_id;
            master.next_var_id += 1;
            BasisColumn {
                kind: ColumnKind::Rule {
                    labeling: labeling.clone(),
                    values,
                },
                var_id: id,
            }
        } else {
            let (row, _) = slack_candidate.unwrap();
            BasisColumn {
                kind: ColumnKind::Slack(row),
                var_id: row as u64,
            }
        };
        if master.pivots >= iter_limit {
            return Err(ConstrainedError::IterationLimit(iter_limit));
        }
        let entering_desc = entering.describe();
        let (leaving, step) = master.pivot(entering)?;
        log.push(IterationLog {
            stage: objective_type,
            y0: duals[0],
            y: y_price,
            priced_value,
            reduced_cost: rule_rc.max(best_slack_rc),
            entering: entering_desc,
            leaving,
            step,
            objective_after: master.objective_value(objective_type),
        });
    }
}
