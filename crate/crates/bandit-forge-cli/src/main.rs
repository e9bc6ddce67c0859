//! Batch front door for the bandit-forge solvers.
//!
//! One command per invocation; the result is a single JSON document on
//! stdout (or `--output`), versioned with `"schema": 1` and byte-identical
//! across runs for identical input and configuration. Exit codes: 0 on
//! success, 1 on domain failures (validation failure, infeasibility,
//! hypothesis violations — with a structured report as the output
//! document), 2 on usage, I/O, and parse errors.

use bandit_forge::constrained::{
    solve, ConstrainedCounters, ConstrainedError, SolveOptions, SolveOutcome,
};
use bandit_forge::counter::OpCounter;
use bandit_forge::evaluate::{evaluate, EvalError};
use bandit_forge::format::{instance_to_file, load_constraints, load_instance, FormatError};
use bandit_forge::gen::{random_instance, GenConfig};
use bandit_forge::labeling::Labeling;
use bandit_forge::model::{
    validate_with_tol, Hypothesis, Instance, ModelError, MultiState, TRANSIENCE_TOL,
};
use bandit_forge::optimize::{
    optimize, optimize_two_phase, OptimalLabeling, OptimizeError, OptimizerCounters,
};
use bandit_forge::oracle::{
    oracle_constrained, oracle_evaluate_labeling, oracle_optimal, OracleError, ProductModel,
    ORACLE_CAP,
};
use bandit_forge::preference::categorize;
use bandit_forge::tableau::{finalize_instance, triangularize, TableauError};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "bandit-forge",
    version,
    about = "Multi-armed bandit solvers: priority-rule optimization, exact evaluation, and reward-constrained column generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the JSON document here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Transience-test tolerance override.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Product-space size cap override.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Simplex pivot budget for solve.
    #[arg(long, global = true)]
    iter_limit: Option<usize>,
    /// Include operation-count breakdowns in the output.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    counts: bool,
    /// Triangularize bandits concurrently where the algorithms allow it.
    #[arg(long, global = true)]
    parallel: bool,
    /// Seed for random fixture generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check an instance against its declared hypothesis.
    Validate(InstanceArg),
    /// Finalize every bandit's data under a labeling.
    Triangularize {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        labels: LabelsArg,
    },
    /// List states by preference ratio under the original data.
    Rank(InstanceArg),
    /// Expected utility of the priority rule keyed to a labeling.
    Evaluate {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        labels: LabelsArg,
        #[command(flatten)]
        start: StartArg,
    },
    /// Construct an optimal labeling.
    Optimize {
        #[command(flatten)]
        instance: InstanceArg,
        /// Use the two-step variant (per-bandit optimization, then a merge).
        #[arg(long)]
        two_phase: bool,
    },
    /// Solve a reward-constrained program by column generation.
    Solve {
        #[command(flatten)]
        instance: InstanceArg,
        /// Constraints file: rewards, bounds, start.
        #[arg(long)]
        constraints: PathBuf,
    },
    /// Brute-force product-space counterparts, for diffing.
    Oracle {
        #[command(subcommand)]
        what: OracleCommand,
    },
    /// Emit a random valid instance (fixture generation; honors --seed).
    Gen {
        /// RN, RA, or RS.
        #[arg(long, default_value = "RN")]
        hypothesis: String,
        #[arg(long, default_value_t = 2)]
        bandits: usize,
        #[arg(long, default_value_t = 3)]
        max_states: usize,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Product-space policy evaluation of a priority rule.
    Evaluate {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        labels: LabelsArg,
        #[command(flatten)]
        start: StartArg,
    },
    /// Optimal values by value iteration plus one exact solve.
    Optimize {
        #[command(flatten)]
        instance: InstanceArg,
        /// Report only this start (comma-separated global ids).
        #[arg(long)]
        start: Option<String>,
    },
    /// Exact constrained optimum over every labeling's column.
    Solve {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long)]
        constraints: PathBuf,
    },
}

#[derive(Args)]
struct InstanceArg {
    /// Instance file (JSON).
    instance: PathBuf,
}

#[derive(Args)]
struct LabelsArg {
    /// One label per global state id, comma-separated; or "optimizer"
    /// (alias "from-optimizer") to construct an optimal labeling first.
    #[arg(long)]
    labels: String,
}

#[derive(Args)]
struct StartArg {
    /// Start multi-state: one global state id per bandit, comma-separated.
    #[arg(long)]
    start: String,
}

/// Failures split by exit code: usage errors go to stderr (2), domain
/// failures become the output document (1).
enum Failure {
    Usage(String),
    Domain(serde_json::Value),
}

macro_rules! usage_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::Usage(e.to_string())
            }
        })*
    };
}
usage_from!(
    FormatError,
    ModelError,
    EvalError,
    OracleError,
    std::io::Error
);

impl From<TableauError> for Failure {
    fn from(e: TableauError) -> Self {
        match e {
            TableauError::HypothesisViolation {
                bandit,
                state,
                value,
            } => Failure::Domain(serde_json::json!({
                "schema": 1,
                "error": {
                    "kind": "hypothesis_violation",
                    "bandit": bandit,
                    "state": state,
                    "pivot": value,
                }
            })),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<OptimizeError> for Failure {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Tableau(t) => t.into(),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<ConstrainedError> for Failure {
    fn from(e: ConstrainedError) -> Self {
        match e {
            ConstrainedError::Optimize(o) => o.into(),
            other => Failure::Usage(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct Counts {
    adds: u64,
    subs: u64,
    muls: u64,
    divs: u64,
    comparisons: u64,
    arithmetic: u64,
}

impl From<OpCounter> for Counts {
    fn from(c: OpCounter) -> Self {
        Counts {
            adds: c.adds,
            subs: c.subs,
            muls: c.muls,
            divs: c.divs,
            comparisons: c.comparisons,
            arithmetic: c.arithmetic(),
        }
    }
}

#[derive(Serialize)]
struct OptimizerCounts {
    triangularize: Counts,
    selection: Counts,
}

impl From<OptimizerCounters> for OptimizerCounts {
    fn from(c: OptimizerCounters) -> Self {
        OptimizerCounts {
            triangularize: c.triangularize.into(),
            selection: c.selection.into(),
        }
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn main() {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("BANDIT_FORGE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    match run(&cli) {
        Ok(doc) => {
            if emit(&cli, &doc).is_err() {
                std::process::exit(2);
            }
        }
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            std::process::exit(2);
        }
        Err(Failure::Domain(doc)) => {
            let _ = emit(&cli, &doc);
            std::process::exit(1);
        }
    }
}

fn emit(cli: &Cli, doc: &serde_json::Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(doc).expect("documents serialize");
    text.push('\n');
    match &cli.output {
        Some(path) => std::fs::write(path, text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, Failure> {
    match &cli.command {
        Command::Validate(arg) => run_validate(cli, &arg.instance),
        Command::Triangularize { instance, labels } => {
            run_triangularize(cli, &instance.instance, &labels.labels)
        }
        Command::Rank(arg) => run_rank(cli, &arg.instance),
        Command::Evaluate {
            instance,
            labels,
            start,
        } => run_evaluate(cli, &instance.instance, &labels.labels, &start.start),
        Command::Optimize {
            instance,
            two_phase,
        } => run_optimize(cli, &instance.instance, *two_phase),
        Command::Solve {
            instance,
            constraints,
        } => run_solve(cli, &instance.instance, constraints),
        Command::Oracle { what } => match what {
            OracleCommand::Evaluate {
                instance,
                labels,
                start,
            } => run_oracle_evaluate(cli, &instance.instance, &labels.labels, &start.start),
            OracleCommand::Optimize { instance, start } => {
                run_oracle_optimize(cli, &instance.instance, start.as_deref())
            }
            OracleCommand::Solve {
                instance,
                constraints,
            } => run_oracle_solve(cli, &instance.instance, constraints),
        },
        Command::Gen {
            hypothesis,
            bandits,
            max_states,
        } => run_gen(cli, hypothesis, *bandits, *max_states),
    }
}

/// Load an instance and require it to pass validation; the solvers'
/// contracts assume it. Failing instances become the domain report.
fn load_validated(cli: &Cli, path: &Path) -> Result<Instance, Failure> {
    let instance = load_instance(path)?;
    let report = validate_with_tol(&instance, cli.tol.unwrap_or(TRANSIENCE_TOL));
    if !report.passed {
        return Err(Failure::Domain(serde_json::json!({
            "schema": 1,
            "command": "validate",
            "passed": false,
            "hypothesis": report.hypothesis,
            "chains": report.chains,
            "first_violation": report.first_violation,
        })));
    }
    Ok(instance)
}

fn parse_csv_usize(text: &str, what: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Usage(format!("{what}: {part:?} is not a state id")))
        })
        .collect()
}

/// Resolve `--labels`: an explicit per-state list, or "optimizer" to run
/// the optimizer (returning its finalized data for reuse).
fn resolve_labeling(
    spec: &str,
    instance: &Instance,
) -> Result<(Labeling, Option<OptimalLabeling>, Option<OptimizerCounters>), Failure> {
    if spec == "optimizer" || spec == "from-optimizer" {
        let mut counters = OptimizerCounters::default();
        let result = optimize(instance, &mut counters)?;
        Ok((result.labeling.clone(), Some(result), Some(counters)))
    } else {
        let labels = parse_csv_usize(spec, "--labels")?;
        let labeling =
            Labeling::new(labels).map_err(|e| Failure::Usage(format!("--labels: {e}")))?;
        labeling
            .check_size(instance)
            .map_err(|e| Failure::Usage(format!("--labels: {e}")))?;
        Ok((labeling, None, None))
    }
}

fn parse_start(spec: &str, instance: &Instance) -> Result<MultiState, Failure> {
    let globals = parse_csv_usize(spec, "--start")?;
    instance
        .multistate_from_globals(&globals)
        .map_err(|e| Failure::Usage(format!("--start: {e}")))
}

fn run_validate(cli: &Cli, path: &Path) -> Result<serde_json::Value, Failure> {
    let instance = load_instance(path)?;
    let report = validate_with_tol(&instance, cli.tol.unwrap_or(TRANSIENCE_TOL));
    let doc = serde_json::json!({
        "schema": 1,
        "command": "validate",
        "passed": report.passed,
        "hypothesis": report.hypothesis,
        "chains": report.chains,
        "first_violation": report.first_violation,
    });
    if report.passed {
        Ok(doc)
    } else {
        Err(Failure::Domain(doc))
    }
}

fn run_triangularize(cli: &Cli, path: &Path, labels: &str) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let (labeling, precomputed, opt_counters) = resolve_labeling(labels, &instance)?;
    let mut counter = match &opt_counters {
        Some(c) => c.triangularize,
        None => OpCounter::new(),
    };
    let bandits: Vec<serde_json::Value> = match precomputed {
        Some(opt) => opt
            .finalized
            .iter()
            .enumerate()
            .map(|(k, fin)| {
                serde_json::json!({
                    "bandit": k,
                    "r_tilde": fin.rewards[0],
                    "q_tilde": fin.q,
                })
            })
            .collect(),
        None => {
            let mut out = Vec::with_capacity(instance.n_bandits());
            for k in 0..instance.n_bandits() {
                let order = labeling.bandit_order(&instance, k);
                let tableau = triangularize(instance.chain(k), &order, &mut counter)?;
                let (r_tilde, q_tilde) = tableau
                    .finalized_data()
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                out.push(serde_json::json!({
                    "bandit": k,
                    "r_tilde": r_tilde,
                    "q_tilde": q_tilde,
                }));
            }
            out
        }
    };
    let mut doc = serde_json::json!({
        "schema": 1,
        "command": "triangularize",
        "labels": labeling.labels(),
        "bandits": bandits,
    });
    if cli.counts {
        doc["op_count"] = serde_json::to_value(Counts::from(counter)).unwrap();
    }
    Ok(doc)
}

fn run_rank(cli: &Cli, path: &Path) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let mut rows = Vec::with_capacity(instance.n_states());
    for id in instance.state_ids() {
        let chain = instance.chain(id.bandit);
        let stats = categorize(
            chain.r[id.local],
            chain.amp[id.local],
            instance.hypothesis(),
        )
        .map_err(|e| Failure::Usage(e.to_string()))?;
        rows.push((id, stats));
    }
    rows.sort_by(|a, b| {
        b.1.rho
            .total_cmp(&a.1.rho)
            .then(a.0.global.cmp(&b.0.global))
    });
    let states: Vec<serde_json::Value> = rows
        .into_iter()
        .map(|(id, stats)| {
            serde_json::json!({
                "state": id.global,
                "bandit": id.bandit,
                "local": id.local,
                "r": stats.r,
                "a": stats.a,
                "category": stats.category as u8,
                "rho": finite_or_none(stats.rho),
            })
        })
        .collect();
    Ok(serde_json::json!({
        "schema": 1,
        "command": "rank",
        "states": states,
    }))
}

fn run_evaluate(
    cli: &Cli,
    path: &Path,
    labels: &str,
    start: &str,
) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let (labeling, precomputed, opt_counters) = resolve_labeling(labels, &instance)?;
    let start = parse_start(start, &instance)?;
    let mut tri_counter = OpCounter::new();
    let finalized = match &precomputed {
        Some(opt) => opt.finalized.clone(),
        None => finalize_instance(&instance, &labeling, cli.parallel, &mut tri_counter)?,
    };
    let mut eval_counter = OpCounter::new();
    let result = evaluate(&instance, &labeling, &start, &finalized, &mut eval_counter)?;
    let mut doc = serde_json::json!({
        "schema": 1,
        "command": "evaluate",
        "labels": labeling.labels(),
        "value": result.value(),
        "z": result.z,
    });
    if cli.counts {
        doc["op_count"] = serde_json::json!({
            "triangularize": Counts::from(match &opt_counters {
                Some(c) => c.triangularize,
                None => tri_counter,
            }),
            "evaluate": Counts::from(eval_counter),
        });
    }
    Ok(doc)
}

fn optimal_labeling_doc(result: &OptimalLabeling) -> serde_json::Value {
    let labels: Vec<serde_json::Value> = result
        .records
        .iter()
        .map(|rec| {
            serde_json::json!({
                "state": rec.state,
                "label": rec.label,
                "category": rec.stats.category as u8,
                "rho_final": finite_or_none(rec.stats.rho),
            })
        })
        .collect();
    serde_json::json!({
        "labels": labels,
        "full_labeling": result.labeling.labels(),
        "stop_label": result.stop_label,
    })
}

fn run_optimize(cli: &Cli, path: &Path, two_phase: bool) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let mut counters = OptimizerCounters::default();
    let result = if two_phase {
        optimize_two_phase(&instance, cli.parallel, &mut counters)?
    } else {
        optimize(&instance, &mut counters)?
    };
    let mut doc = serde_json::json!({
        "schema": 1,
        "command": "optimize",
        "variant": if two_phase { "two_phase" } else { "interleaved" },
    });
    let body = optimal_labeling_doc(&result);
    for (key, value) in body.as_object().unwrap() {
        doc[key] = value.clone();
    }
    if cli.counts {
        doc["counts"] = serde_json::to_value(OptimizerCounts::from(counters)).unwrap();
    }
    Ok(doc)
}

fn run_solve(cli: &Cli, path: &Path, constraints: &Path) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let program = load_constraints(constraints, &instance)?;
    let opts = SolveOptions {
        iteration_limit: cli.iter_limit,
        ..SolveOptions::default()
    };
    let mut counters = ConstrainedCounters::default();
    let outcome = solve(&program, &opts, &mut counters)?;
    let counts = cli.counts.then(|| {
        serde_json::json!({
            "optimizer": OptimizerCounts::from(counters.optimizer),
            "evaluator": Counts::from(counters.evaluator),
        })
    });
    match outcome {
        SolveOutcome::Optimal(sol) => {
            let support: Vec<serde_json::Value> = sol
                .support
                .iter()
                .map(|entry| {
                    serde_json::json!({
                        "weight": entry.weight,
                        "first_played": entry.first_played,
                        "labels": entry.labeling.labels(),
                        "values": entry.values,
                    })
                })
                .collect();
            let mut doc = serde_json::json!({
                "schema": 1,
                "command": "solve",
                "outcome": "optimal",
                "objective": sol.objective,
                "support": support,
                "multipliers": { "y0": sol.y0, "y": sol.y },
                "achieved": sol.achieved,
                "pivots": sol.pivots,
                "iterations": sol.iterations,
            });
            if let Some(counts) = counts {
                doc["counts"] = counts;
            }
            Ok(doc)
        }
        SolveOutcome::Infeasible {
            constraint,
            max_achievable,
        } => {
            let mut doc = serde_json::json!({
                "schema": 1,
                "command": "solve",
                "outcome": "infeasible",
                "constraint": constraint,
                "max_achievable": max_achievable,
            });
            if let Some(counts) = counts {
                doc["counts"] = counts;
            }
            Err(Failure::Domain(doc))
        }
    }
}

fn run_oracle_evaluate(
    cli: &Cli,
    path: &Path,
    labels: &str,
    start: &str,
) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let (labeling, _, _) = resolve_labeling(labels, &instance)?;
    let start = parse_start(start, &instance)?;
    let cap = cli.cap.unwrap_or(ORACLE_CAP);
    let value = oracle_evaluate_labeling(&instance, &labeling, &start, cap)?;
    Ok(serde_json::json!({
        "schema": 1,
        "command": "oracle_evaluate",
        "labels": labeling.labels(),
        "value": value,
    }))
}

fn run_oracle_optimize(
    cli: &Cli,
    path: &Path,
    start: Option<&str>,
) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let cap = cli.cap.unwrap_or(ORACLE_CAP);
    let (f, policy) = oracle_optimal(&instance, cap)?;
    let pm = ProductModel::new(&instance, cap)?;
    match start {
        Some(spec) => {
            let s = parse_start(spec, &instance)?;
            let idx = pm.index(&s);
            Ok(serde_json::json!({
                "schema": 1,
                "command": "oracle_optimize",
                "value": f[idx],
                "plays": policy[idx],
            }))
        }
        None => {
            let values: Vec<serde_json::Value> = pm
                .states()
                .iter()
                .enumerate()
                .map(|(idx, s)| {
                    let globals: Vec<usize> =
                        s.0.iter()
                            .enumerate()
                            .map(|(k, &local)| instance.global_id(k, local))
                            .collect();
                    serde_json::json!({
                        "state": globals,
                        "value": f[idx],
                        "plays": policy[idx],
                    })
                })
                .collect();
            Ok(serde_json::json!({
                "schema": 1,
                "command": "oracle_optimize",
                "values": values,
            }))
        }
    }
}

fn run_oracle_solve(
    cli: &Cli,
    path: &Path,
    constraints: &Path,
) -> Result<serde_json::Value, Failure> {
    let instance = load_validated(cli, path)?;
    let program = load_constraints(constraints, &instance)?;
    let cap = cli.cap.unwrap_or(ORACLE_CAP);
    let result = oracle_constrained(&program, cap)?;
    let doc = serde_json::json!({
        "schema": 1,
        "command": "oracle_solve",
        "feasible": result.feasible,
        "objective": result.objective,
    });
    if result.feasible {
        Ok(doc)
    } else {
        Err(Failure::Domain(doc))
    }
}

fn run_gen(
    cli: &Cli,
    hypothesis: &str,
    bandits: usize,
    max_states: usize,
) -> Result<serde_json::Value, Failure> {
    let hypothesis = match hypothesis {
        "RN" => Hypothesis::RN,
        "RA" => Hypothesis::RA,
        "RS" => Hypothesis::RS,
        other => {
            return Err(Failure::Usage(format!(
                "--hypothesis: {other:?} is not one of RN, RA, RS"
            )))
        }
    };
    if bandits == 0 || max_states == 0 {
        return Err(Failure::Usage(
            "--bandits and --max-states must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let instance = random_instance(&GenConfig::new(hypothesis, bandits, max_states), &mut rng);
    Ok(serde_json::to_value(instance_to_file(&instance)).expect("instances serialize"))
}
