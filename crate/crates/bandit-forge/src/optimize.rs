//! Construction of an optimal labeling.
//!
//! The optimizer triangularizes all bandits contemporaneously. A candidate
//! set holds, per bandit, one state weakly preferable to everything else
//! remaining in that bandit under *current* (partially finalized) data. At
//! each step the best candidate receives the next label, one row-operation
//! step finalizes it and updates its bandit's remaining states, and a fresh
//! candidate is selected from that bandit. The loop stops as soon as any
//! bandit runs out of states: no state labeled later can ever be played,
//! because it cannot have the lowest label.
//!
//! The candidate set is kept as a ranked list with cached ratios, so
//! picking the winner is free and re-inserting a bandit's new candidate
//! costs at most `K - 1` comparisons. Selection work (ratio divisions and
//! comparisons) is counted separately from the row-operation work.

use crate::counter::OpCounter;
use crate::labeling::{Labeling, LabelingError};
use crate::model::Instance;
use crate::preference::{argbest, PreferenceError, StateStats};
use crate::tableau::{Finalized, Tableau, TableauError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
}

/// Separate books for the two kinds of optimizer work.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct OptimizerCounters {
    /// Row operations: the per-step triangularizer work, including the
    /// tracked row-sum column.
    pub triangularize: OpCounter,
    /// Candidate selection: ratio divisions and comparisons.
    pub selection: OpCounter,
}

/// One assigned label, with the state's comparison stats at selection time
/// (finalizing a state preserves its ratio, so this is also the finalized
/// ratio).
#[derive(Debug, Clone, Serialize)]
pub struct LabelRecord {
    pub state: usize,
    pub label: usize,
    pub stats: StateStats,
}

/// An optimal labeling together with the finalized data produced while
/// constructing it.
#[derive(Debug, Clone)]
pub struct OptimalLabeling {
    /// Total labeling: labels `1..=stop_label` were assigned by the
    /// algorithm, the rest fill in by global-id order.
    pub labeling: Labeling,
    /// Highest label with optimality reasoning behind it.
    pub stop_label: usize,
    /// Selection record per assigned label, in label order.
    pub records: Vec<LabelRecord>,
    /// Complete finalized data for every bandit under `labeling`.
    pub finalized: Vec<Finalized>,
}

/// Insert into the ranked candidate list: descending ratio, ties broken by
/// the smaller global id. One comparison per probed position.
fn ranked_insert(
    ranked: &mut Vec<(usize, StateStats)>,
    entry: (usize, StateStats),
    counter: &mut OpCounter,
) {
    let mut pos = 0;
    while pos < ranked.len() {
        counter.cmp(1);
        let (id, stats) = &ranked[pos];
        if stats.rho > entry.1.rho || (stats.rho == entry.1.rho && *id < entry.0) {
            pos += 1;
        } else {
            break;
        }
    }
    ranked.insert(pos, entry);
}

fn best_of_bandit(
    instance: &Instance,
    tableau: &Tableau,
    k: usize,
    counter: &mut OpCounter,
) -> Result<(usize, StateStats), OptimizeError> {
    let candidates: Vec<(usize, f64, f64)> = tableau
        .unfinalized()
        .map(|i| {
            let (r, one_minus_a) = tableau.stat(i);
            (instance.global_id(k, i), r, one_minus_a)
        })
        .collect();
    Ok(argbest(&candidates, instance.hypothesis(), counter)?)
}

/// Build an optimal labeling for a validated instance.
pub fn optimize(
    instance: &Instance,
    counters: &mut OptimizerCounters,
) -> Result<OptimalLabeling, OptimizeError> {
    let k_count = instance.n_bandits();
    let n = instance.n_states();
    let mut tableaus: Vec<Tableau> = (0..k_count)
        .map(|k| Tableau::from_chain(k, instance.chain(k), true, &mut counters.triangularize))
        .collect::<Result<_, _>>()?;
    let mut ranked: Vec<(usize, StateStats)> = Vec::with_capacity(k_count);
    for (k, tableau) in tableaus.iter().enumerate() {
        let best = best_of_bandit(instance, tableau, k, &mut counters.selection)?;
        ranked_insert(&mut ranked, best, &mut counters.selection);
    }
    let mut labels = vec![0usize; n];
    let mut records = Vec::new();
    let mut next_label = 1usize;
    loop {
        let (g, stats) = ranked.remove(0);
        let (k, i) = instance.locate(g).expect("candidate id is in range");
        labels[g] = next_label;
        records.push(LabelRecord {
            state: g,
            label: next_label,
            stats,
        });
        next_label += 1;
        tableaus[k].step(i, &mut counters.triangularize)?;
        if tableaus[k].is_complete() {
            break;
        }
        let best = best_of_bandit(instance, &tableaus[k], k, &mut counters.selection)?;
        ranked_insert(&mut ranked, best, &mut counters.selection);
    }
    let stop_label = next_label - 1;
    finish(tableaus, labels, next_label, stop_label, records, counters)
}

/// Complete the labeling over unlabeled states (global-id order), finish
/// the tableaus in that order, and package the result.
fn finish(
    mut tableaus: Vec<Tableau>,
    mut labels: Vec<usize>,
    mut next_label: usize,
    stop_label: usize,
    records: Vec<LabelRecord>,
    counters: &mut OptimizerCounters,
) -> Result<OptimalLabeling, OptimizeError> {
    for label in labels.iter_mut() {
        if *label == 0 {
            *label = next_label;
            next_label += 1;
        }
    }
    for (k, tableau) in tableaus.iter_mut().enumerate() {
        let pending: Vec<usize> = tableau.unfinalized().collect();
        for i in pending {
            tableau.step(i, &mut counters.triangularize)?;
        }
        debug_assert_eq!(tableau.bandit(), k);
    }
    let finalized = tableaus
        .iter()
        .map(Finalized::from_tableau)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OptimalLabeling {
        labeling: Labeling::new(labels)?,
        stop_label,
        records,
        finalized,
    })
}

/// One bandit's self-optimization: its states in finalization order with
/// their stats, the finalized data, and the two work counters.
type BanditPass = (Vec<(usize, StateStats)>, Finalized, OpCounter, OpCounter);

/// The two-step alternative: first optimize within each bandit separately,
/// then rank all states by weak preference on finalized data. The keyed
/// rule's value function matches [`optimize`]'s (the labelings may differ).
pub fn optimize_two_phase(
    instance: &Instance,
    parallel: bool,
    counters: &mut OptimizerCounters,
) -> Result<OptimalLabeling, OptimizeError> {
    let run_bandit = |k: usize| -> Result<BanditPass, OptimizeError> {
        let mut tri = OpCounter::new();
        let mut sel = OpCounter::new();
        let mut tableau = Tableau::from_chain(k, instance.chain(k), true, &mut tri)?;
        let mut order = Vec::with_capacity(instance.chain(k).n_states());
        while !tableau.is_complete() {
            let (g, stats) = best_of_bandit(instance, &tableau, k, &mut sel)?;
            let (_, i) = instance.locate(g).expect("in range");
            tableau.step(i, &mut tri)?;
            order.push((g, stats));
        }
        let fin = Finalized::from_tableau(&tableau)?;
        Ok((order, fin, tri, sel))
    };
    let per_bandit: Vec<BanditPass> = if parallel {
        use rayon::prelude::*;
        (0..instance.n_bandits())
            .into_par_iter()
            .map(run_bandit)
            .collect::<Result<_, _>>()?
    } else {
        (0..instance.n_bandits())
            .map(run_bandit)
            .collect::<Result<_, _>>()?
    };
    let mut orders = Vec::with_capacity(per_bandit.len());
    let mut finalized = Vec::with_capacity(per_bandit.len());
    for (order, fin, tri, sel) in per_bandit {
        counters.triangularize.merge(&tri);
        counters.selection.merge(&sel);
        orders.push(order);
        finalized.push(fin);
    }
    // merge the per-bandit sequences by weak preference on finalized data;
    // within a bandit the finalization order must be preserved
    let n = instance.n_states();
    let mut heads = vec![0usize; orders.len()];
    let mut labels = vec![0usize; n];
    let mut records = Vec::with_capacity(n);
    for label in 1..=n {
        let mut best: Option<(usize, (usize, StateStats))> = None;
        for (k, order) in orders.iter().enumerate() {
            let Some(&(g, stats)) = order.get(heads[k]) else {
                continue;
            };
            match best {
                None => best = Some((k, (g, stats))),
                Some((_, (best_g, best_stats))) => {
                    counters.selection.cmp(1);
                    if stats.rho > best_stats.rho || (stats.rho == best_stats.rho && g < best_g) {
                        best = Some((k, (g, stats)));
                    }
                }
            }
        }
        let (k, (g, stats)) = best.expect("heads cover all states");
        heads[k] += 1;
        labels[g] = label;
        records.push(LabelRecord {
            state: g,
            label,
            stats,
        });
    }
    Ok(OptimalLabeling {
        labeling: Labeling::new(labels)?,
        stop_label: n,
        records,
        finalized,
    })
}
