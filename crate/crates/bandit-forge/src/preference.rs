//! Pairwise state comparison: categories, ratios, and weak preference.
//!
//! Playing state `i` earns `r(i)` and multiplies all future utility by its
//! amplification `a(i)`. State `i` is *preferable* to `j` when playing `i`
//! first wins the interchange comparison
//! `r(i) + a(i) r(j) > r(j) + a(j) r(i)`. Preference alone is not
//! transitive; refining ties by a three-way category yields *weak
//! preference*, a total preorder, and weak preference is exactly a
//! comparison of extended-real ratios: `i` is weakly preferable to `j` iff
//! `rho(i) >= rho(j)`.
//!
//! Category 1 states (ratio `+inf`) are always played first, category 3
//! (`-inf`) last, and category 2 states are ranked by a finite ratio that
//! depends on the hypothesis:
//!
//! - risk-neutral: `rho = r / (1 - a)` (amplifications are at most 1);
//! - risk-averse:  `rho = (a - 1) / r` (rewards are nonpositive);
//! - risk-seeking: `rho = (a - 1) / r` (rewards are nonnegative).

use crate::counter::OpCounter;
use crate::model::Hypothesis;
use serde::Serialize;
use thiserror::Error;

/// Absolute tolerance for the exact-equality gates `a = 1` and `r = 0`.
pub const EQ_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("state data (r = {r}, a = {a}) is outside the {hypothesis} domain")]
    OutOfDomain {
        hypothesis: Hypothesis,
        r: f64,
        a: f64,
    },
    #[error("argbest requires a nonempty candidate set")]
    EmptySet,
}

/// Preference category: 1 is played before 2, 2 before 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Category {
    One = 1,
    Two = 2,
    Three = 3,
}

/// A state's comparison data. `rho` is an extended real: `+inf` for
/// category 1, finite for category 2, `-inf` for category 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateStats {
    pub r: f64,
    pub a: f64,
    pub category: Category,
    pub rho: f64,
}

/// Assign a category and ratio to `(r, a)` under `hypothesis`.
pub fn categorize(r: f64, a: f64, hypothesis: Hypothesis) -> Result<StateStats, PreferenceError> {
    stats_from_parts(r, 1.0 - a, hypothesis, None).map(|mut s| {
        s.a = a;
        s
    })
}

/// Same as [`categorize`] but takes `1 - a` directly (the quantity the
/// tableau maintains) and counts the category-2 ratio division.
pub(crate) fn stats_from_parts(
    r: f64,
    one_minus_a: f64,
    hypothesis: Hypothesis,
    counter: Option<&mut OpCounter>,
) -> Result<StateStats, PreferenceError> {
    let a = 1.0 - one_minus_a;
    let out_of_domain = || PreferenceError::OutOfDomain { hypothesis, r, a };
    if one_minus_a > 1.0 + EQ_TOL {
        // amplification below zero is impossible for nonnegative rates
        return Err(out_of_domain());
    }
    let (category, rho) = match hypothesis {
        Hypothesis::RN => {
            if one_minus_a < -EQ_TOL {
                return Err(out_of_domain());
            }
            if one_minus_a > EQ_TOL {
                let rho = r / one_minus_a;
                if let Some(c) = counter {
                    c.div(1);
                }
                (Category::Two, rho)
            } else if r >= 0.0 {
                (Category::One, f64::INFINITY)
            } else {
                (Category::Three, f64::NEG_INFINITY)
            }
        }
        Hypothesis::RA => {
            if r > EQ_TOL {
                return Err(out_of_domain());
            }
            if r < -EQ_TOL {
                let rho = -one_minus_a / r;
                if let Some(c) = counter {
                    c.div(1);
                }
                (Category::Two, rho)
            } else if one_minus_a >= -EQ_TOL {
                (Category::One, f64::INFINITY)
            } else {
                (Category::Three, f64::NEG_INFINITY)
            }
        }
        Hypothesis::RS => {
            if r < -EQ_TOL {
                return Err(out_of_domain());
            }
            if r > EQ_TOL {
                let rho = -one_minus_a / r;
                if let Some(c) = counter {
                    c.div(1);
                }
                (Category::Two, rho)
            } else if one_minus_a <= EQ_TOL {
                (Category::One, f64::INFINITY)
            } else {
                (Category::Three, f64::NEG_INFINITY)
            }
        }
    };
    Ok(StateStats {
        r,
        a,
        category,
        rho,
    })
}

/// Whether `i` is weakly preferable to `j`: `rho(i) >= rho(j)`.
pub fn weakly_preferred(i: &StateStats, j: &StateStats) -> bool {
    i.rho >= j.rho
}

/// The defining interchange comparison refined by categories: strict
/// inequality, or equality with `i`'s category at least as small. Kept as
/// an independent route for cross-checking the ratio comparison.
pub fn interchange_weakly_preferred(i: &StateStats, j: &StateStats) -> bool {
    let play_i_first = i.r + i.a * j.r;
    let play_j_first = j.r + j.a * i.r;
    play_i_first > play_j_first || (play_i_first == play_j_first && i.category <= j.category)
}

/// Pick a state weakly preferable to every candidate. Candidates are
/// `(global id, r, 1 - a)`; ties are broken by the smallest id. Consumes at
/// most one division per candidate (ratio computations) and one comparison
/// per candidate after the first.
pub fn argbest(
    candidates: &[(usize, f64, f64)],
    hypothesis: Hypothesis,
    counter: &mut OpCounter,
) -> Result<(usize, StateStats), PreferenceError> {
    let mut iter = candidates.iter();
    let &(first_id, r, oma) = iter.next().ok_or(PreferenceError::EmptySet)?;
    let mut best = (
        first_id,
        stats_from_parts(r, oma, hypothesis, Some(counter))?,
    );
    for &(id, r, oma) in iter {
        let stats = stats_from_parts(r, oma, hypothesis, Some(counter))?;
        counter.cmp(1);
        if stats.rho > best.1.rho || (stats.rho == best.1.rho && id < best.0) {
            best = (id, stats);
        }
    }
    Ok(best)
}

/// `x >= y` with relative slack; infinities compare exactly.
pub fn rho_ge(x: f64, y: f64, tol: f64) -> bool {
    if x.is_infinite() || y.is_infinite() {
        x >= y
    } else {
        x >= y - tol * (1.0 + x.abs().max(y.abs()))
    }
}

/// `x == y` with relative slack; infinities compare exactly.
pub fn rho_eq(x: f64, y: f64, tol: f64) -> bool {
    if x.is_infinite() || y.is_infinite() {
        x == y
    } else {
        (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()))
    }
}

/// Check the effect of one finalization step on ratios, given that the
/// pivot was weakly preferable to every other remaining state: the pivot's
/// ratio must be unchanged, and every other ratio may improve but not past
/// the pivot's.
pub fn ratio_monotone_check(
    pivot_before: &StateStats,
    pivot_after: &StateStats,
    others: &[(StateStats, StateStats)],
    tol: f64,
) -> bool {
    if !rho_eq(pivot_after.rho, pivot_before.rho, tol) {
        return false;
    }
    others.iter().all(|(before, after)| {
        rho_ge(pivot_before.rho, after.rho, tol) && rho_ge(after.rho, before.rho, tol)
    })
}
