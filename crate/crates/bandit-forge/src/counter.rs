//! Arithmetic operation accounting.
//!
//! Several algorithms in this crate come with exact operation-count
//! contracts, so counting is part of the public API rather than a debug
//! feature: every counted routine takes a `&mut OpCounter` and bumps it as
//! it works.

use serde::Serialize;

/// Running tally of arithmetic operations and comparisons.
///
/// Counters are monotone nondecreasing during a run. Distinct workers keep
/// private counters and merge them after joining.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounter {
    pub adds: u64,
    pub subs: u64,
    pub muls: u64,
    pub divs: u64,
    pub comparisons: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total arithmetic operations (comparisons excluded).
    pub fn arithmetic(&self) -> u64 {
        self.adds + self.subs + self.muls + self.divs
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.adds += n;
    }

    #[inline]
    pub fn sub(&mut self, n: u64) {
        self.subs += n;
    }

    #[inline]
    pub fn mul(&mut self, n: u64) {
        self.muls += n;
    }

    #[inline]
    pub fn div(&mut self, n: u64) {
        self.divs += n;
    }

    #[inline]
    pub fn cmp(&mut self, n: u64) {
        self.comparisons += n;
    }

    pub fn merge(&mut self, other: &OpCounter) {
        self.adds += other.adds;
        self.subs += other.subs;
        self.muls += other.muls;
        self.divs += other.divs;
        self.comparisons += other.comparisons;
    }

    /// Operations recorded in `self` but not in `earlier`.
    pub fn since(&self, earlier: &OpCounter) -> OpCounter {
        OpCounter {
            adds: self.adds - earlier.adds,
            subs: self.subs - earlier.subs,
            muls: self.muls - earlier.muls,
            divs: self.divs - earlier.divs,
            comparisons: self.comparisons - earlier.comparisons,
        }
    }
}
