//! Labelings and the priority rules keyed to them.
//!
//! A labeling assigns each state (across all bandits) a distinct label in
//! `1..=|N|`; termination implicitly carries the highest label. The priority
//! rule keyed to a labeling plays, at every multi-state, the bandit whose
//! current state has the lowest label — so a labeling is a complete policy
//! description in `|N|` integers.

use crate::model::{Instance, MultiState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("labeling must assign labels 1..={n} bijectively; label {label} at state {state} is out of range or repeated")]
    NotBijective {
        n: usize,
        state: usize,
        label: usize,
    },
    #[error("labeling covers {got} states but the instance has {expected}")]
    WrongSize { expected: usize, got: usize },
}

/// A bijection from global state ids onto labels `1..=n`.
///
/// Serializes as the bare label array (`label_of[global] = label`);
/// deserialization re-validates bijectivity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    label_of: Vec<usize>,
    state_of: Vec<usize>,
}

impl serde::Serialize for Labeling {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.label_of.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Labeling {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label_of = Vec::<usize>::deserialize(deserializer)?;
        Labeling::new(label_of).map_err(serde::de::Error::custom)
    }
}

impl Labeling {
    /// Build from `label_of[global] = label`, checking bijectivity.
    pub fn new(label_of: Vec<usize>) -> Result<Self, LabelingError> {
        let n = label_of.len();
        let mut state_of = vec![usize::MAX; n];
        for (state, &label) in label_of.iter().enumerate() {
            if label < 1 || label > n || state_of[label - 1] != usize::MAX {
                return Err(LabelingError::NotBijective { n, state, label });
            }
            state_of[label - 1] = state;
        }
        Ok(Labeling { label_of, state_of })
    }

    /// Build from `order[pos] = global id of the state with label pos+1`.
    pub fn from_order(order: &[usize]) -> Result<Self, LabelingError> {
        let n = order.len();
        let mut label_of = vec![0usize; n];
        for (pos, &state) in order.iter().enumerate() {
            if state >= n || label_of[state] != 0 {
                return Err(LabelingError::NotBijective {
                    n,
                    state,
                    label: pos + 1,
                });
            }
            label_of[state] = pos + 1;
        }
        Labeling::new(label_of)
    }

    pub fn identity(n: usize) -> Self {
        Labeling {
            label_of: (1..=n).collect(),
            state_of: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.label_of.len()
    }

    /// Label of a global state id, in `1..=n`.
    pub fn label(&self, global: usize) -> usize {
        self.label_of[global]
    }

    /// Global id of the state carrying `label`.
    pub fn state_with_label(&self, label: usize) -> usize {
        self.state_of[label - 1]
    }

    pub fn labels(&self) -> &[usize] {
        &self.label_of
    }

    /// Local state ids of bandit `k`, ordered by increasing label. This is
    /// the finalization order the triangularizer must follow for `k`.
    pub fn bandit_order(&self, instance: &Instance, k: usize) -> Vec<usize> {
        let off = instance.offset(k);
        let n_k = instance.chain(k).n_states();
        let mut locals: Vec<usize> = (0..n_k).collect();
        locals.sort_by_key(|&i| self.label_of[off + i]);
        locals
    }

    pub fn check_size(&self, instance: &Instance) -> Result<(), LabelingError> {
        if self.n() != instance.n_states() {
            return Err(LabelingError::WrongSize {
                expected: instance.n_states(),
                got: self.n(),
            });
        }
        Ok(())
    }
}

/// The deterministic policy keyed to a labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityRule {
    pub labeling: Labeling,
}

impl PriorityRule {
    pub fn new(labeling: Labeling) -> Self {
        PriorityRule { labeling }
    }

    /// The bandit to play at `s`: the one whose current state has the lowest
    /// label. Labels are distinct, so there are no ties.
    pub fn play(&self, instance: &Instance, s: &MultiState) -> usize {
        (0..instance.n_bandits())
            .min_by_key(|&k| self.labeling.label(instance.global_id(k, s.0[k])))
            .expect("instance has at least one bandit")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BanditChain, Hypothesis};

    fn two_bandit_instance() -> Instance {
        let c1 = BanditChain::new(vec![0.0, 0.0], vec![vec![0.0; 2]; 2]).unwrap();
        let c2 = BanditChain::new(vec![0.0], vec![vec![0.0]]).unwrap();
        Instance::new(vec![c1, c2], Hypothesis::RN).unwrap()
    }

    #[test]
    fn rejects_repeated_labels() {
        assert!(Labeling::new(vec![1, 1, 2]).is_err());
        assert!(Labeling::new(vec![0, 1, 2]).is_err());
        assert!(Labeling::new(vec![1, 2, 4]).is_err());
    }

    #[test]
    fn order_and_label_forms_agree() {
        let by_labels = Labeling::new(vec![2, 3, 1]).unwrap();
        let by_order = Labeling::from_order(&[2, 0, 1]).unwrap();
        assert_eq!(by_labels, by_order);
        assert_eq!(by_labels.state_with_label(1), 2);
        assert_eq!(by_labels.label(0), 2);
    }

    #[test]
    fn bandit_order_sorts_by_label() {
        let inst = two_bandit_instance();
        // globals: bandit 0 has {0, 1}, bandit 1 has {2}
        let labeling = Labeling::new(vec![3, 1, 2]).unwrap();
        assert_eq!(labeling.bandit_order(&inst, 0), vec![1, 0]);
        assert_eq!(labeling.bandit_order(&inst, 1), vec![0]);
    }

    #[test]
    fn priority_rule_plays_lowest_label() {
        let inst = two_bandit_instance();
        let rule = PriorityRule::new(Labeling::new(vec![3, 1, 2]).unwrap());
        assert_eq!(rule.play(&inst, &MultiState(vec![0, 0])), 1); // labels 3 vs 2
        assert_eq!(rule.play(&inst, &MultiState(vec![1, 0])), 0); // labels 1 vs 2
    }
}
