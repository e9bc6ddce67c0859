//! Solvers for the multi-armed bandit under linear and exponential
//! utilities.
//!
//! A problem instance is a set of finite Markov chains with rewards
//! (bandits); at each epoch one chain is played and evolves, the others
//! hold still, and play can terminate everything. Attention can be
//! restricted to *priority rules*: policies keyed to a labeling of all
//! states that always play the bandit whose current state has the lowest
//! label.
//!
//! The crate provides:
//!
//! - [`model`]: instance construction from raw probabilities/payoffs for
//!   linear, risk-averse, and risk-seeking utilities, plus validation
//!   (transience and the per-hypothesis conditions).
//! - [`tableau`]: finalization of a bandit's data by elementary row
//!   operations, with exact operation counts.
//! - [`evaluate`]: exact expected utility of a priority rule from a start
//!   multi-state (or product-form initial distribution) without ever
//!   forming the joint state space.
//! - [`preference`]: the category/ratio machinery that makes pairwise
//!   state comparison a total preorder.
//! - [`optimize`]: construction of an optimal labeling by interleaving
//!   preference selection with row operations.
//! - [`constrained`]: reward-constrained bandits solved by simplex with
//!   column generation, pricing via the optimizer.
//! - [`oracle`]: brute-force ground truth on the explicit product space,
//!   used to verify everything else at desk scale.
//! - [`gen`]: seeded random instance generation for fixtures and tests.

pub mod constrained;
pub mod counter;
pub mod evaluate;
pub mod format;
pub mod gen;
pub mod labeling;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod preference;
pub mod tableau;

pub use counter::OpCounter;
pub use labeling::{Labeling, LabelingError, PriorityRule};
pub use model::{
    build_chain, is_transient, validate, BanditChain, Hypothesis, Instance, ModelError, MultiState,
    RawBandit, UtilitySpec, ValidationReport,
};
pub use tableau::{hypothesis_preserved, triangularize, Tableau, TableauError};
