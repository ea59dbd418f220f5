//! Tabular-MDP regularization toolkit built around one identity: discount
//! regularization, Dirichlet-prior smoothing, and epsilon-greedy planning
//! all act by replacing the estimated transition matrix with a weighted
//! average `(1 - eps) * T_mle + eps * T_reg`. The crate provides exact
//! planning, the estimators, the regularizers and their MSE-optimal
//! state-action-specific weights, the paper-style tabular environments, a
//! seeded sweep harness with CSV/JSON export, and a regularized Q-learner.

pub mod config;
pub mod environments;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod mdp;
pub mod model_free;
pub mod regularizers;

pub use error::{Error, Result};
pub use mdp::{
    compare_policies, evaluate_policy, greedy_policy, value_iteration, Mdp, Policy,
    PolicyComparison, QFunction, ValueFunction, ValueIterationResult,
};
