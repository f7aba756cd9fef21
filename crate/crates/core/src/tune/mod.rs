//! Hyperparameter search: spaces, the inner cross-validation objective and
//! Gaussian-process Bayesian optimization.

pub mod bayes;
pub mod objective;
pub mod space;

pub use bayes::{bayes_opt, Candidate, Evaluation, TuneResult};
pub use objective::{inner_cv_objective, InnerCvObjective};
pub use space::{HyperParam, HyperSpace, Transform};
