//! Discrimination and calibration metrics and the nested cross-validation
//! harness.

pub mod cv;
pub mod metrics;

pub use cv::{nested_cv, nested_cv_prepared, prepare_folds, tune_and_fit, Augmentor, CvConfig, FoldMetrics, FoldObserver, Metrics, Stage, Tuned, TuneBudget};
pub use metrics::{auc, ici};
