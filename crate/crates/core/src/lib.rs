//! Virtual control arm pipeline: cohort handling, imputation, learners,
//! tuning, evaluation, synthetic data augmentation and effect estimation.

// `!(x > 0.0)` is used on purpose: NaN has to fail those checks too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod cohort;
pub mod effect;
pub mod error;
pub mod eval;
pub mod impute;
pub mod learners;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod simlab;
pub mod stats;
pub mod syngen;
pub mod tune;

pub use error::{Error, Result};
