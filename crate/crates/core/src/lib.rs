//! Adaptive debiased machine learning (ADML) for the average treatment effect.
//!
//! The crate fits Lasso-selected working models over an additive hinge basis
//! and turns them into debiased ATE estimators with influence-function based
//! inference:
//!
//! * [`basis`]: hinge dictionaries and design matrices,
//! * [`lasso`]: coordinate descent, cross-validation and relaxed refits,
//! * [`nuisance`]: propensity score with adaptive truncation, outcome regression,
//!   R-learner CATE fit,
//! * [`estimators`]: plug-in and partially linear ADMLEs, the intercept-model
//!   and AIPW baselines, Riesz representers and confidence intervals,
//! * [`projections`]: population-level oracles under a known data-generating process,
//! * [`simulation`]: the benchmark data-generating processes and a seeded Monte
//!   Carlo harness.

pub mod basis;
pub mod data;
pub mod error;
pub mod estimators;
pub mod lasso;
pub mod linalg;
pub mod nuisance;
pub mod projections;
pub mod seed;
pub mod simulation;

pub use data::Dataset;
pub use error::{Error, Result};
