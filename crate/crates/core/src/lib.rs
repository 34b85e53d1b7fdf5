//! Model-agnostic runtime monitoring of distribution shift.
//!
//! The crate compares the feature distribution a model saw during training
//! against the distribution it observes in operation. Per-feature two-sample
//! distances (Kolmogorov-Smirnov, Cramer-von Mises, Anderson-Darling,
//! Wasserstein, DTS, Epps-Singleton) are averaged into a single dissimilarity
//! score, which a calibrated estimator maps to a bounded uncertainty in
//! `[0, 1]`. Supporting machinery selects a trustworthy window size through
//! bootstrapped power analysis and scores accept/reject decisions offline.
//!
//! Modules:
//! - [`distances`]: univariate two-sample statistics and per-feature aggregation.
//! - [`resampling`]: permutation p-values, critical values, power analysis.
//! - [`features`]: feature matrices, CSV ingestion, PCA reduction.
//! - [`estimator`]: calibration sets and fitted distance-to-uncertainty maps.
//! - [`monitor`]: sliding-window runtime engine and confusion scoring.
//! - [`bundle`]: persisted monitor models (PCA + reference + estimators).

pub mod bundle;
pub mod distances;
pub mod error;
pub mod estimator;
pub mod features;
pub mod monitor;
pub mod resampling;

mod fitting;
mod util;

pub use error::{Error, Result};
