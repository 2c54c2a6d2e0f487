//! Contribution measurement for federated machine learning.
//!
//! Horizontal federations (parties hold disjoint instance sets) are scored by
//! deletion diagnostics: retrain without a party's rows and measure how far the
//! predictions move. Vertical federations (parties hold disjoint feature
//! blocks) are scored by group Shapley values, computed through a simulated
//! protocol in which the evaluator only ever sees opaque instance tokens and
//! scalar predictions.
//!
//! Module map:
//!
//! - [`data`]: CSV ingestion, imputation, min-max normalization, partitions.
//! - [`model`]: the black-box classifiers (logistic, RBF kernel) and the
//!   linear oracle used for analytic checks.
//! - [`horizontal`]: single, summed and batch deletion influence.
//! - [`shapley`]: exact and Monte-Carlo Shapley values, group sums and the
//!   group interaction index.
//! - [`federation`]: parties, prediction host, evaluator and privacy audit.

pub mod data;
pub mod error;
pub mod federation;
pub mod horizontal;
pub mod model;
pub mod seed;
pub mod shapley;
pub mod synthetic;

pub use error::{ErrorClass, FedError, Result};
