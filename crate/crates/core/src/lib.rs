//! Uncertainty-aware clustering of behavioural credit-account time series.
//!
//! Each account's monthly (repayment, utilisation) pair is summarised by a
//! bivariate VAR(1) fit. Accounts are compared through the overlap of the
//! confidence ellipsoids of their coefficient vectors (or, as a baseline,
//! the Euclidean distance between coefficient vectors), partitioned with
//! k-medoids, and the cluster labels feed logistic default models that are
//! scored with AUC, Gini, KS and the H-measure.

// NaN-rejecting checks are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod data;
pub mod dissimilarity;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod seed;
pub mod var_model;

pub use error::{Error, Result};
