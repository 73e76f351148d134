//! Nonlinear power system state estimation with a factor-graph GNN.
//!
//! The crate covers the full pipeline: grid model and case parsing,
//! measurement functions, Newton–Raphson power flow, Gauss–Newton WLS
//! estimation, augmented factor graphs, the attention-based GNN with
//! reverse-mode gradients and Adam, dataset generation with exclusion and
//! attack scenarios, and training/evaluation utilities.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod factor_graph;
pub mod gnn;
pub mod grid;
pub mod linalg;
pub mod matpower;
pub mod measurement;
pub mod powerflow;
pub mod train;

pub use error::{Error, Result};
