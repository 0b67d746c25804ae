//! Stochastic proximal methods for inf-projection problems
//!
//! `min_x F(x) = g(x) + min_{y ∈ Y} [h(y) - y ℓ(x)]`
//!
//! with the variance-regularized classification instance, the staged
//! St-SPG and MSPG solvers, BMD and SGD baselines, and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod loss;
pub mod mspg;
pub mod par;
pub mod problem;
pub mod rng;
pub mod sparse;
pub mod spg;
pub mod stspg;
pub mod synthetic;
pub mod trace;

pub use data::Dataset;
pub use error::{Error, Result};
pub use problem::{Batch, DomainY, InfProjection, VarianceRegProblem};
pub use sparse::{SparseRow, SparseVec};
