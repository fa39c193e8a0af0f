//! Penalized Parafac decomposition of 3-way tensors.
//!
//! Fits rank-one and multi-factor Parafac models whose factors are shrunk
//! toward structure by generalized-lasso penalties (plain L1, fused lasso,
//! polynomial trend filtering, graph fused lasso). Two formulations are
//! provided: a constrained form solved through the dual solution path of
//! the generalized lasso, and a penalized form solved through fast proximal
//! operators. The crate also ships the slice-stacking and robust-power
//! baselines, two cross-validation schemes, and a simulation/benchmark
//! harness; see the `examples/` directory for end-to-end usage.

pub mod banded;
pub mod bench;
pub mod cli;
pub mod decompose;
pub mod error;
pub mod genlasso;
pub mod model_select;
pub mod penalty;
pub mod tensor;
pub mod vecmath;

pub use error::{Error, Result};
