//! Capacity-aware reciprocal recommendation for two-sided markets.
//!
//! Unilateral preference scores are learned with matrix factorization, then
//! either fused into a reciprocal score (the classical baselines) or fed to a
//! transferable-utility matching model whose equilibrium is found by
//! iterative proportional fitting. The equilibrium match probabilities rank
//! candidates while accounting for how much of each user's attention is
//! already claimed.
//!
//! Module map:
//!
//! - [`market`]: users, feedback ingestion, score and matching containers.
//! - [`mf`]: logistic matrix factorization producing scores in `[0, 1]`.
//! - [`fusion`]: baseline aggregation of two directional scores.
//! - [`equilibrium`]: exact IPFP solver, transfers, residuals.
//! - [`lsh`] and [`approx`]: sub-quadratic IPFP for large markets.
//! - [`oracle`]: independent tâtonnement solver and equilibrium checker.
//! - [`simgen`]: seeded synthetic markets with popularity skew.
//! - [`recommend`], [`bench`], [`pipeline`]: ranking, exposure metrics,
//!   timing harness and end-to-end driver.

// NaN must fail these range checks, so they are written as negations.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod bench;
pub mod container;
pub mod equilibrium;
pub mod error;
pub mod fusion;
pub mod lsh;
pub mod market;
pub mod matrix;
pub mod metrics;
pub mod mf;
pub mod oracle;
pub mod pipeline;
pub mod recommend;
pub mod simgen;
mod rng;
mod sweep;

pub use error::{Error, Result};
pub use matrix::Matrix;
