//! Block-structured weight pruning driven by reweighted group Lasso.
//!
//! The crate trains a small single-head transformer classifier, pushes
//! whole row or column segments of its weight matrices toward zero with a
//! reweighted group-Lasso penalty, prunes them, and retrains under a mask.
//! Pruned matrices can be stored in a block-structured sparse format whose
//! index overhead is one `(group, block)` pair per retained segment.
//!
//! | module | contents |
//! |---|---|
//! | [`numerics`] | dense matrices, seeded RNG, finite-difference oracle |
//! | [`model`] | toy transformer, analytic gradients, synthetic task, checkpoints |
//! | [`regularizer`] | block partitions, group norms, reweighted penalty |
//! | [`pruner`] | threshold / percentile block pruning, masks, compression rate |
//! | [`trainer`] | Adam, reweighted training, masked retraining, full pipeline |
//! | [`sparse`] | COO and block-structured storage, storage costs, SpMM |
//! | [`experiments`] | sweeps and per-layer sensitivity scans |
//! | [`config`] | TOML run configuration |
//! | [`cli`] | command implementations behind the `blockprune` binary |

pub mod binio;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod pruner;
pub mod regularizer;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Axis, Matrix, Rng};
