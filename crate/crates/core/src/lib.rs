//! Feature-statistics uncertainty modeling (DSU) and inference-time
//! statistic calibration (DSU++) for domain generalization.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: a small dense tensor with a gradient tape.
//! - [`stats`]: per-instance channel statistics and their batch spread.
//! - [`dsu`]: the training-time layer that resamples statistics.
//! - [`adaptation`]: shift regions fitted on training features and the
//!   inference-time calibration that pulls outlying statistics back.
//! - [`theory`]: Gaussian Wasserstein distances, sliced W1, and the
//!   implicit-regularization closed form with its Monte-Carlo check.
//! - [`synth`]: multi-domain synthetic data with per-channel style shifts.
//! - [`harness`]: a toy trainer/evaluator for leave-one-domain-out runs,
//!   ablations, and the statistic/distance reports.
//!
//! Runnable walkthroughs live in `examples/`; the `dsu` binary wraps the
//! harness for command-line use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod autodiff;
pub mod commands;
pub mod dsu;
pub mod error;
pub mod harness;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod theory;
pub mod tnsr;

pub use error::{Error, Result};
pub use tensor::Tensor;
