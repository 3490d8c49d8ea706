//! Toy-scale training and evaluation on synthetic multi-domain data.
//!
//! A [`Model`] is a small classifier whose layer boundaries are numbered
//! insertion positions. [`train`] runs minibatch SGD with the uncertainty
//! layer active at the configured positions, then fits a shift region at
//! every position. [`evaluate`] scores a dataset with or without
//! inference-time calibration. [`run_lodo`] and the ablation drivers combine
//! both over seeds.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod report;
pub mod train;

pub use ablation::Study;
pub use checkpoint::Checkpoint;
pub use config::{AdaptationConfig, Config, ReportConfig, TrainConfig};
pub use eval::{evaluate, features, fit_regions, infer, Calibration, Evaluation};
pub use experiment::{run_lodo, run_seed, sign_test, stats_report, LodoSummary, PositionStats, SeedResult, Variant};
pub use model::{Activation, Model, ModelSpec};
pub use report::{Report, Table};
pub use train::{train, EpochRecord, Trained};
