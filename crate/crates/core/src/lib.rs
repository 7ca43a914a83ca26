//! Pool-based active learning for multi-label classification.
//!
//! The pipeline pre-trains an MLP encoder with BYOL on the unlabeled pool,
//! then fine-tunes a sigmoid classifier on a labeled set that grows each
//! iteration. New samples are chosen by the magnitude of their approximated
//! last-layer gradient (computed under the model's own thresholded
//! predictions), with k-means++ clustering of the most uncertain candidates to
//! keep each batch diverse.
//!
//! Modules:
//! - [`dataset`]: synthetic and CSV archives, splits, minority-class removal scenarios
//! - [`model`]: the classifier, BCE training and the last-layer gradient
//! - [`ssl`]: BYOL pre-training and encoder transfer
//! - [`cluster`]: k-means++ seeding and Lloyd iterations
//! - [`query`]: random, MGE and MGE+clustering selection
//! - [`engine`]: the budgeted labeling loop
//! - [`metrics`]: micro/macro F1 and curve aggregation
//! - [`experiment`]: configuration documents, scenario sweeps and strategy comparison

pub mod cluster;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod query;
pub mod rng;
pub mod ssl;

pub use dataset::{
    Archive, MultiLabelVector, Sample, ScenarioSpec, SplitFractions, Splits, SyntheticConfig,
};
pub use engine::{ALConfig, IterationRecord, RunHistory};
pub use error::{Error, Result};
pub use metrics::{CurveSummary, Evaluation};
pub use model::{Checkpoint, GradientEmbedding, ModelParams, TrainConfig};
pub use query::{QuerySelection, Strategy};
pub use ssl::ByolConfig;
