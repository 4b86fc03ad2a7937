//! Dual-encoder multi-task sentiment model: a small reverse-mode autodiff
//! engine, transformer encoders with learned layer fusion, gated
//! cross-encoder fusion, guided multi-task heads, dynamic loss weighting,
//! the review preprocessing pipeline and the evaluation metrics.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, ParamStore, Var};
pub use data::{DatasetStats, IntegrityReport, LabelScheme, Record, Vocabulary};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, RunManifest};
pub use metrics::MetricsReport;
pub use model::{AblationToggles, DualEncoderModel, ModelConfig, Variant};
pub use tensor::Tensor;
pub use training::{LossWeights, TrainConfig};
