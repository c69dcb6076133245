//! Post-hoc OOD detection from pre-pooling activation maps.
//!
//! The crate reads activation and feature dumps ([`tensorio`]), reduces maps
//! to channel statistics ([`stats`]), reshapes features ([`shaping`]), turns
//! logits into scores ([`scoring`]), evaluates detection ([`metrics`]), checks
//! the separation-gap argument on data ([`analysis`]) and ties everything
//! together in suite runs and sweeps ([`pipeline`]).

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod shaping;
pub mod stats;
pub mod tensorio;

pub use error::{Error, Result};
pub use metrics::{EvalResult, MacroAverage, SuiteEvaluation};
pub use pipeline::{RunConfig, RunReport, ScoreMethod, SelectionMetric, Suite, SweepConfig};
pub use scoring::{ClassifierHead, LogitBatch, ScoreKind, ScoreSet};
pub use shaping::{FittedPipeline, PercentileRule, ShapingConfig};
pub use stats::ChannelStats;
pub use tensorio::{ActivationBatch, DatasetManifest, FeatureBatch, StatKind, TensorFile};
