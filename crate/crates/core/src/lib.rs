//! Patent classification over a code taxonomy: a BiLSTM text encoder,
//! taxonomy correlation learning, assignee history graphs and a
//! label-attention decoder, with training, evaluation and a synthetic
//! corpus generator.

pub mod config;
pub mod corpus;
mod error;
pub mod history;
pub mod icl;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod persist;
pub mod predictor;
pub mod synth;
pub mod taxonomy;
pub mod text;
pub mod train;

pub use config::{LossReduction, ModelConfig};
pub use corpus::{CorpusSplit, HistoryScope, Part, PatentRecord, Vocabulary};
pub use error::{Error, Result};
pub use icl::IclMode;
pub use metrics::{Metric, MetricTable, RankedPrediction};
pub use model::{Example, Model};
pub use synth::{generate_synthetic, SynthSpec};
pub use taxonomy::{CodeRef, Taxonomy};
pub use train::{train, TrainOptions, TrainReport, Trained};
