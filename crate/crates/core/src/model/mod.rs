//! Factored transformer: encoder-decoder with a main head, per-factor heads
//! and concatenated factor embeddings on the decoder input.

mod config;
mod examples;
mod train;
mod transformer;

pub use config::{Activation, EmbeddingKind, FactorRole, FactorSpec, FeedbackMode, ModelConfig};
pub use examples::{decoder_rows, factor_stream, head_targets, TrainingPair};
pub use train::{evaluate_loss, train, EpochStats, TrainConfig, TrainOutcome};
pub use transformer::{DecoderRow, HeadLogits, HeadTargets, Model, StepScores};
