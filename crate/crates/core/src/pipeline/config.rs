//! Experiment configuration: one flat TOML document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prepare::{CorpusStats, PrepareOptions};
use crate::data::{SyntheticConfig, Timing};
use crate::decode::DecodeOptions;
use crate::error::{Error, Result};
use crate::model::{Activation, EmbeddingKind, FactorRole, FactorSpec, FeedbackMode, ModelConfig, TrainConfig};
use crate::rng::RngStream;

/// Validation score used to pick the best checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestMetric {
    ExactMatch,
    Bleu,
    Overlap,
    /// Negative teacher-forced loss.
    Loss,
    /// No selection: the final model is kept.
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Alignment file to ingest; a synthetic corpus is generated when absent.
    pub alignment: Option<PathBuf>,
    pub frame_seconds: f64,
    pub pause_threshold_seconds: f64,
    pub noise_sigma: f64,
    pub n_bins: usize,
    pub bpe_merges: usize,
    pub source_tags: bool,
    /// Extra sentences generated (or trailing records taken) for held-out use.
    pub heldout_sentences: usize,
    /// Extra timing realizations of every training sentence, held out.
    pub heldout_variants: usize,
    /// Scale spread between natural and desired held-out durations.
    pub heldout_mismatch: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            alignment: None,
            frame_seconds: 0.01,
            pause_threshold_seconds: 0.3,
            noise_sigma: 0.0,
            n_bins: 100,
            bpe_merges: 100,
            source_tags: true,
            heldout_sentences: 0,
            heldout_variants: 0,
            heldout_mismatch: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub activation: Activation,
    pub main_embedding_dim: usize,
    pub dur_embedding_dim: usize,
    pub total_embedding_dim: usize,
    pub pause_embedding_dim: usize,
    pub segment_embedding_dim: usize,
    pub factor_embedding: EmbeddingKind,
    /// Counters fed to the decoder, any of `total`, `pause`, `segment`.
    pub counters: Vec<FactorRole>,
    /// Whether counters get output heads.
    pub counter_heads: bool,
    pub counter_loss_weight: f64,
    pub counter_feedback: FeedbackMode,
    pub main_loss_weight: f64,
    pub dur_loss_weight: f64,
    pub max_positions: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 128,
            heads: 4,
            d_ff: 256,
            dropout: 0.1,
            label_smoothing: 0.1,
            activation: Activation::Relu,
            main_embedding_dim: 128,
            dur_embedding_dim: 64,
            total_embedding_dim: 64,
            pause_embedding_dim: 32,
            segment_embedding_dim: 64,
            factor_embedding: EmbeddingKind::Learned,
            counters: vec![FactorRole::Total, FactorRole::Pause, FactorRole::Segment],
            counter_heads: true,
            counter_loss_weight: 1.0,
            counter_feedback: FeedbackMode::ExternallyComputed,
            main_loss_weight: 1.0,
            dur_loss_weight: 1.0,
            max_positions: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub best_metric: BestMetric,
    pub validation_split: Split,
    pub translate_split: Split,
    /// Write a checkpoint every this many epochs; 0 keeps only the best.
    pub checkpoint_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            best_metric: BestMetric::ExactMatch,
            validation_split: Split::Train,
            translate_split: Split::Train,
            checkpoint_every: 0,
        }
    }
}

/// Ablation grid; the cartesian product of all non-empty axes is run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub grid_counters: Vec<Vec<FactorRole>>,
    pub grid_source_tags: Vec<bool>,
    pub grid_noise_sigma: Vec<f64>,
    pub grid_feedback: Vec<FeedbackMode>,
    pub grid_factor_embedding_dim: Vec<usize>,
    pub grid_counter_loss_weight: Vec<f64>,
    /// Cells trained concurrently.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub work_dir: PathBuf,
    #[serde(flatten)]
    pub data: DataSection,
    #[serde(flatten)]
    pub synthetic: SyntheticConfig,
    #[serde(flatten)]
    pub model: ModelSection,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub decode: DecodeOptions,
    #[serde(flatten)]
    pub run: RunSection,
    #[serde(flatten)]
    pub grid: GridSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            work_dir: PathBuf::from("work"),
            data: DataSection::default(),
            synthetic: SyntheticConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            decode: DecodeOptions {
                frames_per_token: 0.0,
                ..DecodeOptions::default()
            },
            run: RunSection::default(),
            grid: GridSection::default(),
        }
    }
}

/// Mirror of [`ExperimentConfig`] that collects unrecognized keys.
#[derive(Deserialize)]
struct Loose {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_work_dir")]
    work_dir: PathBuf,
    #[serde(flatten)]
    data: DataSection,
    #[serde(flatten)]
    synthetic: SyntheticConfig,
    #[serde(flatten)]
    model: ModelSection,
    #[serde(flatten)]
    train: TrainConfig,
    #[serde(flatten)]
    decode: DecodeOptions,
    #[serde(flatten)]
    run: RunSection,
    #[serde(flatten)]
    grid: GridSection,
    #[serde(flatten)]
    unknown: BTreeMap<String, toml::Value>,
}

fn default_seed() -> u64 {
    ExperimentConfig::default().seed
}

fn default_work_dir() -> PathBuf {
    ExperimentConfig::default().work_dir
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let l: Loose = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(k) = l.unknown.keys().next() {
            return Err(Error::Config(format!("unknown configuration key {k:?}")));
        }
        let cfg = ExperimentConfig {
            seed: l.seed,
            work_dir: l.work_dir,
            data: l.data,
            synthetic: l.synthetic,
            model: l.model,
            train: l.train,
            decode: l.decode,
            run: l.run,
            grid: l.grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_counters(&self.model.counters)?;
        for c in &self.grid.grid_counters {
            validate_counters(c)?;
        }
        if self.data.frame_seconds <= 0.0 || self.data.pause_threshold_seconds <= 0.0 {
            return Err(Error::Config(
                "frame and pause threshold lengths must be positive".into(),
            ));
        }
        if self.data.noise_sigma < 0.0 || self.grid.grid_noise_sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        Timing {
            frame_seconds: self.data.frame_seconds,
            pause_threshold_seconds: self.data.pause_threshold_seconds,
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            timing: self.timing(),
            noise_sigma: self.data.noise_sigma,
            n_bins: self.data.n_bins,
            bpe_merges: self.data.bpe_merges,
            source_tags: self.data.source_tags,
            heldout_mismatch: self.data.heldout_mismatch,
        }
    }

    pub fn rng(&self, purpose: &str) -> RngStream {
        RngStream::new(self.seed).split_str(purpose)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.rng("train").next_u64(),
            ..self.train.clone()
        }
    }

    pub fn decode_options(&self, stats: &CorpusStats) -> DecodeOptions {
        let mut d = self.decode.clone();
        if d.frames_per_token <= 0.0 {
            d.frames_per_token = stats.frames_per_token;
        }
        d
    }

    /// Model architecture for a prepared corpus.
    pub fn model_config(&self, src_vocab: usize, main_vocab: usize, stats: &CorpusStats) -> Result<ModelConfig> {
        let m = &self.model;
        let mut factors = vec![FactorSpec {
            role: FactorRole::Duration,
            vocab_size: stats.dur_vocab,
            embedding_dim: m.dur_embedding_dim,
            loss_weight: m.dur_loss_weight,
            predicted: true,
            feedback: FeedbackMode::ModelPrediction,
            embedding_kind: m.factor_embedding,
        }];
        for role in [FactorRole::Total, FactorRole::Pause, FactorRole::Segment] {
            if !m.counters.contains(&role) {
                continue;
            }
            let (vocab_size, embedding_dim) = match role {
                FactorRole::Total => (stats.counter_vocab, m.total_embedding_dim),
                FactorRole::Pause => (stats.pause_vocab, m.pause_embedding_dim),
                _ => (stats.counter_vocab, m.segment_embedding_dim),
            };
            factors.push(FactorSpec {
                role,
                vocab_size,
                embedding_dim,
                loss_weight: if m.counter_heads { m.counter_loss_weight } else { 0.0 },
                predicted: m.counter_heads,
                feedback: if m.counter_heads {
                    m.counter_feedback
                } else {
                    FeedbackMode::ExternallyComputed
                },
                embedding_kind: m.factor_embedding,
            });
        }
        let cfg = ModelConfig {
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            d_model: m.d_model,
            heads: m.heads,
            d_ff: m.d_ff,
            dropout: m.dropout,
            label_smoothing: m.label_smoothing,
            activation: m.activation,
            src_vocab,
            main_vocab,
            main_embedding_dim: m.main_embedding_dim,
            main_loss_weight: m.main_loss_weight,
            factors,
            max_positions: m.max_positions,
            init_seed: self.rng("init").next_u64(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Rejects counter sets the segment counter cannot work with: it relies on
/// the pause counter to know when to load the next segment.
pub fn validate_counters(counters: &[FactorRole]) -> Result<()> {
    if counters.contains(&FactorRole::Duration) {
        return Err(Error::Config("`dur` is not a counter".into()));
    }
    if counters.contains(&FactorRole::Segment) && !counters.contains(&FactorRole::Pause) {
        return Err(Error::Config(
            "removing the pause counter while keeping the segment counter is not supported".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn flat_keys() {
        let c =
            ExperimentConfig::from_toml("seed = 3\nd_model = 32\nn_sentences = 12\nepochs = 5\nbeam = 2\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.synthetic.n_sentences, 12);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.decode.beam, 2);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::from_toml("d_modle = 32\n").is_err());
    }

    #[test]
    fn forbidden_counter_set() {
        assert!(ExperimentConfig::from_toml("counters = [\"total\", \"segment\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("grid_counters = [[\"segment\"]]\n").is_err());
        ExperimentConfig::from_toml("counters = [\"total\", \"pause\"]\n").unwrap();
        ExperimentConfig::from_toml("counters = []\n").unwrap();
    }
}
