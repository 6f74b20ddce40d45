use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which target stream a factor carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRole {
    Duration,
    Total,
    Pause,
    Segment,
}

impl FactorRole {
    pub fn name(self) -> &'static str {
        match self {
            FactorRole::Duration => "dur",
            FactorRole::Total => "total",
            FactorRole::Pause => "pause",
            FactorRole::Segment => "segment",
        }
    }

    pub fn is_counter(self) -> bool {
        self != FactorRole::Duration
    }
}

/// Where the value fed to the next decoder step comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// The argmax of this factor's own output head.
    ModelPrediction,
    /// The counter state machine driven by the emitted durations.
    ExternallyComputed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Learned,
    /// Fixed sine/cosine encoding of the integer value.
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub role: FactorRole,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub loss_weight: f64,
    /// Whether an output head exists for this factor.
    pub predicted: bool,
    pub feedback: FeedbackMode,
    pub embedding_kind: EmbeddingKind,
}

impl FactorSpec {
    pub fn name(&self) -> &'static str {
        self.role.name()
    }

    /// Maps a raw stream value to a valid embedding id.
    pub fn clamp(&self, value: i64) -> usize {
        value.clamp(0, self.vocab_size as i64 - 1) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub activation: Activation,
    pub src_vocab: usize,
    pub main_vocab: usize,
    pub main_embedding_dim: usize,
    pub main_loss_weight: f64,
    /// Ordered duration and counter factors; empty for a plain seq2seq model.
    pub factors: Vec<FactorSpec>,
    pub max_positions: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Small configuration with the duration factor and all three counters.
    /// Counter heads are absent (zero loss weight).
    pub fn desk(
        src_vocab: usize,
        main_vocab: usize,
        dur_vocab: usize,
        counter_vocab: usize,
        pause_vocab: usize,
    ) -> Self {
        let factor = |role, vocab_size, dim, predicted: bool| FactorSpec {
            role,
            vocab_size,
            embedding_dim: dim,
            loss_weight: if predicted { 1.0 } else { 0.0 },
            predicted,
            feedback: if role == FactorRole::Duration {
                FeedbackMode::ModelPrediction
            } else {
                FeedbackMode::ExternallyComputed
            },
            embedding_kind: EmbeddingKind::Learned,
        };
        ModelConfig {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 128,
            heads: 4,
            d_ff: 256,
            dropout: 0.1,
            label_smoothing: 0.1,
            activation: Activation::Relu,
            src_vocab,
            main_vocab,
            main_embedding_dim: 128,
            main_loss_weight: 1.0,
            factors: vec![
                factor(FactorRole::Duration, dur_vocab, 64, true),
                factor(FactorRole::Total, counter_vocab, 64, false),
                factor(FactorRole::Pause, pause_vocab, 32, false),
                factor(FactorRole::Segment, counter_vocab, 64, false),
            ],
            max_positions: 256,
            init_seed: 1,
        }
    }

    /// Width of the concatenated decoder input before projection.
    pub fn decoder_concat_width(&self) -> usize {
        self.main_embedding_dim + self.factors.iter().map(|f| f.embedding_dim).sum::<usize>()
    }

    pub fn factor(&self, role: FactorRole) -> Option<&FactorSpec> {
        self.factors.iter().find(|f| f.role == role)
    }

    pub fn factor_index(&self, role: FactorRole) -> Option<usize> {
        self.factors.iter().position(|f| f.role == role)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return err(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.src_vocab == 0 || self.main_vocab == 0 || self.main_embedding_dim == 0 {
            return err("empty vocabulary or embedding".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return err("dropout and label smoothing must lie in [0, 1)".into());
        }
        if self.main_loss_weight < 0.0 || !self.main_loss_weight.is_finite() {
            return err("main loss weight must be non-negative".into());
        }
        let mut seen = Vec::new();
        for f in &self.factors {
            if seen.contains(&f.role) {
                return err(format!("factor {} listed twice", f.name()));
            }
            seen.push(f.role);
            if f.loss_weight < 0.0 || !f.loss_weight.is_finite() {
                return err(format!("factor {} has negative loss weight", f.name()));
            }
            if f.vocab_size == 0 || f.embedding_dim == 0 {
                return err(format!("factor {} has empty vocabulary or embedding", f.name()));
            }
            if f.embedding_kind == EmbeddingKind::Sinusoidal && f.embedding_dim % 2 != 0 {
                return err(format!("sinusoidal factor {} needs an even width", f.name()));
            }
            if f.feedback == FeedbackMode::ModelPrediction && !f.predicted {
                return err(format!(
                    "factor {} is fed back from a head that does not exist",
                    f.name()
                ));
            }
            if f.feedback == FeedbackMode::ExternallyComputed && !f.role.is_counter() {
                return err("durations cannot be externally computed".into());
            }
        }
        if self.factor(FactorRole::Segment).is_some() && self.factor(FactorRole::Pause).is_none() {
            return err("the segment counter needs the pause counter to fetch segment durations".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_concat_width() {
        let c = ModelConfig::desk(50, 40, 20, 200, 5);
        assert_eq!(c.decoder_concat_width(), 128 + 64 + 64 + 32 + 64);
        assert_eq!(c.decoder_concat_width(), 352);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk(50, 40, 20, 200, 5);
        c.factors[1].loss_weight = -1.0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk(50, 40, 20, 200, 5);
        c.factors.retain(|f| f.role != FactorRole::Pause);
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk(50, 40, 20, 200, 5);
        c.factors[1].feedback = FeedbackMode::ModelPrediction;
        assert!(c.validate().is_err());
        c.factors[1].predicted = true;
        c.validate().unwrap();
    }

    #[test]
    fn clamp_maps_into_vocab() {
        let c = ModelConfig::desk(50, 40, 20, 200, 5);
        let total = c.factor(FactorRole::Total).unwrap();
        assert_eq!(total.clamp(-4), 0);
        assert_eq!(total.clamp(17), 17);
        assert_eq!(total.clamp(900), 199);
    }
}
