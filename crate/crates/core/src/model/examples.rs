//! Conversion of factored examples into decoder inputs and head targets.
//!
//! Decoder position `t` reads row `t` of the example (row 0 is the NULL
//! column) and is trained to predict row `t + 1`; the last position predicts
//! end-of-sequence with duration 0 and unchanged counters.

use super::config::{FactorRole, ModelConfig};
use super::transformer::{DecoderRow, HeadTargets};
use crate::data::{FactoredExample, EOS_ID};
use crate::error::{Error, Result};

pub fn factor_stream(ex: &FactoredExample, role: FactorRole) -> &[i64] {
    match role {
        FactorRole::Duration => &ex.dur,
        FactorRole::Total => &ex.total,
        FactorRole::Pause => &ex.pause,
        FactorRole::Segment => &ex.segment,
    }
}

/// Decoder inputs for teacher forcing, one per example row.
pub fn decoder_rows(ex: &FactoredExample, config: &ModelConfig) -> Vec<DecoderRow> {
    (0..ex.len())
        .map(|t| DecoderRow {
            main: ex.main[t],
            factors: config
                .factors
                .iter()
                .map(|f| f.clamp(factor_stream(ex, f.role)[t]))
                .collect(),
        })
        .collect()
}

pub fn head_targets(ex: &FactoredExample, config: &ModelConfig) -> HeadTargets {
    let n = ex.len();
    let mut main: Vec<Option<usize>> = ex.main[1..].iter().map(|&m| Some(m)).collect();
    main.push(Some(EOS_ID));
    let factors = config
        .factors
        .iter()
        .map(|f| {
            let s = factor_stream(ex, f.role);
            (1..=n)
                .map(|t| {
                    let v = match (t < n, f.role) {
                        (true, _) => s[t],
                        (false, FactorRole::Duration) => 0,
                        (false, _) => s[n - 1],
                    };
                    Some(f.clamp(v))
                })
                .collect()
        })
        .collect();
    HeadTargets { main, factors }
}

/// One teacher-forced training instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub source: Vec<usize>,
    pub rows: Vec<DecoderRow>,
    pub targets: HeadTargets,
}

impl TrainingPair {
    pub fn new(ex: &FactoredExample, config: &ModelConfig) -> Result<Self> {
        ex.validate()?;
        if ex.source.is_empty() {
            return Err(Error::Validation("example with empty source".into()));
        }
        Ok(TrainingPair {
            source: ex.source.clone(),
            rows: decoder_rows(ex, config),
            targets: head_targets(ex, config),
        })
    }

    /// Number of target tokens contributing to the loss.
    pub fn num_tokens(&self) -> usize {
        self.targets.main.len()
    }
}
