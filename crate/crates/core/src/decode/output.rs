use serde::{Deserialize, Serialize};

use super::search::Hypothesis;
use crate::data::{rows_to_interleaved, TargetRow, Vocabulary};
use crate::error::Result;

pub const TRANSLATION_FORMAT: &str = "translations";

/// One decoded sentence as written to the translation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub index: usize,
    pub source: String,
    pub desired_segments: Vec<i64>,
    pub rows: Vec<TargetRow>,
    /// Hypothesized segment durations in frames.
    pub segments: Vec<i64>,
    pub pauses: usize,
    /// Factor values fed to the decoder at every step.
    pub counter_trace: Vec<Vec<i64>>,
    pub finished: bool,
    pub pause_overflows: usize,
    pub log_prob: f64,
    /// Target words recovered from the phoneme stream.
    pub text: String,
}

impl TranslationRecord {
    pub fn from_hypothesis(
        index: usize,
        source: &str,
        desired_segments: &[i64],
        hyp: &Hypothesis,
        vocab: &Vocabulary,
        text: String,
    ) -> Result<Self> {
        let rows = hyp
            .rows
            .iter()
            .map(|&(tok, dur)| Ok(TargetRow::new(vocab.token(tok)?, dur)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TranslationRecord {
            index,
            source: source.to_string(),
            desired_segments: desired_segments.to_vec(),
            rows,
            segments: hyp.segments(),
            pauses: hyp.num_pauses(),
            counter_trace: hyp.trace.clone(),
            finished: hyp.finished,
            pause_overflows: hyp.pause_overflows,
            log_prob: hyp.log_prob,
            text,
        })
    }

    /// Interleaved rendering: `D 2 OW1 5 <eow> ...`.
    pub fn interleaved(&self) -> String {
        rows_to_interleaved(&self.rows).join(" ")
    }

    pub fn phonemes(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.token.as_str()).collect()
    }
}
