use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{corpus_bleu, overlap_summary, wrong_pause_count, SegmentTiming};
use crate::data::read_records;
use crate::decode::{TranslationRecord, TRANSLATION_FORMAT};
use crate::error::{Error, Result};

pub const REFERENCE_FORMAT: &str = "references";

/// Reference side of one test sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub index: usize,
    pub source: String,
    /// Target words.
    pub text: String,
    /// Reference segment durations in frames.
    pub segments: Vec<i64>,
    pub phonemes: Vec<String>,
}

impl ReferenceRecord {
    pub fn pauses(&self) -> usize {
        self.segments.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceDiagnostics {
    pub index: usize,
    pub overlap: Option<f64>,
    pub reference_pauses: usize,
    pub hypothesis_pauses: usize,
    pub exact_match: bool,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub bleu: f64,
    pub speech_overlap: f64,
    /// Overlap with each segment score clamped to `[0, 1]`.
    pub speech_overlap_clamped: f64,
    /// Mean of per-sentence overlaps.
    pub speech_overlap_per_sentence: f64,
    pub wrong_pause_count: usize,
    /// Fraction of sentences whose target words match the reference exactly.
    pub exact_match: f64,
    pub paired_segments: usize,
    pub unpaired_segments: usize,
    pub unfinished: usize,
    pub diagnostics: Vec<SentenceDiagnostics>,
}

pub fn evaluate_records(hyps: &[TranslationRecord], refs: &[ReferenceRecord]) -> Result<EvalReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Validation(format!(
            "{} translations for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if let Some((i, _)) = hyps.iter().zip(refs).enumerate().find(|(_, (h, r))| h.index != r.index) {
        return Err(Error::Validation(format!(
            "record {i}: translation and reference indices differ"
        )));
    }
    let hyp_text: Vec<&str> = hyps.iter().map(|h| h.text.as_str()).collect();
    let ref_text: Vec<&str> = refs.iter().map(|r| r.text.as_str()).collect();
    let bleu = corpus_bleu(&hyp_text, &ref_text)?;
    let timing = SegmentTiming {
        reference: refs.iter().map(|r| r.segments.clone()).collect(),
        hypothesis: hyps.iter().map(|h| h.segments.clone()).collect(),
    };
    let overlap = overlap_summary(&timing)?;
    let ref_pauses: Vec<usize> = refs.iter().map(ReferenceRecord::pauses).collect();
    let hyp_pauses: Vec<usize> = hyps.iter().map(|h| h.pauses).collect();
    let wrong = wrong_pause_count(&ref_pauses, &hyp_pauses)?;
    let diagnostics: Vec<SentenceDiagnostics> = hyps
        .iter()
        .zip(refs)
        .zip(&overlap.sentences)
        .map(|((h, r), o)| SentenceDiagnostics {
            index: r.index,
            overlap: *o,
            reference_pauses: r.pauses(),
            hypothesis_pauses: h.pauses,
            exact_match: h.text == r.text,
            finished: h.finished,
        })
        .collect();
    let exact = diagnostics.iter().filter(|d| d.exact_match).count() as f64 / refs.len() as f64;
    Ok(EvalReport {
        sentences: refs.len(),
        bleu,
        speech_overlap: overlap.overlap,
        speech_overlap_clamped: overlap.clamped,
        speech_overlap_per_sentence: overlap.per_sentence,
        wrong_pause_count: wrong,
        exact_match: exact,
        paired_segments: overlap.paired_segments,
        unpaired_segments: overlap.unpaired_segments,
        unfinished: hyps.iter().filter(|h| !h.finished).count(),
        diagnostics,
    })
}

fn open_records<T: serde::de::DeserializeOwned>(p: &Path, fmt: &str) -> Result<Vec<T>> {
    let f = File::open(p).map_err(|e| Error::from(e).context(p.display().to_string()))?;
    read_records(BufReader::new(f), fmt).map_err(|e| e.context(p.display().to_string()))
}

/// Scores a translation file against a reference file.
pub fn evaluate_run(translations: &Path, references: &Path) -> Result<EvalReport> {
    let hyps: Vec<TranslationRecord> = open_records(translations, TRANSLATION_FORMAT)?;
    let refs: Vec<ReferenceRecord> = open_records(references, REFERENCE_FORMAT)?;
    evaluate_records(&hyps, &refs)
}

impl EvalReport {
    /// Report without per-sentence diagnostics, as one JSON line.
    pub fn summary_json(&self) -> Result<String> {
        let mut s = self.clone();
        s.diagnostics.clear();
        Ok(serde_json::to_string(&s)?)
    }
}

/// Aligned plain-text table with one row per labeled report.
pub fn render_table<W: Write>(mut w: W, label_header: &str, rows: &[(String, &EvalReport)]) -> Result<()> {
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([label_header.len()])
        .max()
        .unwrap_or(0);
    writeln!(
        w,
        "{:<width$}  {:>7}  {:>8}  {:>10}  {:>4}  {:>6}",
        label_header, "BLEU", "Overlap", "Overlap01", "W.P.", "Exact"
    )?;
    for (label, r) in rows {
        writeln!(
            w,
            "{:<width$}  {:>7.2}  {:>8.4}  {:>10.4}  {:>4}  {:>6.3}",
            label, r.bleu, r.speech_overlap, r.speech_overlap_clamped, r.wrong_pause_count, r.exact_match
        )?;
    }
    Ok(())
}
