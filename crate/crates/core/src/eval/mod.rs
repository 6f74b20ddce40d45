//! Speech overlap, wrong-pause counts, corpus BLEU and report assembly.

mod metrics;
mod report;

pub use metrics::{
    corpus_bleu, overlap_summary, speech_overlap, speech_overlap_with, wrong_pause_count, BleuStats, OverlapAveraging,
    OverlapSummary, SegmentTiming,
};
pub use report::{
    evaluate_records, evaluate_run, render_table, EvalReport, ReferenceRecord, SentenceDiagnostics, REFERENCE_FORMAT,
};
