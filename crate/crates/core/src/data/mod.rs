//! Corpus ingestion, annotation and construction of training examples.

mod alignment;
mod bins;
mod bpe;
mod corpus;
mod factored;
mod interleaved;
mod segments;
mod synthetic;
mod vocab;

pub use alignment::{
    format_alignment_line, ingest_alignment, mark_pauses, parse_alignment_line, write_alignment, AlignedUtterance,
    TargetRow, Timing, Unit,
};
pub use bins::{learn_bins, BinBoundaries};
pub use bpe::{join_subwords, BpeModel, CONTINUATION};
pub use corpus::{read_records, write_records, CorpusHeader, CORPUS_VERSION};
pub use factored::{build_factored_example, reference_utterance, FactoredExample, FactoredTarget};
pub use interleaved::{
    build_interleaved_example, interleaved_to_rows, is_duration_token, rows_to_interleaved, validate_interleaved,
    InterleavedExample, InterleavedViolation, ViolationKind,
};
pub use segments::{add_noise, compute_segments, SegmentSpec};
pub use synthetic::{generate_synthetic_corpus, LexEntry, Lexicon, SyntheticConfig, SyntheticCorpus, UNKNOWN_WORD};
pub use vocab::{bin_tag, Vocabulary, EOS, EOS_ID, EOW, EOW_ID, NULL, NULL_ID, PAUSE, PAUSE_ID, SEP, SEP_ID};

use crate::error::Result;

/// Source token ids: subwords, then `<||>` and one bin tag per segment.
/// With no bins the separator is omitted.
pub fn format_source<S: AsRef<str>>(subwords: &[S], segment_bins: &[usize], vocab: &Vocabulary) -> Result<Vec<usize>> {
    let mut ids = vocab.encode(subwords)?;
    if !segment_bins.is_empty() {
        ids.push(SEP_ID);
        for &b in segment_bins {
            ids.push(vocab.bin_id(b)?);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_formatting() {
        let subwords = ["Das", "weißt", "du", "nich@@", "t@@", "?"];
        let mut v = Vocabulary::new(5);
        for s in subwords {
            v.add(s);
        }
        let ids = format_source(&subwords, &[4, 1], &v).unwrap();
        assert_eq!(
            v.decode(&ids).unwrap().join(" "),
            "Das weißt du nich@@ t@@ ? <||> <bin4> <bin1>"
        );
        let plain = format_source(&subwords, &[], &v).unwrap();
        assert_eq!(plain.len(), 6);
        let three = format_source(&subwords, &[0, 2, 3], &v).unwrap();
        assert_eq!(three.iter().filter(|&&i| i > SEP_ID && i <= SEP_ID + 5).count(), 3);
        assert!(format_source(&["unknown"], &[], &v).is_err());
    }
}
