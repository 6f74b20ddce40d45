//! Corpus preparation: pause marking, segments, noise, bins, BPE,
//! vocabularies and the factored/interleaved training streams.

use serde::{Deserialize, Serialize};

use crate::data::{
    add_noise, build_factored_example, build_interleaved_example, compute_segments, format_source, learn_bins,
    mark_pauses, AlignedUtterance, BinBoundaries, BpeModel, FactoredExample, InterleavedExample, Lexicon, Timing,
    Vocabulary, EOW, UNKNOWN_WORD,
};
use crate::error::{Error, Result};
use crate::eval::ReferenceRecord;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub timing: Timing,
    /// Standard deviation of the segment-duration noise, in seconds.
    pub noise_sigma: f64,
    pub n_bins: usize,
    pub bpe_merges: usize,
    /// Append `<||>` and per-segment bin tags to the source.
    pub source_tags: bool,
    /// Held-out desired durations are the natural ones scaled by a
    /// per-sentence factor drawn from `[1 - m, 1 + m]`.
    pub heldout_mismatch: f64,
}

/// Value ranges observed in the training streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub train_sentences: usize,
    pub heldout_sentences: usize,
    pub dur_vocab: usize,
    pub counter_vocab: usize,
    pub pause_vocab: usize,
    /// Mean speech frames per target token, for output-length budgets.
    pub frames_per_token: f64,
}

/// Source-side processing shared by training and inference.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceEncoder {
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    pub bins: BinBoundaries,
    pub source_tags: bool,
}

impl SourceEncoder {
    pub fn subwords(&self, text: &str) -> Vec<String> {
        self.bpe
            .apply(text)
            .into_iter()
            .map(|s| {
                if self.vocab.id(&s).is_ok() {
                    s
                } else {
                    UNKNOWN_WORD.to_string()
                }
            })
            .collect()
    }

    /// Source ids, with bin tags for `segments` when tags are enabled.
    pub fn encode(&self, text: &str, segments: &[i64]) -> Result<Vec<usize>> {
        let bins: Vec<usize> = if self.source_tags {
            segments.iter().map(|&d| self.bins.bin_of(d)).collect()
        } else {
            Vec::new()
        };
        format_source(&self.subwords(text), &bins, &self.vocab)
    }
}

pub struct PreparedCorpus {
    pub source: SourceEncoder,
    /// Phoneme-group to target-word map, when the corpus has one.
    pub lexicon: Option<Lexicon>,
    pub target_vocab: Vocabulary,
    pub interleaved_vocab: Vocabulary,
    pub train: Vec<FactoredExample>,
    pub train_interleaved: Vec<InterleavedExample>,
    pub train_references: Vec<ReferenceRecord>,
    pub heldout_references: Vec<ReferenceRecord>,
    pub stats: CorpusStats,
}

/// Renders target words: through the lexicon when there is one, otherwise
/// each word is its phonemes joined by `_`.
pub fn target_text<S: AsRef<str>>(tokens: &[S], lexicon: Option<&Lexicon>) -> String {
    match lexicon {
        Some(l) => l.words_from_tokens(tokens).join(" "),
        None => {
            let mut words: Vec<String> = Vec::new();
            let mut cur: Vec<&str> = Vec::new();
            for t in tokens {
                match t.as_ref() {
                    EOW | crate::data::PAUSE => {
                        if !cur.is_empty() {
                            words.push(cur.join("_"));
                            cur.clear();
                        }
                    }
                    p => cur.push(p),
                }
            }
            if !cur.is_empty() {
                words.push(cur.join("_"));
            }
            words.join(" ")
        }
    }
}

fn reference(index: usize, u: &AlignedUtterance, lexicon: Option<&Lexicon>) -> Result<ReferenceRecord> {
    let rows = u.target_rows()?;
    let phonemes: Vec<String> = rows.iter().map(|r| r.token.clone()).collect();
    Ok(ReferenceRecord {
        index,
        source: u.source_text.clone(),
        text: target_text(&phonemes, lexicon),
        segments: compute_segments(u)?.segment_durations,
        phonemes,
    })
}

fn mark_all(utts: &[AlignedUtterance], timing: &Timing, what: &str) -> Result<Vec<AlignedUtterance>> {
    utts.iter()
        .enumerate()
        .map(|(i, u)| {
            u.validate().map_err(|e| e.context(format!("{what} utterance {i}")))?;
            Ok(mark_pauses(u, timing))
        })
        .collect()
}

/// Builds every training artifact from raw training and held-out utterances.
pub fn prepare_corpus(
    train_raw: &[AlignedUtterance],
    heldout_raw: &[AlignedUtterance],
    lexicon: Option<Lexicon>,
    opts: &PrepareOptions,
    rng: &RngStream,
) -> Result<PreparedCorpus> {
    if train_raw.is_empty() {
        return Err(Error::Config("no training utterances".into()));
    }
    if opts.noise_sigma < 0.0 || !(0.0..1.0).contains(&opts.heldout_mismatch) {
        return Err(Error::Config(
            "noise sigma must be non-negative and mismatch in [0, 1)".into(),
        ));
    }
    let train_utts = &mark_all(train_raw, &opts.timing, "training")?[..];
    let heldout_utts = &mark_all(heldout_raw, &opts.timing, "held-out")?[..];
    let n_train = train_utts.len();
    let heldout = heldout_utts.len();

    let mut specs = Vec::with_capacity(n_train);
    for (i, u) in train_utts.iter().enumerate() {
        let clean = compute_segments(u).map_err(|e| e.context(format!("utterance {i}")))?;
        let mut noise_rng = rng.split_str("noise").split(i as u64);
        specs.push(add_noise(&clean, opts.noise_sigma, &opts.timing, &mut noise_rng));
    }
    let all_segments: Vec<i64> = specs.iter().flat_map(|s| s.segment_durations.iter().copied()).collect();
    let bins = learn_bins(&all_segments, opts.n_bins.max(1))?;

    let sources: Vec<&str> = train_utts.iter().map(|u| u.source_text.as_str()).collect();
    let bpe = BpeModel::learn(&sources, opts.bpe_merges);
    let mut src_vocab = Vocabulary::new(bins.n_bins);
    src_vocab.add(UNKNOWN_WORD);
    for s in &sources {
        for w in bpe.apply(s) {
            src_vocab.add(&w);
        }
    }
    let encoder = SourceEncoder {
        bpe,
        vocab: src_vocab,
        bins,
        source_tags: opts.source_tags,
    };

    let mut tgt_vocab = Vocabulary::new(0);
    let mut targets = Vec::with_capacity(n_train);
    for (i, (u, spec)) in train_utts.iter().zip(&specs).enumerate() {
        let t = build_factored_example(u, spec).map_err(|e| e.context(format!("utterance {i}")))?;
        for m in &t.main {
            tgt_vocab.add(m);
        }
        targets.push(t);
    }

    let mut train = Vec::with_capacity(n_train);
    let mut train_interleaved = Vec::with_capacity(n_train);
    let mut interleaved_tokens = Vec::with_capacity(n_train);
    let (mut max_dur, mut max_counter, mut max_pause) = (0i64, 0i64, 0i64);
    let (mut frames, mut tokens) = (0i64, 0usize);
    for ((u, spec), t) in train_utts.iter().zip(&specs).zip(&targets) {
        let source = encoder.encode(&u.source_text, &spec.segment_durations)?;
        let ex = t.encode(source.clone(), &tgt_vocab)?;
        max_dur = max_dur.max(*ex.dur.iter().max().unwrap_or(&0));
        max_counter = max_counter.max(ex.total.iter().chain(&ex.segment).copied().max().unwrap_or(0));
        max_pause = max_pause.max(ex.pause[0]);
        frames += ex.dur.iter().sum::<i64>();
        tokens += ex.len() - 1;
        interleaved_tokens.push((source, build_interleaved_example(u)?));
        train.push(ex);
    }
    // Duration tokens only exist in the interleaved stream, so that vocabulary
    // extends the factored one.
    let mut interleaved_vocab = tgt_vocab.clone();
    for (source, toks) in interleaved_tokens {
        for tok in &toks {
            interleaved_vocab.add(tok);
        }
        train_interleaved.push(InterleavedExample {
            source,
            target: interleaved_vocab.encode(&toks)?,
        });
    }

    let train_references = train_utts
        .iter()
        .enumerate()
        .map(|(i, u)| reference(i, u, lexicon.as_ref()))
        .collect::<Result<_>>()?;
    let heldout_references = heldout_utts
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut r = reference(i, u, lexicon.as_ref())?;
            if opts.heldout_mismatch > 0.0 {
                let mut mrng = rng.split_str("mismatch").split(i as u64);
                let f = 1.0 + opts.heldout_mismatch * (2.0 * mrng.uniform() - 1.0);
                for d in &mut r.segments {
                    *d = ((*d as f64 * f).round() as i64).max(1);
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(PreparedCorpus {
        source: encoder,
        lexicon,
        target_vocab: tgt_vocab,
        interleaved_vocab,
        train,
        train_interleaved,
        train_references,
        heldout_references,
        stats: CorpusStats {
            train_sentences: n_train,
            heldout_sentences: heldout,
            dur_vocab: max_dur as usize + 1,
            counter_vocab: max_counter as usize + 1,
            pause_vocab: max_pause as usize + 1,
            frames_per_token: frames as f64 / tokens.max(1) as f64,
        },
    })
}
