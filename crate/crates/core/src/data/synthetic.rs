//! Synthetic parallel corpora with known alignments.
//!
//! A lexicon maps every source word to a target word and a unique phoneme
//! group, so a phoneme hypothesis can be converted back to target words
//! exactly. Sentences are monotone word-for-word translations; durations come
//! from a per-phoneme base length scaled by a per-utterance speaking rate plus
//! uniform jitter; long silences between words become pauses.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::alignment::{AlignedUtterance, Unit};
use super::vocab::{EOW, PAUSE};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const PHONEMES: &[&str] = &[
    "AA1", "AE1", "AH0", "AO1", "AW1", "AY1", "B", "CH", "D", "DH", "EH1", "ER0", "EY1", "F", "G", "HH", "IH0", "IY1",
    "JH", "K", "L", "M", "N", "NG", "OW1", "OY1", "P", "R", "S", "SH", "T", "TH", "UH1", "UW1", "V", "W", "Y", "Z",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "w", "z", "sch", "st",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ei", "au", "ü", "ö"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_sentences: usize,
    pub lexicon_size: usize,
    pub n_phonemes: usize,
    pub phones_per_word: (usize, usize),
    pub words_per_sentence: (usize, usize),
    /// Probability of a pause between two consecutive words.
    pub pause_probability: f64,
    /// Probability of a sub-threshold silence between words (dropped later).
    pub short_silence_probability: f64,
    /// Range of per-phoneme base durations, in frames.
    pub phone_frames: (i64, i64),
    /// Uniform per-token jitter added to the scaled base duration.
    pub duration_jitter: i64,
    /// Speaking-rate factor drawn per utterance from `[1 - s, 1 + s]`.
    pub rate_spread: f64,
    pub pause_frames: (i64, i64),
    pub short_silence_frames: (i64, i64),
    /// Independent timing realizations of every sentence text.
    pub timing_variants: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_sentences: 50,
            lexicon_size: 16,
            n_phonemes: 14,
            phones_per_word: (1, 3),
            words_per_sentence: (2, 4),
            pause_probability: 0.3,
            short_silence_probability: 0.2,
            phone_frames: (3, 8),
            duration_jitter: 1,
            rate_spread: 0.0,
            pause_frames: (35, 80),
            short_silence_frames: (3, 25),
            timing_variants: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub source: String,
    pub target: String,
    pub phonemes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<LexEntry>,
    by_phonemes: HashMap<Vec<String>, usize>,
    by_source: HashMap<String, usize>,
    base_frames: HashMap<String, i64>,
}

pub const UNKNOWN_WORD: &str = "<unk>";

fn syllable_word(rng: &mut RngStream, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS[rng.below(ONSETS.len())], NUCLEI[rng.below(NUCLEI.len())]))
        .collect()
}

impl Lexicon {
    pub fn generate(cfg: &SyntheticConfig, rng: &mut RngStream) -> Result<Self> {
        if cfg.n_phonemes == 0 || cfg.n_phonemes > PHONEMES.len() {
            return Err(Error::Config(format!("n_phonemes must be in 1..={}", PHONEMES.len())));
        }
        let (pmin, pmax) = cfg.phones_per_word;
        if pmin == 0 || pmin > pmax {
            return Err(Error::Config("phones_per_word must satisfy 1 <= min <= max".into()));
        }
        let capacity: f64 = (pmin..=pmax).map(|l| (cfg.n_phonemes as f64).powi(l as i32)).sum();
        if (cfg.lexicon_size as f64) > capacity * 0.5 {
            return Err(Error::Config("lexicon too large for the phoneme inventory".into()));
        }
        let mut inventory: Vec<&str> = PHONEMES.to_vec();
        rng.shuffle(&mut inventory);
        inventory.truncate(cfg.n_phonemes);
        inventory.sort();
        let base_frames = inventory
            .iter()
            .map(|p| {
                (
                    p.to_string(),
                    rng.range_inclusive(cfg.phone_frames.0, cfg.phone_frames.1),
                )
            })
            .collect();

        let mut entries = Vec::with_capacity(cfg.lexicon_size);
        let mut seen_groups = HashSet::new();
        let mut seen_src = HashSet::new();
        let mut seen_tgt = HashSet::new();
        while entries.len() < cfg.lexicon_size {
            let len = rng.range_inclusive(pmin as i64, pmax as i64) as usize;
            let group: Vec<String> = (0..len)
                .map(|_| inventory[rng.below(inventory.len())].to_string())
                .collect();
            let syl = 1 + rng.below(2);
            let source = syllable_word(rng, syl + 1);
            let target = syllable_word(rng, syl).to_uppercase();
            if seen_groups.contains(&group) || seen_src.contains(&source) || seen_tgt.contains(&target) {
                continue;
            }
            seen_groups.insert(group.clone());
            seen_src.insert(source.clone());
            seen_tgt.insert(target.clone());
            entries.push(LexEntry {
                source,
                target,
                phonemes: group,
            });
        }
        Ok(Lexicon::from_entries(entries, base_frames))
    }

    pub fn from_entries(entries: Vec<LexEntry>, base_frames: HashMap<String, i64>) -> Self {
        let by_phonemes = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.phonemes.clone(), i))
            .collect();
        let by_source = entries.iter().enumerate().map(|(i, e)| (e.source.clone(), i)).collect();
        Lexicon {
            entries,
            by_phonemes,
            by_source,
            base_frames,
        }
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn base_frames(&self, phoneme: &str) -> Option<i64> {
        self.base_frames.get(phoneme).copied()
    }

    pub fn lookup_source(&self, word: &str) -> Option<&LexEntry> {
        self.by_source.get(word).map(|&i| &self.entries[i])
    }

    /// Target word for a phoneme group, or [`UNKNOWN_WORD`].
    pub fn word_for(&self, phonemes: &[String]) -> &str {
        self.by_phonemes
            .get(phonemes)
            .map_or(UNKNOWN_WORD, |&i| self.entries[i].target.as_str())
    }

    /// Converts a main-token stream (phonemes, `<eow>`, `[pause]`) to target
    /// words. Pauses are ignored; a trailing group without `<eow>` still counts.
    pub fn words_from_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur: Vec<String> = Vec::new();
        for t in tokens {
            match t.as_ref() {
                EOW => {
                    if !cur.is_empty() {
                        words.push(self.word_for(&cur).to_string());
                        cur.clear();
                    }
                }
                PAUSE => {}
                p => cur.push(p.to_string()),
            }
        }
        if !cur.is_empty() {
            words.push(self.word_for(&cur).to_string());
        }
        words
    }

    /// TSV: `source TAB target TAB phonemes`, preceded by `#base` lines.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut base: Vec<_> = self.base_frames.iter().collect();
        base.sort();
        for (p, f) in base {
            writeln!(w, "#base\t{p}\t{f}")?;
        }
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}", e.source, e.target, e.phonemes.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut base = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let cols: Vec<&str> = line.split('\t').collect();
            let perr = || Error::Parse {
                line: i + 1,
                message: format!("bad lexicon line {line:?}"),
            };
            match cols.as_slice() {
                ["#base", p, f] => {
                    base.insert(p.to_string(), f.parse().map_err(|_| perr())?);
                }
                [s, t, ph] => entries.push(LexEntry {
                    source: s.to_string(),
                    target: t.to_string(),
                    phonemes: ph.split_whitespace().map(str::to_string).collect(),
                }),
                _ => return Err(perr()),
            }
        }
        Ok(Lexicon::from_entries(entries, base))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub utterances: Vec<AlignedUtterance>,
    /// Target-side word sequence of every utterance.
    pub references: Vec<String>,
    /// `(sentence, timing variant)` of every utterance.
    pub origins: Vec<(usize, usize)>,
}

/// Generates a corpus; identical for identical configs and streams.
///
/// Each of the `n_sentences` texts is realized `timing_variants` times with
/// independent speaking rate, jitter and silences; utterances are ordered by
/// sentence, then variant.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, rng: &RngStream) -> Result<SyntheticCorpus> {
    let root = rng;
    let lexicon = Lexicon::generate(cfg, &mut root.split_str("lexicon"))?;
    let (wmin, wmax) = cfg.words_per_sentence;
    if wmin == 0 || wmin > wmax {
        return Err(Error::Config("words_per_sentence must satisfy 1 <= min <= max".into()));
    }
    if cfg.timing_variants == 0 {
        return Err(Error::Config("timing_variants must be at least 1".into()));
    }
    let n = cfg.n_sentences * cfg.timing_variants;
    let mut corpus = SyntheticCorpus {
        utterances: Vec::with_capacity(n),
        references: Vec::with_capacity(n),
        origins: Vec::with_capacity(n),
        lexicon,
    };
    for s in 0..cfg.n_sentences {
        let mut text_rng = root.split_str("sentences").split(s as u64);
        let n_words = text_rng.range_inclusive(wmin as i64, wmax as i64) as usize;
        let words: Vec<usize> = (0..n_words)
            .map(|_| text_rng.below(corpus.lexicon.entries.len()))
            .collect();
        for v in 0..cfg.timing_variants {
            let mut rng = root.split_str("timing").split(s as u64).split(v as u64);
            let u = realize(&corpus.lexicon, &words, cfg, &mut rng);
            corpus.utterances.push(u);
            corpus.references.push(
                words
                    .iter()
                    .map(|&w| corpus.lexicon.entries[w].target.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            corpus.origins.push((s, v));
        }
    }
    Ok(corpus)
}

fn realize(lexicon: &Lexicon, words: &[usize], cfg: &SyntheticConfig, rng: &mut RngStream) -> AlignedUtterance {
    let rate = 1.0 + cfg.rate_spread * (2.0 * rng.uniform() - 1.0);
    let mut units = Vec::new();
    let mut bounds = Vec::new();
    let mut src = Vec::new();
    for (w, &idx) in words.iter().enumerate() {
        let e = &lexicon.entries[idx];
        src.push(e.source.as_str());
        for p in &e.phonemes {
            let base = lexicon.base_frames[p] as f64 * rate;
            let jitter = if cfg.duration_jitter > 0 {
                rng.range_inclusive(-cfg.duration_jitter, cfg.duration_jitter)
            } else {
                0
            };
            let frames = (base.round() as i64 + jitter).max(1) as u32;
            units.push(Unit::Phone {
                symbol: p.clone(),
                frames,
            });
        }
        bounds.push(units.len() - 1);
        if w + 1 < words.len() {
            if rng.bernoulli(cfg.pause_probability) {
                let f = rng.range_inclusive(cfg.pause_frames.0, cfg.pause_frames.1);
                units.push(Unit::Silence { frames: f as u32 });
            } else if rng.bernoulli(cfg.short_silence_probability) {
                let f = rng.range_inclusive(cfg.short_silence_frames.0, cfg.short_silence_frames.1);
                units.push(Unit::Silence { frames: f as u32 });
            }
        }
    }
    AlignedUtterance {
        source_text: src.join(" "),
        units,
        word_boundaries: bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::alignment::{mark_pauses, Timing};
    use crate::data::segments::compute_segments;

    fn cfg(n: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_sentences: n,
            ..Default::default()
        }
    }

    fn gen(c: &SyntheticConfig, seed: u64) -> SyntheticCorpus {
        generate_synthetic_corpus(c, &RngStream::new(seed)).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let a = gen(&cfg(10), 1);
        let b = gen(&cfg(10), 1);
        assert_eq!(a, b);
        let c = gen(&cfg(10), 2);
        assert_ne!(a.utterances, c.utterances);
    }

    #[test]
    fn no_pauses_means_one_segment() {
        let t = Timing::default();
        let mut c = cfg(40);
        c.pause_probability = 0.0;
        let corpus = gen(&c, 3);
        for u in &corpus.utterances {
            let m = mark_pauses(u, &t);
            assert_eq!(compute_segments(&m).unwrap().segment_durations.len(), 1);
        }
    }

    #[test]
    fn lexicon_inverts_phonemes() {
        let t = Timing::default();
        let corpus = gen(&cfg(20), 4);
        for (u, r) in corpus.utterances.iter().zip(&corpus.references) {
            let m = mark_pauses(u, &t);
            let toks: Vec<String> = m.target_rows().unwrap().into_iter().map(|r| r.token).collect();
            assert_eq!(corpus.lexicon.words_from_tokens(&toks).join(" "), *r);
            let src: Vec<&str> = u.source_text.split(' ').collect();
            let via_src: Vec<&str> = src
                .iter()
                .map(|w| corpus.lexicon.lookup_source(w).unwrap().target.as_str())
                .collect();
            assert_eq!(via_src.join(" "), *r);
        }
        let mut buf = Vec::new();
        corpus.lexicon.write(&mut buf).unwrap();
        assert_eq!(Lexicon::read(buf.as_slice()).unwrap(), corpus.lexicon);
    }
}
