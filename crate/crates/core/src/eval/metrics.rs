use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference and hypothesis segment durations (frames) per sentence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub reference: Vec<Vec<i64>>,
    pub hypothesis: Vec<Vec<i64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapAveraging {
    /// Mean over every paired segment in the corpus.
    Global,
    /// Mean of per-sentence means.
    PerSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub overlap: f64,
    /// Same mean with every segment score clamped to `[0, 1]`.
    pub clamped: f64,
    pub per_sentence: f64,
    pub paired_segments: usize,
    pub unpaired_segments: usize,
    /// Per-sentence mean, `None` when nothing could be paired.
    pub sentences: Vec<Option<f64>>,
}

fn segment_score(reference: i64, hypothesis: i64) -> Result<f64> {
    if reference <= 0 {
        return Err(Error::Validation(format!(
            "reference segment duration {reference} is not positive"
        )));
    }
    if hypothesis < 0 {
        return Err(Error::Validation(format!("negative hypothesis duration {hypothesis}")));
    }
    Ok(1.0 - (reference - hypothesis).abs() as f64 / reference as f64)
}

/// Segment overlap `1 - |ref - hyp| / ref`, pairing segments by index and
/// leaving unmatched ones out of the mean.
pub fn overlap_summary(timing: &SegmentTiming) -> Result<OverlapSummary> {
    if timing.reference.len() != timing.hypothesis.len() {
        return Err(Error::Validation(format!(
            "{} reference sentences, {} hypotheses",
            timing.reference.len(),
            timing.hypothesis.len()
        )));
    }
    let (mut sum, mut clamped, mut paired, mut unpaired) = (0.0, 0.0, 0usize, 0usize);
    let mut sentences = Vec::with_capacity(timing.reference.len());
    for (r, h) in timing.reference.iter().zip(&timing.hypothesis) {
        let n = r.len().min(h.len());
        unpaired += r.len().max(h.len()) - n;
        let mut s = 0.0;
        for (&rd, &hd) in r.iter().zip(h) {
            let v = segment_score(rd, hd)?;
            s += v;
            clamped += v.clamp(0.0, 1.0);
        }
        sum += s;
        paired += n;
        sentences.push((n > 0).then(|| s / n as f64));
    }
    if paired == 0 {
        return Err(Error::Validation("no pairable segments".into()));
    }
    let scored: Vec<f64> = sentences.iter().flatten().copied().collect();
    Ok(OverlapSummary {
        overlap: sum / paired as f64,
        clamped: clamped / paired as f64,
        per_sentence: scored.iter().sum::<f64>() / scored.len() as f64,
        paired_segments: paired,
        unpaired_segments: unpaired,
        sentences,
    })
}

pub fn speech_overlap(timing: &SegmentTiming) -> Result<f64> {
    speech_overlap_with(timing, OverlapAveraging::Global)
}

pub fn speech_overlap_with(timing: &SegmentTiming, averaging: OverlapAveraging) -> Result<f64> {
    let s = overlap_summary(timing)?;
    Ok(match averaging {
        OverlapAveraging::Global => s.overlap,
        OverlapAveraging::PerSentence => s.per_sentence,
    })
}

/// Number of sentences whose hypothesis pause count differs from the reference.
pub fn wrong_pause_count(reference: &[usize], hypothesis: &[usize]) -> Result<usize> {
    if reference.len() != hypothesis.len() {
        return Err(Error::Validation(format!(
            "{} reference pause counts, {} hypotheses",
            reference.len(),
            hypothesis.len()
        )));
    }
    Ok(reference.iter().zip(hypothesis).filter(|(r, h)| r != h).count())
}

const MAX_ORDER: usize = 4;

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'t, 's>(tokens: &'t [&'s str], n: usize) -> HashMap<&'t [&'s str], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

impl BleuStats {
    pub fn collect<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R]) -> Result<Self> {
        if hypotheses.len() != references.len() {
            return Err(Error::Validation(format!(
                "{} hypotheses, {} references",
                hypotheses.len(),
                references.len()
            )));
        }
        if hypotheses.is_empty() {
            return Err(Error::Validation("empty corpus".into()));
        }
        let mut st = BleuStats::default();
        for (h, r) in hypotheses.iter().zip(references) {
            let h = h.as_ref().to_lowercase();
            let r = r.as_ref().to_lowercase();
            let ht: Vec<&str> = h.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            st.hyp_len += ht.len();
            st.ref_len += rt.len();
            for n in 1..=MAX_ORDER {
                let rc = ngram_counts(&rt, n);
                for (g, c) in ngram_counts(&ht, n) {
                    st.correct[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                }
                st.total[n - 1] += ht.len().saturating_sub(n - 1);
            }
        }
        Ok(st)
    }

    /// BLEU with exponential smoothing of zero-match orders, on a 0-100
    /// scale. Precisions are kept as fractions so a perfect match scores
    /// exactly 100.
    pub fn score(&self) -> f64 {
        let mut precisions = [0.0f64; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                1.0 / (smooth * self.total[n] as f64)
            } else {
                self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let log_mean = precisions
            .iter()
            .map(|&p| if p == 0.0 { -9_999_999_999.0 } else { p.ln() })
            .sum::<f64>()
            / MAX_ORDER as f64;
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * log_mean.exp()
    }
}

/// Case-insensitive corpus BLEU over whitespace tokens, 4-gram, single
/// reference, exponential smoothing.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R]) -> Result<f64> {
    Ok(BleuStats::collect(hypotheses, references)?.score())
}
