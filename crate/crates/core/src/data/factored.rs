//! Factored targets: the main token stream aligned with the duration factor
//! and the three timing counters.
//!
//! Row 0 is a NULL column holding the initial counter values; row `t` holds
//! token `t`, its duration, and the counters after that token:
//!
//! * total remaining frames decreases by every duration;
//! * pauses remaining decreases by one at each `[pause]`;
//! * segment remaining frames decreases by every duration and is reloaded with
//!   the next segment's duration at each `[pause]`.

use serde::{Deserialize, Serialize};

use super::alignment::{AlignedUtterance, TargetRow};
use super::segments::{compute_segments, SegmentSpec};
use super::vocab::{Vocabulary, NULL, PAUSE};
use crate::error::{Error, Result};

/// Symbolic factored target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactoredTarget {
    pub main: Vec<String>,
    pub dur: Vec<i64>,
    pub total: Vec<i64>,
    pub pause: Vec<i64>,
    pub segment: Vec<i64>,
}

/// Id-encoded training example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactoredExample {
    pub source: Vec<usize>,
    pub main: Vec<usize>,
    pub dur: Vec<i64>,
    pub total: Vec<i64>,
    pub pause: Vec<i64>,
    pub segment: Vec<i64>,
}

impl FactoredTarget {
    /// Builds the streams from target rows and (possibly noised) segment
    /// durations. Counters are computed in closed form from prefix sums.
    pub fn from_rows(rows: &[TargetRow], segments: &[i64]) -> Result<Self> {
        let n_pauses = rows.iter().filter(|r| r.is_pause()).count();
        if segments.len() != n_pauses + 1 {
            return Err(Error::Validation(format!(
                "{} segment durations for {} pauses",
                segments.len(),
                n_pauses
            )));
        }
        let sum: i64 = segments.iter().sum();
        let n = rows.len() + 1;
        let mut t = FactoredTarget {
            main: Vec::with_capacity(n),
            dur: Vec::with_capacity(n),
            total: Vec::with_capacity(n),
            pause: Vec::with_capacity(n),
            segment: Vec::with_capacity(n),
        };
        t.main.push(NULL.to_string());
        t.dur.push(0);
        t.total.push(sum);
        t.pause.push(n_pauses as i64);
        t.segment.push(segments[0]);

        let mut elapsed = 0i64;
        let mut pauses_seen = 0usize;
        let mut elapsed_at_last_pause = 0i64;
        for r in rows {
            if r.dur < 0 {
                return Err(Error::Validation(format!("negative duration for {}", r.token)));
            }
            elapsed += r.dur;
            if r.is_pause() {
                pauses_seen += 1;
                elapsed_at_last_pause = elapsed;
            }
            t.main.push(r.token.clone());
            t.dur.push(r.dur);
            t.total.push(sum - elapsed);
            t.pause.push((n_pauses - pauses_seen) as i64);
            t.segment
                .push(segments[pauses_seen] - (elapsed - elapsed_at_last_pause));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    /// Target rows without the NULL column.
    pub fn rows(&self) -> Vec<TargetRow> {
        self.main
            .iter()
            .zip(&self.dur)
            .skip(1)
            .map(|(m, d)| TargetRow::new(m.clone(), *d))
            .collect()
    }

    pub fn encode(&self, source: Vec<usize>, vocab: &Vocabulary) -> Result<FactoredExample> {
        Ok(FactoredExample {
            source,
            main: vocab.encode(&self.main)?,
            dur: self.dur.clone(),
            total: self.total.clone(),
            pause: self.pause.clone(),
            segment: self.segment.clone(),
        })
    }
}

impl FactoredExample {
    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.main.len();
        if [self.dur.len(), self.total.len(), self.pause.len(), self.segment.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Validation("factor streams differ in length".into()));
        }
        if n == 0 || self.main[0] != super::vocab::NULL_ID || self.dur[0] != 0 {
            return Err(Error::Validation("row 0 must be NULL with duration 0".into()));
        }
        Ok(())
    }

    pub fn decode(&self, vocab: &Vocabulary) -> Result<FactoredTarget> {
        Ok(FactoredTarget {
            main: vocab.decode(&self.main)?,
            dur: self.dur.clone(),
            total: self.total.clone(),
            pause: self.pause.clone(),
            segment: self.segment.clone(),
        })
    }
}

/// Factored streams for `u` under the given segment durations.
///
/// When `spec` carries the utterance's own (clean) segment durations, every
/// counter must stay non-negative and finish at zero; a violation is an
/// internal consistency error. Noised durations may end anywhere.
pub fn build_factored_example(u: &AlignedUtterance, spec: &SegmentSpec) -> Result<FactoredTarget> {
    let rows = u.target_rows()?;
    let t = FactoredTarget::from_rows(&rows, &spec.segment_durations)?;
    let clean = compute_segments(u)?;
    if clean.segment_durations == spec.segment_durations {
        let last = t.len() - 1;
        let negative = t.total.iter().chain(&t.segment).any(|&v| v < 0);
        if negative || t.total[last] != 0 || t.segment[last] != 0 || t.pause[last] != 0 {
            return Err(Error::Consistency(format!(
                "counter underflow or residue in clean example for {:?}",
                u.source_text
            )));
        }
    }
    Ok(t)
}

/// The worked example: "don't you know [pause] it".
pub fn reference_utterance() -> AlignedUtterance {
    use super::alignment::Unit;
    let phone = |s: &str, f: u32| Unit::Phone {
        symbol: s.to_string(),
        frames: f,
    };
    AlignedUtterance {
        source_text: "Das weißt du nicht?".to_string(),
        units: vec![
            phone("D", 2),
            phone("OW1", 5),
            phone("N", 6),
            phone("T", 8),
            phone("Y", 3),
            phone("UW1", 7),
            phone("N", 5),
            phone("OW1", 41),
            Unit::Pause { frames: 45 },
            phone("IH0", 5),
            phone("T", 7),
        ],
        word_boundaries: vec![3, 5, 7, 10],
    }
}

pub(crate) fn is_marker(token: &str) -> bool {
    token == PAUSE || token == super::vocab::EOW
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_example_rows() {
        let u = reference_utterance();
        let spec = compute_segments(&u).unwrap();
        assert_eq!(spec.segment_durations, vec![77, 12]);
        let t = build_factored_example(&u, &spec).unwrap();
        assert_eq!(
            t.main.join(" "),
            "<null> D OW1 N T <eow> Y UW1 <eow> N OW1 <eow> [pause] IH0 T <eow>"
        );
        assert_eq!(t.dur, vec![0, 2, 5, 6, 8, 0, 3, 7, 0, 5, 41, 0, 0, 5, 7, 0]);
        assert_eq!(
            t.total,
            vec![89, 87, 82, 76, 68, 68, 65, 58, 58, 53, 12, 12, 12, 7, 0, 0]
        );
        assert_eq!(t.pause, vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(
            t.segment,
            vec![77, 75, 70, 64, 56, 56, 53, 46, 46, 41, 0, 0, 12, 7, 0, 0]
        );
    }

    #[test]
    fn single_phoneme() {
        let u = AlignedUtterance {
            source_text: "x".into(),
            units: vec![super::super::Unit::Phone {
                symbol: "X".into(),
                frames: 5,
            }],
            word_boundaries: vec![],
        };
        let spec = compute_segments(&u).unwrap();
        let t = build_factored_example(&u, &spec).unwrap();
        assert_eq!(t.main, vec!["<null>", "X"]);
        assert_eq!(t.dur, vec![0, 5]);
        assert_eq!(t.total, vec![5, 0]);
        assert_eq!(t.pause, vec![0, 0]);
        assert_eq!(t.segment, vec![5, 0]);
    }

    #[test]
    fn noised_segments_may_end_nonzero() {
        let u = reference_utterance();
        let spec = SegmentSpec {
            segment_durations: vec![70, 20],
            pause_positions: vec![11],
        };
        let t = build_factored_example(&u, &spec).unwrap();
        assert_eq!(t.total[0], 90);
        assert_eq!(*t.total.last().unwrap(), 1);
        assert_eq!(t.segment[12], 20);
        assert_eq!(*t.segment.last().unwrap(), 8);
    }

    #[test]
    fn wrong_segment_count_rejected() {
        let u = reference_utterance();
        let spec = SegmentSpec {
            segment_durations: vec![89],
            pause_positions: vec![],
        };
        assert!(build_factored_example(&u, &spec).is_err());
    }
}
