//! Forced-alignment interchange format and pause marking.
//!
//! One utterance per line:
//!
//! ```text
//! <source text> TAB <item> <item> ...
//! ```
//!
//! where each item is `phone:seconds`, `sil:seconds` for silence, or `|` for
//! the end of a word.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::vocab::{EOW, PAUSE};
use crate::error::{Error, Result};

/// Frame length and pause threshold used when converting seconds to frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub frame_seconds: f64,
    pub pause_threshold_seconds: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            frame_seconds: 0.01,
            pause_threshold_seconds: 0.3,
        }
    }
}

impl Timing {
    pub fn frames_per_second(&self) -> f64 {
        1.0 / self.frame_seconds
    }

    pub fn to_frames(&self, seconds: f64) -> u32 {
        (seconds / self.frame_seconds).round() as u32
    }

    pub fn to_seconds(&self, frames: u32) -> f64 {
        frames as f64 * self.frame_seconds
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    Phone {
        symbol: String,
        frames: u32,
    },
    Silence {
        frames: u32,
    },
    /// A silence long enough to be kept; its frames are retained for
    /// reinsertion but it contributes no duration to the target streams.
    Pause {
        frames: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedUtterance {
    pub source_text: String,
    pub units: Vec<Unit>,
    /// Indices into `units` of the last phone of every word.
    pub word_boundaries: Vec<usize>,
}

/// One row of the target token stream: a phoneme with its duration, or a
/// zero-duration `<eow>` / `[pause]` marker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRow {
    pub token: String,
    pub dur: i64,
}

impl TargetRow {
    pub fn new(token: impl Into<String>, dur: i64) -> Self {
        TargetRow {
            token: token.into(),
            dur,
        }
    }

    pub fn is_pause(&self) -> bool {
        self.token == PAUSE
    }
}

impl AlignedUtterance {
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for &b in &self.word_boundaries {
            if b >= self.units.len() {
                return Err(Error::Validation(format!(
                    "word boundary {b} outside {} units",
                    self.units.len()
                )));
            }
            if prev.is_some_and(|p| b <= p) {
                return Err(Error::Validation("word boundaries not strictly increasing".into()));
            }
            if !matches!(self.units[b], Unit::Phone { .. }) {
                return Err(Error::Validation(format!("word boundary {b} is not a phone")));
            }
            prev = Some(b);
        }
        Ok(())
    }

    pub fn phone_frames(&self) -> i64 {
        self.units
            .iter()
            .map(|u| match u {
                Unit::Phone { frames, .. } => *frames as i64,
                _ => 0,
            })
            .sum()
    }

    pub fn num_pauses(&self) -> usize {
        self.units.iter().filter(|u| matches!(u, Unit::Pause { .. })).count()
    }

    /// Target token stream with `<eow>` after every word and `[pause]` for
    /// marked pauses. Fails if unmarked silences remain.
    pub fn target_rows(&self) -> Result<Vec<TargetRow>> {
        let mut rows = Vec::with_capacity(self.units.len() + self.word_boundaries.len());
        let mut bounds = self.word_boundaries.iter().peekable();
        for (i, u) in self.units.iter().enumerate() {
            match u {
                Unit::Phone { symbol, frames } => {
                    rows.push(TargetRow::new(symbol.clone(), *frames as i64));
                    if bounds.peek() == Some(&&i) {
                        bounds.next();
                        rows.push(TargetRow::new(EOW, 0));
                    }
                }
                Unit::Pause { .. } => rows.push(TargetRow::new(PAUSE, 0)),
                Unit::Silence { .. } => {
                    return Err(Error::Validation(
                        "utterance has unmarked silence; run mark_pauses first".into(),
                    ))
                }
            }
        }
        Ok(rows)
    }

    /// Words as lists of phoneme symbols, in order.
    pub fn words(&self) -> Vec<Vec<String>> {
        let mut words = Vec::new();
        let mut cur = Vec::new();
        let mut bounds = self.word_boundaries.iter().peekable();
        for (i, u) in self.units.iter().enumerate() {
            if let Unit::Phone { symbol, .. } = u {
                cur.push(symbol.clone());
                if bounds.peek() == Some(&&i) {
                    bounds.next();
                    words.push(std::mem::take(&mut cur));
                }
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }
}

/// Replaces silences longer than the threshold by pauses and drops the rest.
/// Silences at the start or end of the utterance are always dropped, and
/// adjacent silences are merged before thresholding.
pub fn mark_pauses(u: &AlignedUtterance, timing: &Timing) -> AlignedUtterance {
    let first_phone = u.units.iter().position(|x| matches!(x, Unit::Phone { .. }));
    let last_phone = u.units.iter().rposition(|x| matches!(x, Unit::Phone { .. }));
    let (Some(first), Some(last)) = (first_phone, last_phone) else {
        return AlignedUtterance {
            source_text: u.source_text.clone(),
            units: Vec::new(),
            word_boundaries: Vec::new(),
        };
    };
    let mut units = Vec::with_capacity(u.units.len());
    let mut remap = vec![usize::MAX; u.units.len()];
    let mut pending_silence: Option<u32> = None;
    let flush = |units: &mut Vec<Unit>, pending: &mut Option<u32>| {
        if let Some(frames) = pending.take() {
            if frames as f64 * timing.frame_seconds > timing.pause_threshold_seconds + 1e-9 {
                units.push(Unit::Pause { frames });
            }
        }
    };
    for (i, unit) in u.units.iter().enumerate().take(last + 1).skip(first) {
        match unit {
            Unit::Phone { .. } => {
                flush(&mut units, &mut pending_silence);
                remap[i] = units.len();
                units.push(unit.clone());
            }
            Unit::Silence { frames } | Unit::Pause { frames } => {
                *pending_silence.get_or_insert(0) += frames;
            }
        }
    }
    let word_boundaries = u
        .word_boundaries
        .iter()
        .map(|&b| remap[b])
        .filter(|&b| b != usize::MAX)
        .collect();
    AlignedUtterance {
        source_text: u.source_text.clone(),
        units,
        word_boundaries,
    }
}

fn fmt_seconds(s: f64) -> String {
    let t = format!("{s:.6}");
    let t = t.trim_end_matches('0');
    t.strip_suffix('.').unwrap_or(t).to_string()
}

/// Renders one utterance as an interchange line (without newline).
pub fn format_alignment_line(u: &AlignedUtterance, timing: &Timing) -> String {
    let mut items = Vec::new();
    let mut bounds = u.word_boundaries.iter().peekable();
    for (i, unit) in u.units.iter().enumerate() {
        match unit {
            Unit::Phone { symbol, frames } => {
                items.push(format!("{symbol}:{}", fmt_seconds(timing.to_seconds(*frames))));
                if bounds.peek() == Some(&&i) {
                    bounds.next();
                    items.push("|".into());
                }
            }
            Unit::Silence { frames } | Unit::Pause { frames } => {
                items.push(format!("sil:{}", fmt_seconds(timing.to_seconds(*frames))))
            }
        }
    }
    format!("{}\t{}", u.source_text, items.join(" "))
}

pub fn parse_alignment_line(line: &str, lineno: usize, timing: &Timing) -> Result<AlignedUtterance> {
    let perr = |message: String| Error::Parse { line: lineno, message };
    let (source, items) = line
        .split_once('\t')
        .ok_or_else(|| perr("expected `source<TAB>items`".into()))?;
    let mut units = Vec::new();
    let mut word_boundaries = Vec::new();
    for item in items.split_whitespace() {
        if item == "|" {
            match units.last() {
                Some(Unit::Phone { .. }) => word_boundaries.push(units.len() - 1),
                _ => return Err(perr("word boundary must follow a phone".into())),
            }
            continue;
        }
        let (sym, secs) = item
            .rsplit_once(':')
            .ok_or_else(|| perr(format!("item {item:?} is not `phone:seconds`")))?;
        let secs: f64 = secs.parse().map_err(|_| perr(format!("bad duration in {item:?}")))?;
        if !secs.is_finite() {
            return Err(perr(format!("non-finite duration in {item:?}")));
        }
        if secs < 0.0 {
            return Err(Error::Validation(format!(
                "line {lineno}: negative duration in {item:?}"
            )));
        }
        if sym.is_empty() {
            return Err(perr(format!("empty symbol in {item:?}")));
        }
        let frames = timing.to_frames(secs);
        if sym == "sil" {
            units.push(Unit::Silence { frames });
        } else {
            units.push(Unit::Phone {
                symbol: sym.to_string(),
                frames,
            });
        }
    }
    let u = AlignedUtterance {
        source_text: source.trim().to_string(),
        units,
        word_boundaries,
    };
    u.validate().map_err(|e| e.context(format!("line {lineno}")))?;
    Ok(u)
}

pub fn ingest_alignment<R: BufRead>(r: R, timing: &Timing) -> Result<Vec<AlignedUtterance>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_alignment_line(&line, i + 1, timing)?);
    }
    Ok(out)
}

pub fn write_alignment<W: Write>(mut w: W, utts: &[AlignedUtterance], timing: &Timing) -> Result<()> {
    for u in utts {
        writeln!(w, "{}", format_alignment_line(u, timing))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Timing {
        Timing::default()
    }

    #[test]
    fn seconds_become_frames() {
        let u = parse_alignment_line("x\tD:0.02 OW1:0.05 |", 1, &t()).unwrap();
        assert_eq!(
            u.units,
            vec![
                Unit::Phone {
                    symbol: "D".into(),
                    frames: 2
                },
                Unit::Phone {
                    symbol: "OW1".into(),
                    frames: 5
                },
            ]
        );
        assert_eq!(u.word_boundaries, vec![1]);
    }

    #[test]
    fn silence_entry() {
        let u = parse_alignment_line("x\tA:0.1 | sil:0.4 B:0.1 |", 1, &t()).unwrap();
        assert_eq!(u.units[1], Unit::Silence { frames: 40 });
    }

    #[test]
    fn malformed_records_report_line() {
        let text = "ok\tA:0.1 |\nbroken line without tab\n";
        match ingest_alignment(text.as_bytes(), &t()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_alignment_line("x\tA:-0.1", 3, &t()),
            Err(Error::Validation(_))
        ));
        assert!(parse_alignment_line("x\t| A:0.1", 3, &t()).is_err());
    }

    #[test]
    fn long_silence_becomes_pause() {
        let u = parse_alignment_line("x\tA:0.1 | sil:0.4 B:0.1 |", 1, &t()).unwrap();
        let m = mark_pauses(&u, &t());
        assert_eq!(m.units[1], Unit::Pause { frames: 40 });
        assert_eq!(m.target_rows().unwrap()[2], TargetRow::new(PAUSE, 0));
    }

    #[test]
    fn short_silence_is_dropped() {
        let u = parse_alignment_line("x\tA:0.1 | sil:0.2 B:0.1 |", 1, &t()).unwrap();
        let m = mark_pauses(&u, &t());
        assert_eq!(m.units.len(), 2);
        assert_eq!(m.word_boundaries, vec![0, 1]);
    }

    #[test]
    fn threshold_is_strict() {
        let u = parse_alignment_line("x\tA:0.1 | sil:0.3 B:0.1 |", 1, &t()).unwrap();
        assert_eq!(mark_pauses(&u, &t()).num_pauses(), 0);
    }

    #[test]
    fn no_silence_unchanged_and_edges_trimmed() {
        let u = parse_alignment_line("x\tA:0.1 B:0.03 | C:0.05 |", 1, &t()).unwrap();
        assert_eq!(mark_pauses(&u, &t()), u);
        let edged = parse_alignment_line("x\tsil:0.9 A:0.1 | sil:0.5", 1, &t()).unwrap();
        let m = mark_pauses(&edged, &t());
        assert_eq!(
            m.units,
            vec![Unit::Phone {
                symbol: "A".into(),
                frames: 10
            }]
        );
        assert_eq!(m.word_boundaries, vec![0]);
    }

    #[test]
    fn line_round_trip() {
        let line = "Das weißt du?\tD:0.02 OW1:0.05 N:0.06 T:0.08 | sil:0.41 IH0:0.05 T:0.07 |";
        let u = parse_alignment_line(line, 1, &t()).unwrap();
        assert_eq!(format_alignment_line(&u, &t()), line);
    }
}
