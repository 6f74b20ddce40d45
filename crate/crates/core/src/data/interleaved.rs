//! Interleaved baseline targets: `D 2 OW1 5 N 6 T 8 <eow> ... [pause] ...`.

use serde::{Deserialize, Serialize};

use super::alignment::{AlignedUtterance, TargetRow};
use super::factored::is_marker;
use super::vocab::{EOS, NULL};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedExample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// The sequence starts with a duration.
    LeadingDuration,
    /// A duration directly follows another duration.
    AdjacentDurations,
    /// A duration follows `<eow>` or `[pause]`.
    DurationAfterMarker,
    /// A phoneme is not followed by its duration.
    MissingDuration,
    /// Reserved tokens that cannot appear in a target.
    ReservedToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterleavedViolation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl std::fmt::Display for InterleavedViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} at token {}", self.kind, self.index)
    }
}

pub fn is_duration_token(tok: &str) -> bool {
    !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit())
}

pub fn rows_to_interleaved(rows: &[TargetRow]) -> Vec<String> {
    let mut out = Vec::with_capacity(rows.len() * 2);
    for r in rows {
        out.push(r.token.clone());
        if !is_marker(&r.token) {
            out.push(r.dur.to_string());
        }
    }
    out
}

pub fn build_interleaved_example(u: &AlignedUtterance) -> Result<Vec<String>> {
    Ok(rows_to_interleaved(&u.target_rows()?))
}

/// Checks the phoneme/duration alternation and reports the first violation.
pub fn validate_interleaved<S: AsRef<str>>(tokens: &[S]) -> std::result::Result<(), InterleavedViolation> {
    let fail = |index, kind| Err(InterleavedViolation { index, kind });
    let mut expect_duration = false;
    let mut prev: Option<&str> = None;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if t == NULL || t == EOS {
            return fail(i, ViolationKind::ReservedToken);
        }
        if is_duration_token(t) {
            match prev {
                _ if expect_duration => expect_duration = false,
                None => return fail(i, ViolationKind::LeadingDuration),
                Some(p) if is_duration_token(p) => return fail(i, ViolationKind::AdjacentDurations),
                Some(_) => return fail(i, ViolationKind::DurationAfterMarker),
            }
        } else {
            if expect_duration {
                return fail(i, ViolationKind::MissingDuration);
            }
            expect_duration = !is_marker(t);
        }
        prev = Some(t);
    }
    if expect_duration {
        return fail(tokens.len(), ViolationKind::MissingDuration);
    }
    Ok(())
}

/// Parses a valid interleaved sequence back into target rows.
pub fn interleaved_to_rows<S: AsRef<str>>(tokens: &[S]) -> std::result::Result<Vec<TargetRow>, InterleavedViolation> {
    validate_interleaved(tokens)?;
    let mut rows = Vec::new();
    let mut it = tokens.iter().map(|t| t.as_ref()).peekable();
    while let Some(t) = it.next() {
        if is_marker(t) {
            rows.push(TargetRow::new(t, 0));
        } else {
            let d = it.next().expect("validated").parse().expect("validated");
            rows.push(TargetRow::new(t, d));
        }
    }
    Ok(rows)
}
