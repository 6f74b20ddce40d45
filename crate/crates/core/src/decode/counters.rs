use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::PAUSE;
use crate::error::{Error, Result};

/// Timing counters tracked while a hypothesis is extended.
///
/// Values may go negative when a hypothesis overruns its budget; they are
/// clamped only when mapped to embedding ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterState {
    pub total_remaining: i64,
    pub segment_remaining: i64,
    pub pending_segments: VecDeque<i64>,
}

impl CounterState {
    pub fn pauses_remaining(&self) -> usize {
        self.pending_segments.len()
    }

    /// `(total, pause, segment)` as fed to the decoder.
    pub fn values(&self) -> [i64; 3] {
        [
            self.total_remaining,
            self.pauses_remaining() as i64,
            self.segment_remaining,
        ]
    }
}

pub fn init_counters(segment_durations: &[i64]) -> Result<CounterState> {
    let (&first, rest) = segment_durations
        .split_first()
        .ok_or_else(|| Error::Validation("no segment durations".into()))?;
    if let Some(d) = segment_durations.iter().find(|&&d| d <= 0) {
        return Err(Error::Validation(format!("segment duration {d} is not positive")));
    }
    Ok(CounterState {
        total_remaining: segment_durations.iter().sum(),
        segment_remaining: first,
        pending_segments: rest.iter().copied().collect(),
    })
}

/// Applies one emitted `(token, duration)` row.
pub fn step_counters(state: &CounterState, token: &str, duration: i64) -> Result<CounterState> {
    if duration < 0 {
        return Err(Error::Validation(format!("negative duration {duration}")));
    }
    let mut next = state.clone();
    next.total_remaining -= duration;
    if token == PAUSE {
        next.segment_remaining = next.pending_segments.pop_front().ok_or(Error::PauseOverflow)?;
    } else {
        next.segment_remaining -= duration;
    }
    Ok(next)
}
