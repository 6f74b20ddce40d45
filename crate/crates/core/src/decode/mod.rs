//! Counter state machine and constrained search over the factored model.

mod counters;
mod output;
mod search;

pub use counters::{init_counters, step_counters, CounterState};
pub use output::{TranslationRecord, TRANSLATION_FORMAT};
pub use search::{beam_decode, greedy_decode, segments_of, DecodeOptions, Hypothesis};
