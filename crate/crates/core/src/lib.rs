//! Duration-aware factored translation.
//!
//! A transformer encoder-decoder predicts a phoneme sequence together with a
//! per-phoneme duration factor, while deterministic timing counters (total
//! frames left, pauses left, frames left in the current segment) are fed back
//! into the decoder at every step.

pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
