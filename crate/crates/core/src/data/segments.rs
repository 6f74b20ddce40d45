use serde::{Deserialize, Serialize};

use super::alignment::{AlignedUtterance, Timing};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Durations of the speech segments between pauses, and where the pauses sit
/// in the target token stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub segment_durations: Vec<i64>,
    pub pause_positions: Vec<usize>,
}

impl SegmentSpec {
    pub fn total(&self) -> i64 {
        self.segment_durations.iter().sum()
    }

    pub fn num_pauses(&self) -> usize {
        self.pause_positions.len()
    }
}

/// Sums phoneme durations between consecutive pauses.
pub fn compute_segments(u: &AlignedUtterance) -> Result<SegmentSpec> {
    let rows = u.target_rows()?;
    let mut segment_durations = Vec::new();
    let mut pause_positions = Vec::new();
    let mut current = 0i64;
    let mut has_phone = false;
    for (i, row) in rows.iter().enumerate() {
        if row.is_pause() {
            if !has_phone {
                return Err(Error::Validation(format!("empty segment before pause at row {i}")));
            }
            segment_durations.push(current);
            pause_positions.push(i);
            current = 0;
            has_phone = false;
        } else {
            current += row.dur;
            has_phone |= row.dur > 0 || row.token != super::vocab::EOW;
        }
    }
    if !has_phone {
        return Err(Error::Validation("empty final segment".into()));
    }
    segment_durations.push(current);
    if let Some(i) = segment_durations.iter().position(|&d| d <= 0) {
        return Err(Error::Validation(format!("segment {i} has zero duration")));
    }
    Ok(SegmentSpec {
        segment_durations,
        pause_positions,
    })
}

/// Perturbs each segment duration by gaussian noise with standard deviation
/// `sigma_seconds`, rounding to frames and clamping at one frame.
pub fn add_noise(spec: &SegmentSpec, sigma_seconds: f64, timing: &Timing, rng: &mut RngStream) -> SegmentSpec {
    if sigma_seconds <= 0.0 {
        return spec.clone();
    }
    let sigma_frames = sigma_seconds * timing.frames_per_second();
    let segment_durations = spec
        .segment_durations
        .iter()
        .map(|&d| ((d as f64 + rng.normal() * sigma_frames).round() as i64).max(1))
        .collect();
    SegmentSpec {
        segment_durations,
        pause_positions: spec.pause_positions.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::alignment::{mark_pauses, parse_alignment_line};

    #[test]
    fn single_segment_without_pauses() {
        let u = parse_alignment_line("x\tA:0.1 | B:0.05 C:0.02 |", 1, &Timing::default()).unwrap();
        let s = compute_segments(&u).unwrap();
        assert_eq!(s.segment_durations, vec![17]);
        assert!(s.pause_positions.is_empty());
    }

    #[test]
    fn adjacent_pauses_are_rejected() {
        let t = Timing::default();
        let mut u = mark_pauses(&parse_alignment_line("x\tA:0.1 | sil:0.5 B:0.1 |", 1, &t).unwrap(), &t);
        u.units.insert(1, crate::data::Unit::Pause { frames: 50 });
        u.word_boundaries = vec![0, 3];
        assert!(compute_segments(&u).is_err());
    }

    #[test]
    fn noise_sigma_zero_is_identity_and_clamped() {
        let spec = SegmentSpec {
            segment_durations: vec![3, 80],
            pause_positions: vec![5],
        };
        let mut rng = RngStream::new(1);
        assert_eq!(add_noise(&spec, 0.0, &Timing::default(), &mut rng), spec);
        for _ in 0..200 {
            let n = add_noise(&spec, 0.5, &Timing::default(), &mut rng);
            assert!(n.segment_durations.iter().all(|&d| d >= 1));
        }
    }

    #[test]
    fn noise_std_in_frames() {
        // sample statistics over 10k draws: 0.1 s at 10 ms frames is 10 frames
        let spec = SegmentSpec {
            segment_durations: vec![500],
            pause_positions: vec![],
        };
        let mut rng = RngStream::new(42);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| add_noise(&spec, 0.1, &Timing::default(), &mut rng).segment_durations[0] as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 10.0).abs() <= 0.5, "std {std}");
    }
}
