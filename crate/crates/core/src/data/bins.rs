use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-frequency duration bins. A duration `d` falls into bin
/// `#{b in boundaries : b < d}`, so values equal to a boundary go to the
/// lower bin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinBoundaries {
    pub n_bins: usize,
    pub boundaries: Vec<i64>,
}

impl BinBoundaries {
    pub fn bin_of(&self, duration: i64) -> usize {
        self.boundaries.partition_point(|&b| b < duration)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.n_bins)?;
        for b in &self.boundaries {
            writeln!(w, "{b}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let v: i64 = line.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("expected integer, got {line:?}"),
            })?;
            values.push(v);
        }
        let Some((&n, rest)) = values.split_first() else {
            return Err(Error::Parse {
                line: 1,
                message: "empty bins file".into(),
            });
        };
        Ok(BinBoundaries {
            n_bins: n as usize,
            boundaries: rest.to_vec(),
        })
    }
}

/// Empirical-quantile boundaries for `n_bins` bins.
///
/// Boundary `k` is the value at sorted position `ceil(k * N / n_bins) - 1`.
/// Repeated boundary values (heavy ties) are collapsed, so fewer than
/// `n_bins - 1` boundaries may result.
pub fn learn_bins(durations: &[i64], n_bins: usize) -> Result<BinBoundaries> {
    if durations.is_empty() {
        return Err(Error::Validation("cannot learn bins from no durations".into()));
    }
    if n_bins == 0 {
        return Err(Error::Validation("n_bins must be at least 1".into()));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut boundaries: Vec<i64> = Vec::with_capacity(n_bins.saturating_sub(1));
    for k in 1..n_bins {
        let pos = (k * n).div_ceil(n_bins).max(1) - 1;
        let b = sorted[pos.min(n - 1)];
        if boundaries.last().is_none_or(|&last| b > last) && b < sorted[n - 1] {
            boundaries.push(b);
        }
    }
    Ok(BinBoundaries { n_bins, boundaries })
}
