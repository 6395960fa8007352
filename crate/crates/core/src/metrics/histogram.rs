//! Per-channel color histograms, 1-D Earth Mover's Distance and the Color
//! Distribution Difference (CDD) metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::Rgb;

/// Default histogram resolution: one bin per 8-bit level.
pub const DEFAULT_BINS: usize = 256;

/// Reported CDD values are scaled by this factor.
pub const REPORT_SCALE: f64 = 1000.0;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Normalized `B`-bin histogram for each of R, G and B.
///
/// Bin `k` covers `[k/B, (k+1)/B)`; the last bin is closed so that 1.0 lands
/// in it. A histogram built from zero pixels has all-zero channels and is
/// flagged by [`ColorHistogram::is_empty`]; distance functions reject it.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    bins: usize,
    channels: [Vec<f64>; 3],
    count: usize,
}

impl ColorHistogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    /// Number of pixels tallied.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[inline]
pub(crate) fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn histogram(colors: &[Rgb], bins: usize) -> Result<ColorHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    let mut counts = [vec![0u64; bins], vec![0u64; bins], vec![0u64; bins]];
    for px in colors {
        for c in 0..3 {
            counts[c][bin_index(px[c], bins)] += 1;
        }
    }
    let n = colors.len();
    let channels = counts.map(|ch| {
        if n == 0 {
            vec![0.0; bins]
        } else {
            ch.into_iter().map(|k| k as f64 / n as f64).collect()
        }
    });
    Ok(ColorHistogram {
        bins,
        channels,
        count: n,
    })
}

fn check_normalized(h: &[f64]) -> Result<()> {
    let sum: f64 = h.iter().sum();
    if h.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized { sum });
    }
    Ok(())
}

/// EMD between two normalized histograms on the bin grid `k / B`.
///
/// In one dimension the optimal transport cost equals the L1 distance
/// between the cumulative distributions, so this is
/// `(1/B) * sum_k |CDF_a(k) - CDF_b(k)|`.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "emd_1d needs equal nonzero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_normalized(a)?;
    check_normalized(b)?;
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        acc += (ca - cb).abs();
    }
    Ok(acc / a.len() as f64)
}

/// Mean of the per-channel 1-D EMDs.
pub fn channel_emd(a: &ColorHistogram, b: &ColorHistogram) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("histogram built from zero pixels"));
    }
    if a.bins != b.bins {
        return Err(Error::InvalidConfig(format!(
            "histogram bin counts differ ({} vs {})",
            a.bins, b.bins
        )));
    }
    let mut sum = 0.0;
    for c in 0..3 {
        sum += emd_1d(&a.channels[c], &b.channels[c])?;
    }
    Ok(sum / 3.0)
}

/// Color Distribution Difference between the shadow-side and
/// non-shadow-side pixels of an edge. Unscaled; multiply by
/// [`REPORT_SCALE`] for reporting.
pub fn cdd(shadow_side: &[Rgb], lit_side: &[Rgb], bins: usize) -> Result<f64> {
    if shadow_side.is_empty() || lit_side.is_empty() {
        return Err(Error::Empty("CDD needs pixels on both sides of the edge"));
    }
    channel_emd(&histogram(shadow_side, bins)?, &histogram(lit_side, bins)?)
}

/// Mean and population variance of a column of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CddAggregate {
    pub mean: f64,
    pub variance: f64,
}

pub fn cdd_aggregate(values: &[f64]) -> Result<CddAggregate> {
    if values.is_empty() {
        return Err(Error::Empty("no CDD values to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(CddAggregate { mean, variance })
}
