use crate::error::{Error, Result};
use crate::volume::Volume3D;

use super::check_percentiles;

/// Zero-based index of the nearest-rank `pct` percentile in a sorted sample
/// of length `n` (`n >= 1`): rank `ceil(pct/100 * n)` clamped to `[1, n]`.
///
/// A relative slack of 1e-9 absorbs decimal percentiles that are not exact
/// in binary (`99.9 / 100 * 1000` must give rank 999, not 1000).
pub fn nearest_rank_index(n: usize, pct: f64) -> usize {
    assert!(n > 0, "nearest rank of an empty sample");
    let x = pct / 100.0 * n as f64;
    let rank = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (rank.max(1.0) as usize).min(n) - 1
}

/// Clamps every voxel to the `[lo_pct, hi_pct]` nearest-rank percentiles
/// computed over the whole volume.
pub fn cap_intensities(vol: &Volume3D, lo_pct: f64, hi_pct: f64) -> Result<Volume3D> {
    check_percentiles(lo_pct, hi_pct)?;
    let mut sorted = vol.data().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let lo = sorted[nearest_rank_index(sorted.len(), lo_pct)];
    let hi = sorted[nearest_rank_index(sorted.len(), hi_pct)];
    vol.map(|v| v.clamp(lo, hi))
}

/// `(v - mean) / std` with the population standard deviation.
pub fn zscore_normalize(vol: &Volume3D) -> Result<Volume3D> {
    let n = vol.data().len() as f64;
    let mean = vol.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vol
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= 1e-12 * mean.abs() {
        return Err(Error::DegenerateVolume);
    }
    vol.map(|v| ((v as f64 - mean) / std) as f32)
}
