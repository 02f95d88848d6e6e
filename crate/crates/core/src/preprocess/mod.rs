//! Motion correction, isotropic resampling and intensity normalisation.

mod intensity;
mod registration;
mod resample;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use intensity::{cap_intensities, nearest_rank_index, zscore_normalize};
pub use registration::{register_inplane, warp_inplane, Affine2D, Registration};
pub use resample::resample_isotropic;
pub use simplex::{nelder_mead, SimplexOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    /// Pyramid levels, each halving the in-plane resolution.
    pub levels: usize,
    pub max_iters_per_level: usize,
    /// Relative objective spread across the simplex at which a level stops.
    pub convergence_tol: f64,
    /// Minimum Pearson correlation between the fixed and the registered
    /// moving image for the result to be trusted; below it the identity is
    /// returned with the warning flag set.
    pub min_correlation: f64,
    /// In-plane Gaussian blur (in voxels of each pyramid level) applied to
    /// both images before the metric is evaluated.
    pub smoothing_sigma: f64,
    /// At most this many evenly strided axial slices enter the metric.
    pub max_slices: usize,
    /// Relative reduction of the metric below which the identity is kept.
    pub min_improvement: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            levels: 3,
            max_iters_per_level: 200,
            convergence_tol: 1e-6,
            min_correlation: 0.2,
            smoothing_sigma: 1.0,
            max_slices: 32,
            min_improvement: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocParams {
    /// Isotropic output spacing in mm.
    pub target_spacing: f64,
    pub cap_low_pct: f64,
    pub cap_high_pct: f64,
    pub registration: RegistrationParams,
}

impl Default for PreprocParams {
    fn default() -> Self {
        PreprocParams {
            target_spacing: 1.0,
            cap_low_pct: 0.1,
            cap_high_pct: 99.9,
            registration: RegistrationParams::default(),
        }
    }
}

impl PreprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing > 0.0) || !self.target_spacing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "target_spacing must be > 0, got {}",
                self.target_spacing
            )));
        }
        check_percentiles(self.cap_low_pct, self.cap_high_pct)?;
        let r = &self.registration;
        if r.levels == 0 || r.max_iters_per_level == 0 {
            return Err(Error::InvalidParameter(
                "registration levels and max_iters_per_level must be >= 1".into(),
            ));
        }
        if !(r.convergence_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "registration convergence_tol must be > 0".into(),
            ));
        }
        if !(r.smoothing_sigma >= 0.0) || !r.smoothing_sigma.is_finite() || r.max_slices == 0 {
            return Err(Error::InvalidParameter(
                "registration smoothing_sigma must be >= 0 and max_slices >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&r.min_improvement) {
            return Err(Error::InvalidParameter(
                "registration min_improvement must lie in [0, 1)".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&r.min_correlation) {
            return Err(Error::InvalidParameter(
                "registration min_correlation must lie in [-1, 1]".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_percentiles(lo: f64, hi: f64) -> Result<()> {
    if !(0.0 <= lo && lo < hi && hi <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got lo={lo} hi={hi}"
        )));
    }
    Ok(())
}
