//! Semi-automated FGT segmentation: a thresholded breast mask, two-cluster
//! fuzzy c-means on the masked pre-contrast intensities, and a cut on the
//! bright-cluster membership.

mod breast_mask;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::nearest_rank_index;
use crate::volume::{Mask3D, Volume3D};

pub use breast_mask::{
    keep_largest_components, otsu_threshold, threshold_breast_mask, AutoThreshold,
    EllipseExclusion, IntensityThreshold,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcmParams {
    /// Always 2: fat (dark) and FGT with vessels (bright).
    pub clusters: usize,
    /// Fuzziness exponent `m`.
    pub fuzziness: f64,
    pub max_iters: usize,
    /// Stop once no membership changes by more than this between iterations.
    pub tol: f64,
    pub prob_threshold: f64,
    /// Reserved; centroid initialisation is deterministic.
    pub seed: u64,
}

impl Default for FcmParams {
    fn default() -> Self {
        FcmParams {
            clusters: 2,
            fuzziness: 2.0,
            max_iters: 200,
            tol: 1e-5,
            prob_threshold: 0.5,
            seed: 0,
        }
    }
}

impl FcmParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters != 2 {
            return Err(Error::InvalidParameter(format!(
                "FCM uses exactly 2 clusters, got {}",
                self.clusters
            )));
        }
        if !(self.fuzziness > 1.0) || !self.fuzziness.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "fuzziness must be > 1, got {}",
                self.fuzziness
            )));
        }
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prob_threshold must lie in (0, 1), got {}",
                self.prob_threshold
            )));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(
                "max_iters must be >= 1 and tol > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FcmResult {
    /// Bright-cluster membership; zero outside the breast mask.
    pub membership: Volume3D,
    /// `(fat, fgt)` centroids, `fat < fgt`.
    pub centroids: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
    /// Final value of `J_m = sum_i sum_k u_ik^m (x_i - c_k)^2`.
    pub objective: f64,
    /// `J_m` after each centroid update.
    pub objective_history: Vec<f64>,
}

/// Memberships `[u_dark, u_bright]` of intensity `x` given centroids
/// `[c_dark, c_bright]`; each is computed from its own distance ratio.
/// A point sitting exactly on a centroid belongs wholly to that cluster.
pub fn membership_pair(x: f64, centroids: [f64; 2], m: f64) -> [f64; 2] {
    let d0 = (x - centroids[0]) * (x - centroids[0]);
    let d1 = (x - centroids[1]) * (x - centroids[1]);
    match (d0 == 0.0, d1 == 0.0) {
        (true, true) => [0.5, 0.5],
        (true, false) => [1.0, 0.0],
        (false, true) => [0.0, 1.0],
        (false, false) => {
            let e = 1.0 / (m - 1.0);
            [
                1.0 / (1.0 + (d0 / d1).powf(e)),
                1.0 / (1.0 + (d1 / d0).powf(e)),
            ]
        }
    }
}

fn bright_membership(x: f64, c: [f64; 2], m: f64) -> f64 {
    membership_pair(x, c, m)[1]
}

fn update_centroids(values: &[f64], bright: &[f64], m: f64) -> [f64; 2] {
    let (mut num, mut den) = ([0.0f64; 2], [0.0f64; 2]);
    for (&x, &u1) in values.iter().zip(bright) {
        let w = [(1.0 - u1).powf(m), u1.powf(m)];
        for k in 0..2 {
            num[k] += w[k] * x;
            den[k] += w[k];
        }
    }
    [num[0] / den[0], num[1] / den[1]]
}

fn objective(values: &[f64], bright: &[f64], c: [f64; 2], m: f64) -> f64 {
    values
        .iter()
        .zip(bright)
        .map(|(&x, &u1)| {
            (1.0 - u1).powf(m) * (x - c[0]) * (x - c[0]) + u1.powf(m) * (x - c[1]) * (x - c[1])
        })
        .sum()
}

/// Two-cluster fuzzy c-means over the voxels of `breast`.
///
/// Centroids start at the 5th and 95th nearest-rank percentiles of the
/// masked intensities (falling back to min/max if those coincide).
pub fn fcm_cluster(pre: &Volume3D, breast: &Mask3D, params: &FcmParams) -> Result<FcmResult> {
    params.validate()?;
    pre.geometry().check_aligned(breast.geometry(), "FCM volume vs breast mask")?;
    let m = params.fuzziness;

    let index: Vec<usize> = breast
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| (b != 0).then_some(i))
        .collect();
    if index.is_empty() {
        return Err(Error::EmptyMask("breast mask is empty".into()));
    }
    let values: Vec<f64> = index.iter().map(|&i| pre.data()[i] as f64).collect();

    let mut sorted = values.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::DegenerateInput(format!(
            "all {} masked voxels have intensity {min}",
            values.len()
        )));
    }
    let mut c = [
        sorted[nearest_rank_index(sorted.len(), 5.0)],
        sorted[nearest_rank_index(sorted.len(), 95.0)],
    ];
    if c[0] == c[1] {
        c = [min, max];
    }

    let mut bright: Vec<f64> = values.iter().map(|&x| bright_membership(x, c, m)).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        c = update_centroids(&values, &bright, m);
        let j = objective(&values, &bright, c, m);
        debug_assert!(
            history.last().map_or(true, |&prev: &f64| j <= prev * (1.0 + 1e-12) + 1e-12),
            "J_m increased: {:?} -> {j}",
            history.last()
        );
        history.push(j);

        let next: Vec<f64> = values.iter().map(|&x| bright_membership(x, c, m)).collect();
        let delta = next
            .iter()
            .zip(&bright)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        bright = next;
        if delta < params.tol {
            converged = true;
            break;
        }
    }

    if c[0] > c[1] {
        c.swap(0, 1);
        for u in &mut bright {
            *u = 1.0 - *u;
        }
    }
    let final_objective = objective(&values, &bright, c, m);

    let mut membership = vec![0.0f32; pre.data().len()];
    for (&i, &u) in index.iter().zip(&bright) {
        membership[i] = u as f32;
    }
    Ok(FcmResult {
        membership: Volume3D::new(pre.geometry().clone(), membership)?,
        centroids: c,
        iterations,
        converged,
        objective: final_objective,
        objective_history: history,
    })
}

/// FGT mask: voxels whose bright-cluster membership strictly exceeds
/// `prob_threshold`.
pub fn apply_probability_threshold(result: &FcmResult, prob_threshold: f64) -> Mask3D {
    Mask3D::from_predicate(&result.membership, |u| u as f64 > prob_threshold)
}
