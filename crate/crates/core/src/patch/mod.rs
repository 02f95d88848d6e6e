//! Fully automated segmentation: patch tiling, a pluggable model backend per
//! stage, and overlap-averaged reconstruction.

mod backend;
mod tiling;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::{cap_intensities, zscore_normalize, PreprocParams};
use crate::volume::{Mask3D, Volume3D};

pub use backend::{
    BackendSpec, ConstantBackend, ExternalProcessBackend, IdentityBackend, ModelBackend,
    ThresholdBackend,
};
pub use tiling::{plan_tiling, stitch, TilingPlan};

pub const DEFAULT_PATCH_SIZE: [usize; 3] = [96, 96, 96];

/// Probability maps and their masks (`p > 0.5`); the FGT mask is further
/// restricted to the breast mask.
#[derive(Debug, Clone)]
pub struct DlSegmentation {
    pub breast_prob: Volume3D,
    pub fgt_prob: Volume3D,
    pub vessel_prob: Volume3D,
    pub breast_mask: Mask3D,
    pub fgt_mask: Mask3D,
    pub vessel_mask: Mask3D,
}

fn check_outputs(outputs: &[Volume3D], patch: [usize; 3]) -> std::result::Result<(), String> {
    if outputs.is_empty() {
        return Err("backend produced no output channels".into());
    }
    for (k, ch) in outputs.iter().enumerate() {
        if ch.dims() != patch {
            return Err(format!("output channel {k} has dims {:?}, expected {patch:?}", ch.dims()));
        }
        if let Some(v) = ch.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("output channel {k} has value {v} outside [0, 1]"));
        }
    }
    Ok(())
}

/// Tiles `channels` with `plan`, runs `backend` on every patch (in
/// parallel) and stitches each output channel back to full size.
pub fn run_tiled(
    backend: &dyn ModelBackend,
    channels: &[Volume3D],
    plan: &TilingPlan,
) -> Result<Vec<Volume3D>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidParameter("no input channels".into()))?;
    for ch in &channels[1..] {
        first.geometry().check_aligned(ch.geometry(), "input channels")?;
    }
    let per_patch: Vec<([usize; 3], Vec<Volume3D>)> = plan
        .offsets
        .par_iter()
        .map(|&offset| {
            let inputs = channels
                .iter()
                .map(|c| plan.extract(c, offset))
                .collect::<Result<Vec<_>>>()?;
            let outputs = backend.predict(&inputs).map_err(|e| Error::Backend {
                offset,
                message: e.to_string(),
            })?;
            check_outputs(&outputs, plan.patch_size)
                .map_err(|message| Error::Backend { offset, message })?;
            Ok((offset, outputs))
        })
        .collect::<Result<_>>()?;

    let n_out = per_patch[0].1.len();
    if let Some((offset, o)) = per_patch.iter().find(|(_, o)| o.len() != n_out) {
        return Err(Error::Backend {
            offset: *offset,
            message: format!("{} output channels, other patches gave {n_out}", o.len()),
        });
    }
    (0..n_out)
        .map(|k| {
            let preds: Vec<_> = per_patch.iter().map(|(o, outs)| (*o, outs[k].clone())).collect();
            stitch(&preds, plan, first.geometry())
        })
        .collect()
}

/// Two-stage segmentation of a pre-contrast volume.
///
/// The volume is capped and z-scored, the breast backend sees
/// `[normalized]`, and the FGT/vessel backend sees
/// `[normalized, breast probability]` and must return `[fgt, vessel]`.
pub fn segment_dl(
    pre: &Volume3D,
    breast_backend: &dyn ModelBackend,
    fgt_vessel_backend: &dyn ModelBackend,
    params: &PreprocParams,
    patch_size: [usize; 3],
) -> Result<DlSegmentation> {
    let capped = cap_intensities(pre, params.cap_low_pct, params.cap_high_pct)?;
    let normalized = zscore_normalize(&capped)?;
    let plan = plan_tiling(pre.dims(), patch_size)?;

    let breast_prob = run_tiled(breast_backend, std::slice::from_ref(&normalized), &plan)?
        .swap_remove(0);
    let breast_mask = Mask3D::from_predicate(&breast_prob, |p| p > 0.5);

    let mut fv = run_tiled(fgt_vessel_backend, &[normalized, breast_prob.clone()], &plan)?;
    if fv.len() < 2 {
        return Err(Error::Backend {
            offset: [0, 0, 0],
            message: format!(
                "FGT/vessel backend must return 2 channels, got {}",
                fv.len()
            ),
        });
    }
    let vessel_prob = fv.swap_remove(1);
    let fgt_prob = fv.swap_remove(0);
    let fgt_mask = Mask3D::from_predicate(&fgt_prob, |p| p > 0.5).and(&breast_mask)?;
    let vessel_mask = Mask3D::from_predicate(&vessel_prob, |p| p > 0.5);
    Ok(DlSegmentation {
        breast_prob,
        fgt_prob,
        vessel_prob,
        breast_mask,
        fgt_mask,
        vessel_mask,
    })
}
