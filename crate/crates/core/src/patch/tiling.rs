use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume3D};

/// Patch layout over a (possibly padded) volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingPlan {
    /// Dims of the volume being tiled, before padding.
    pub dims: [usize; 3],
    pub patch_size: [usize; 3],
    /// `max(dim, patch)` per axis.
    pub padded_dims: [usize; 3],
    /// Zero voxels inserted before the data on each padded axis.
    pub pad_before: [usize; 3],
    /// Offsets along each axis, ascending.
    pub axis_offsets: [Vec<usize>; 3],
    /// Patch origins in padded coordinates, x varying fastest.
    pub offsets: Vec<[usize; 3]>,
}

fn axis_plan(dim: usize, patch: usize) -> (usize, usize, Vec<usize>) {
    if dim <= patch {
        return (patch, (patch - dim) / 2, vec![0]);
    }
    let count = dim.div_ceil(patch);
    let span = dim - patch;
    let gaps = count - 1;
    // round(k * span / gaps), halves rounded up, in integer arithmetic
    let offsets = (0..count)
        .map(|k| (2 * k * span + gaps) / (2 * gaps))
        .collect();
    (dim, 0, offsets)
}

/// Minimal cover of `dims` by `patch_size` patches with evenly spaced
/// offsets, the last one flush with the far edge. Axes shorter than the
/// patch are zero-padded symmetrically (the odd voxel goes after the data).
pub fn plan_tiling(dims: [usize; 3], patch_size: [usize; 3]) -> Result<TilingPlan> {
    if dims.contains(&0) || patch_size.contains(&0) {
        return Err(Error::Tiling(format!(
            "dims {dims:?} and patch size {patch_size:?} must be positive"
        )));
    }
    let axes: [(usize, usize, Vec<usize>); 3] =
        std::array::from_fn(|k| axis_plan(dims[k], patch_size[k]));
    let padded_dims = std::array::from_fn(|k| axes[k].0);
    let pad_before = std::array::from_fn(|k| axes[k].1);
    let axis_offsets: [Vec<usize>; 3] = std::array::from_fn(|k| axes[k].2.clone());
    let mut offsets = Vec::new();
    for &z in &axis_offsets[2] {
        for &y in &axis_offsets[1] {
            for &x in &axis_offsets[0] {
                offsets.push([x, y, z]);
            }
        }
    }
    Ok(TilingPlan {
        dims,
        patch_size,
        padded_dims,
        pad_before,
        axis_offsets,
        offsets,
    })
}

impl TilingPlan {
    /// Copies the patch at `offset` (padded coordinates) out of `vol`,
    /// reading zeros in the padding.
    pub fn extract(&self, vol: &Volume3D, offset: [usize; 3]) -> Result<Volume3D> {
        if vol.dims() != self.dims {
            return Err(Error::Tiling(format!(
                "volume dims {:?} do not match plan dims {:?}",
                vol.dims(),
                self.dims
            )));
        }
        let [px, py, pz] = self.patch_size;
        let src_at = |k: usize, p: usize| -> Option<usize> {
            (p + offset[k]).checked_sub(self.pad_before[k]).filter(|&i| i < self.dims[k])
        };
        let g = vol.geometry();
        let mut out = Vec::with_capacity(px * py * pz);
        for z in 0..pz {
            for y in 0..py {
                for x in 0..px {
                    let v = match (src_at(0, x), src_at(1, y), src_at(2, z)) {
                        (Some(i), Some(j), Some(k)) => vol.data()[g.index(i, j, k)],
                        _ => 0.0,
                    };
                    out.push(v);
                }
            }
        }
        let origin = std::array::from_fn(|k| {
            g.origin[k] + (offset[k] as f64 - self.pad_before[k] as f64) * g.spacing[k]
        });
        Volume3D::new(Geometry::new(self.patch_size, g.spacing, origin)?, out)
    }
}

/// Reassembles patch predictions into a volume on `geometry`: every voxel is
/// the mean of all patches covering it, and the padding is cropped away.
///
/// Each planned offset must appear exactly once. The result does not depend
/// on the order of `predictions`.
pub fn stitch(
    predictions: &[([usize; 3], Volume3D)],
    plan: &TilingPlan,
    geometry: &Geometry,
) -> Result<Volume3D> {
    if geometry.dims != plan.dims {
        return Err(Error::Tiling(format!(
            "output dims {:?} do not match plan dims {:?}",
            geometry.dims, plan.dims
        )));
    }
    let mut sorted: Vec<&([usize; 3], Volume3D)> = predictions.iter().collect();
    sorted.sort_by_key(|(o, _)| [o[2], o[1], o[0]]);
    let got: Vec<[usize; 3]> = sorted.iter().map(|(o, _)| *o).collect();
    if got != plan.offsets {
        let missing: Vec<_> = plan.offsets.iter().filter(|o| !got.contains(o)).collect();
        let extra: Vec<_> = got
            .iter()
            .enumerate()
            .filter(|(i, o)| !plan.offsets.contains(o) || (*i > 0 && got[i - 1] == **o))
            .map(|(_, o)| o)
            .collect();
        return Err(Error::Tiling(format!(
            "predictions do not match the plan: missing {missing:?}, unexpected or repeated {extra:?}"
        )));
    }

    let [nx, ny, nz] = plan.padded_dims;
    let mut sum = vec![0.0f64; nx * ny * nz];
    let mut count = vec![0u32; nx * ny * nz];
    let [px, py, pz] = plan.patch_size;
    for (offset, patch) in sorted {
        if patch.dims() != plan.patch_size {
            return Err(Error::Tiling(format!(
                "patch at {offset:?} has dims {:?}, expected {:?}",
                patch.dims(),
                plan.patch_size
            )));
        }
        let data = patch.data();
        for z in 0..pz {
            for y in 0..py {
                let row = nx * (offset[1] + y + ny * (offset[2] + z)) + offset[0];
                let src = px * (y + py * z);
                for x in 0..px {
                    sum[row + x] += data[src + x] as f64;
                    count[row + x] += 1;
                }
            }
        }
    }

    let [dx, dy, dz] = plan.dims;
    let [bx, by, bz] = plan.pad_before;
    let mut out = Vec::with_capacity(dx * dy * dz);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let i = (x + bx) + nx * ((y + by) + ny * (z + bz));
                out.push((sum[i] / count[i] as f64) as f32);
            }
        }
    }
    Volume3D::new(geometry.clone(), out)
}
