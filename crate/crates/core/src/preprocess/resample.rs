use crate::error::{Error, Result};
use crate::volume::{Geometry, Orientation, Volume3D};

/// Linear interpolation weights of one output axis: `(i0, i1, w)` so that
/// the sample is `(1 - w) * in[i0] + w * in[i1]`.
fn axis_weights(n_in: usize, s_in: f64, n_out: usize, t: f64) -> Vec<(usize, usize, f64)> {
    // Both grids share the outer edge of voxel 0, so output centre j sits at
    // input index (j*t + t/2 - s/2) / s.
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|j| {
            let idx = ((j as f64 * t + 0.5 * (t - s_in)) / s_in).clamp(0.0, last);
            let i0 = idx.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, idx - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling to `target_spacing` mm in every direction.
///
/// Output dims are `round(n * s / t)` (at least 1) and the output grid
/// covers the same physical extent as the input. Samples falling outside the
/// input voxel centres use the nearest edge value.
pub fn resample_isotropic(vol: &Volume3D, target_spacing: f64) -> Result<Volume3D> {
    if !(target_spacing > 0.0) || !target_spacing.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target spacing must be > 0, got {target_spacing}"
        )));
    }
    let g = vol.geometry();
    let t = target_spacing;
    let out_dims: [usize; 3] =
        std::array::from_fn(|k| ((g.dims[k] as f64 * g.spacing[k] / t).round() as usize).max(1));
    let wx = axis_weights(g.dims[0], g.spacing[0], out_dims[0], t);
    let wy = axis_weights(g.dims[1], g.spacing[1], out_dims[1], t);
    let wz = axis_weights(g.dims[2], g.spacing[2], out_dims[2], t);

    let src = vol.data();
    let at = |x: usize, y: usize, z: usize| src[g.index(x, y, z)] as f64;
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &(z0, z1, fz) in &wz {
        for &(y0, y1, fy) in &wy {
            for &(x0, x1, fx) in &wx {
                let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }

    let origin: [f64; 3] = std::array::from_fn(|k| g.origin[k] + 0.5 * (t - g.spacing[k]));
    let geometry = Geometry {
        dims: out_dims,
        spacing: [t; 3],
        origin,
        orientation: g.orientation.map(|o| rescale_orientation(o, g.spacing, t)),
    };
    Volume3D::new(geometry, out)
}

/// Keeps the sform consistent with the new grid: columns scale by `t / s`,
/// and the translation moves to the new voxel-0 centre.
fn rescale_orientation(o: Orientation, spacing: [f64; 3], t: f64) -> Orientation {
    let fix = |row: [f32; 4]| -> [f32; 4] {
        let mut out = row;
        let mut shift = 0.0f64;
        for k in 0..3 {
            let col = row[k] as f64;
            out[k] = (col * t / spacing[k]) as f32;
            shift += col * (t - spacing[k]) / (2.0 * spacing[k]);
        }
        out[3] = (row[3] as f64 + shift) as f32;
        out
    };
    Orientation {
        srow_x: fix(o.srow_x),
        srow_y: fix(o.srow_y),
        srow_z: fix(o.srow_z),
        ..o
    }
}
