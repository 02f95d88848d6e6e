//! In-plane affine motion correction between DCE timepoints.
//!
//! A single 2D affine transform is estimated per volume pair and applied to
//! every axial slice. The metric is the mean squared intensity difference
//! over voxels whose mapped position falls inside the moving grid, after an
//! in-plane Gaussian blur and on a strided subset of slices, minimised
//! coarse-to-fine over an in-plane averaging pyramid with a Nelder-Mead
//! simplex at each level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

use super::simplex::nelder_mead;
use super::PreprocParams;

/// Maps in-plane coordinates of the moving image into the fixed image:
/// `(u, v) -> (a11 u + a12 v + tx, a21 u + a22 v + ty)`.
///
/// Coordinates are in mm, measured from the centre of the in-plane grid
/// (`u = (x - (nx - 1) / 2) * sx`), so the linear part acts about the image
/// centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2D {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2D {
    pub const IDENTITY: Affine2D = Affine2D {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Affine2D {
        Affine2D { tx, ty, ..Self::IDENTITY }
    }

    #[inline]
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.a11 * u + self.a12 * v + self.tx,
            self.a21 * u + self.a22 * v + self.ty,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn inverse(&self) -> Option<Affine2D> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (b11, b12, b21, b22) = (self.a22 / det, -self.a12 / det, -self.a21 / det, self.a11 / det);
        Some(Affine2D {
            a11: b11,
            a12: b12,
            a21: b21,
            a22: b22,
            tx: -(b11 * self.tx + b12 * self.ty),
            ty: -(b21 * self.tx + b22 * self.ty),
        })
    }

    /// Largest absolute difference of any parameter from the identity.
    pub fn deviation_from_identity(&self) -> f64 {
        [
            self.a11 - 1.0,
            self.a12,
            self.a21,
            self.a22 - 1.0,
            self.tx,
            self.ty,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: Affine2D,
    /// The moving volume resampled into the fixed frame.
    pub resampled: Volume3D,
    /// Set when the optimiser could not improve on the identity by more
    /// than `min_improvement`, or the aligned pair shows no registerable
    /// structure; `transform` is then the identity.
    pub identity_fallback: bool,
    pub objective_identity: f64,
    pub objective: f64,
    pub correlation: f64,
}

/// One pyramid level: pooled fixed/moving slices plus the index-to-mm map.
struct Level {
    nx: usize,
    ny: usize,
    nz: usize,
    fixed: Vec<f32>,
    moving: Vec<f32>,
    u0: f64,
    du: f64,
    v0: f64,
    dv: f64,
}

impl Level {
    fn build(fixed: &Volume3D, moving: &Volume3D, factor: usize, slices: &[usize], sigma: f64) -> Level {
        let g = fixed.geometry();
        let [nx0, ny0, _] = g.dims;
        let (nx, ny, nz) = (nx0 / factor, ny0 / factor, slices.len());
        let pool = |vol: &Volume3D| -> Vec<f32> {
            let src = vol.data();
            let norm = 1.0 / (factor * factor) as f64;
            let mut out = Vec::with_capacity(nx * ny * nz);
            for &z in slices {
                for y in 0..ny {
                    for x in 0..nx {
                        let mut acc = 0.0f64;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                acc += src[g.index(x * factor + dx, y * factor + dy, z)] as f64;
                            }
                        }
                        out.push((acc * norm) as f32);
                    }
                }
            }
            out
        };
        let f = factor as f64;
        let [sx, sy, _] = g.spacing;
        Level {
            nx,
            ny,
            nz,
            fixed: gaussian_inplane(pool(fixed), nx, ny, sigma),
            moving: gaussian_inplane(pool(moving), nx, ny, sigma),
            u0: (0.5 * (f - 1.0) - 0.5 * (nx0 as f64 - 1.0)) * sx,
            du: f * sx,
            v0: (0.5 * (f - 1.0) - 0.5 * (ny0 as f64 - 1.0)) * sy,
            dv: f * sy,
        }
    }

    /// Visits every fixed voxel whose pre-image under `t` lies inside the
    /// moving grid, passing `(fixed value, interpolated moving value)`.
    fn for_each_overlap(&self, t: &Affine2D, mut visit: impl FnMut(f32, f64)) {
        let Some(inv) = t.inverse() else { return };
        let (nx, ny) = (self.nx, self.ny);
        let (xmax, ymax) = ((nx - 1) as f64, (ny - 1) as f64);
        // moving index as an affine function of the fixed index
        let to_index = |x: f64, y: f64| {
            let (qu, qv) = inv.apply(self.u0 + x * self.du, self.v0 + y * self.dv);
            ((qu - self.u0) / self.du, (qv - self.v0) / self.dv)
        };
        let (ox, oy) = to_index(0.0, 0.0);
        let (ax, ay) = to_index(1.0, 0.0);
        let (bx, by) = to_index(0.0, 1.0);
        let (step_x, step_y) = ((ax - ox, ay - oy), (bx - ox, by - oy));
        let slice = nx * ny;
        for z in 0..self.nz {
            let fixed = &self.fixed[z * slice..(z + 1) * slice];
            let moving = &self.moving[z * slice..(z + 1) * slice];
            for y in 0..ny {
                let (mut qx, mut qy) = (ox + step_y.0 * y as f64, oy + step_y.1 * y as f64);
                for x in 0..nx {
                    if qx >= 0.0 && qx <= xmax && qy >= 0.0 && qy <= ymax {
                        let m = bilinear(moving, nx, ny, qx, qy);
                        visit(fixed[x + nx * y], m);
                    }
                    qx += step_x.0;
                    qy += step_x.1;
                }
            }
        }
    }

    fn msd(&self, t: &Affine2D) -> f64 {
        let total = self.nx * self.ny * self.nz;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        self.for_each_overlap(t, |f, m| {
            let d = f as f64 - m;
            sum += d * d;
            count += 1;
        });
        // require a quarter of the fixed grid to overlap
        if count == 0 || count * 4 < total {
            return f64::INFINITY;
        }
        sum / count as f64
    }

    fn correlation(&self, t: &Affine2D) -> f64 {
        let (mut n, mut sf, mut sm, mut sff, mut smm, mut sfm) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
        self.for_each_overlap(t, |f, m| {
            let f = f as f64;
            n += 1.0;
            sf += f;
            sm += m;
            sff += f * f;
            smm += m * m;
            sfm += f * m;
        });
        if n < 2.0 {
            return 0.0;
        }
        let cov = sfm / n - (sf / n) * (sm / n);
        let vf = sff / n - (sf / n).powi(2);
        let vm = smm / n - (sm / n).powi(2);
        if vf <= 0.0 || vm <= 0.0 {
            return 0.0;
        }
        cov / (vf * vm).sqrt()
    }
}

/// Separable Gaussian blur within each slice, edges clamped.
fn gaussian_inplane(mut data: Vec<f32>, nx: usize, ny: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let mut line = Vec::new();
    for plane in data.chunks_mut(nx * ny) {
        for y in 0..ny {
            line.clear();
            line.extend_from_slice(&plane[y * nx..(y + 1) * nx]);
            for x in 0..nx {
                let mut acc = 0.0f64;
                for (k, w) in kernel.iter().enumerate() {
                    let xi = (x as i64 + k as i64 - radius).clamp(0, nx as i64 - 1) as usize;
                    acc += w * line[xi] as f64;
                }
                plane[x + nx * y] = acc as f32;
            }
        }
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| plane[x + nx * y]));
            for y in 0..ny {
                let mut acc = 0.0f64;
                for (k, w) in kernel.iter().enumerate() {
                    let yi = (y as i64 + k as i64 - radius).clamp(0, ny as i64 - 1) as usize;
                    acc += w * line[yi] as f64;
                }
                plane[x + nx * y] = acc as f32;
            }
        }
    }
    data
}

#[inline]
fn bilinear(slice: &[f32], nx: usize, ny: usize, qx: f64, qy: f64) -> f64 {
    let x0 = (qx.floor() as usize).min(nx - 1);
    let y0 = (qy.floor() as usize).min(ny - 1);
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let fx = qx - x0 as f64;
    let fy = qy - y0 as f64;
    let at = |x: usize, y: usize| slice[x + nx * y] as f64;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `moving` into the fixed frame under `t` (moving -> fixed),
/// slice by slice, clamping sample positions to the grid.
pub fn warp_inplane(moving: &Volume3D, t: &Affine2D) -> Result<Volume3D> {
    let inv = t.inverse().ok_or_else(|| {
        Error::InvalidParameter("affine transform is singular".into())
    })?;
    let g = moving.geometry();
    let [nx, ny, nz] = g.dims;
    let [sx, sy, _] = g.spacing;
    let (cx, cy) = (0.5 * (nx as f64 - 1.0), 0.5 * (ny as f64 - 1.0));
    let src = moving.data();
    let slice = nx * ny;
    let mut out = Vec::with_capacity(src.len());
    for z in 0..nz {
        let plane = &src[z * slice..(z + 1) * slice];
        for y in 0..ny {
            for x in 0..nx {
                let (qu, qv) = inv.apply((x as f64 - cx) * sx, (y as f64 - cy) * sy);
                let qx = (qu / sx + cx).clamp(0.0, (nx - 1) as f64);
                let qy = (qv / sy + cy).clamp(0.0, (ny - 1) as f64);
                out.push(bilinear(plane, nx, ny, qx, qy) as f32);
            }
        }
    }
    Volume3D::new(g.clone(), out)
}

const MIN_LEVEL_EXTENT: usize = 8;

/// Estimates the in-plane affine aligning `moving` to `fixed`.
pub fn register_inplane(
    moving: &Volume3D,
    fixed: &Volume3D,
    params: &PreprocParams,
) -> Result<Registration> {
    fixed
        .geometry()
        .check_same_frame(moving.geometry(), "registration moving vs fixed")?;
    let rp = &params.registration;
    let g = fixed.geometry();
    let [nx, ny, nz] = g.dims;
    let stride = nz.div_ceil(rp.max_slices);
    let slices: Vec<usize> = (0..nz).step_by(stride).collect();

    let mut factors = vec![1usize];
    for level in 1..rp.levels {
        let f = 1usize << level;
        if nx / f < MIN_LEVEL_EXTENT || ny / f < MIN_LEVEL_EXTENT {
            break;
        }
        factors.push(f);
    }
    let levels: Vec<Level> = factors.iter().map(|&f| Level::build(fixed, moving, f, &slices, rp.smoothing_sigma)).collect();
    let finest = &levels[0];

    // Linear parameters are optimised scaled by the in-plane half-extent so
    // that a unit change moves the image edge by about 1 mm.
    let radius = 0.5 * (nx as f64 * g.spacing[0]).max(ny as f64 * g.spacing[1]);
    let to_affine = |p: &[f64]| Affine2D {
        a11: 1.0 + p[0] / radius,
        a12: p[1] / radius,
        a21: p[2] / radius,
        a22: 1.0 + p[3] / radius,
        tx: p[4],
        ty: p[5],
    };
    let objective = |level: &Level, p: &[f64]| {
        let t = to_affine(p);
        let det = t.determinant();
        if !(0.2..=5.0).contains(&det) {
            return f64::INFINITY;
        }
        level.msd(&t)
    };

    let objective_identity = finest.msd(&Affine2D::IDENTITY);
    let identity_result = |fallback: bool| -> Result<Registration> {
        Ok(Registration {
            transform: Affine2D::IDENTITY,
            resampled: moving.clone(),
            identity_fallback: fallback,
            objective_identity,
            objective: objective_identity,
            correlation: finest.correlation(&Affine2D::IDENTITY),
        })
    };
    if objective_identity == 0.0 {
        return identity_result(false);
    }

    let mut params_now = vec![0.0; 6];
    for level in levels.iter().rev() {
        let step = 2.0 * level.du.min(level.dv);
        let out = nelder_mead(
            |p| objective(level, p),
            &params_now,
            &[step; 6],
            rp.max_iters_per_level,
            rp.convergence_tol,
        );
        if out.value.is_finite() {
            params_now = out.best;
        }
        log::debug!(
            "registration level du={} iters={} converged={} msd={}",
            level.du,
            out.iterations,
            out.converged,
            out.value
        );
    }

    let transform = to_affine(&params_now);
    let objective_final = objective(finest, &params_now);
    let correlation = finest.correlation(&transform);
    let gain = (objective_identity - objective_final) / objective_identity;
    if !(gain > rp.min_improvement) || correlation < rp.min_correlation {
        log::warn!(
            "registration did not find a trustworthy improvement (msd {objective_final} vs identity {objective_identity}, r = {correlation:.3}); using identity"
        );
        return identity_result(true);
    }
    Ok(Registration {
        transform,
        resampled: warp_inplane(moving, &transform)?,
        identity_fallback: false,
        objective_identity,
        objective: objective_final,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use rand::{Rng, SeedableRng};

    fn blob(dims: [usize; 3], centre: (f64, f64), sigma: f64) -> Volume3D {
        let g = Geometry::unit(dims).unwrap();
        let (cx, cy) = (0.5 * (dims[0] as f64 - 1.0), 0.5 * (dims[1] as f64 - 1.0));
        Volume3D::from_fn(g, |x, y, _| {
            let u = x as f64 - cx - centre.0;
            let v = y as f64 - cy - centre.1;
            (1000.0 * (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()) as f32
        })
        .unwrap()
    }

    #[test]
    fn affine_inverse_roundtrip() {
        let t = Affine2D {
            a11: 1.1,
            a12: 0.2,
            a21: -0.1,
            a22: 0.9,
            tx: 3.0,
            ty: -4.0,
        };
        let inv = t.inverse().unwrap();
        let (u, v) = t.apply(2.5, -7.0);
        let (a, b) = inv.apply(u, v);
        assert!((a - 2.5).abs() < 1e-12 && (b + 7.0).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_returns_identity() {
        let v = blob([40, 40, 3], (2.0, -1.0), 6.0);
        let r = register_inplane(&v, &v, &PreprocParams::default()).unwrap();
        assert!(r.transform.deviation_from_identity() < 1e-3);
        assert!(!r.identity_fallback);
        for (a, b) in r.resampled.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn recovers_known_translation() {
        // the fixed blob sits at +(3, -2) mm from the moving blob, so the
        // moving -> fixed transform is a translation by (3, -2)
        let fixed = blob([64, 64, 4], (3.0, -2.0), 6.0);
        let moving = blob([64, 64, 4], (0.0, 0.0), 6.0);
        let r = register_inplane(&moving, &fixed, &PreprocParams::default()).unwrap();
        assert!(!r.identity_fallback);
        assert!((r.transform.tx - 3.0).abs() < 0.5, "{:?}", r.transform);
        assert!((r.transform.ty + 2.0).abs() < 0.5, "{:?}", r.transform);
        assert!(r.objective <= r.objective_identity);
    }

    #[test]
    fn pure_noise_falls_back_to_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = Geometry::unit([48, 48, 4]).unwrap();
        let a = Volume3D::from_fn(g.clone(), |_, _, _| rng.random_range(0f32..100.0)).unwrap();
        let b = Volume3D::from_fn(g, |_, _, _| rng.random_range(0f32..100.0)).unwrap();
        let r = register_inplane(&a, &b, &PreprocParams::default()).unwrap();
        assert!(r.identity_fallback);
        assert_eq!(r.transform, Affine2D::IDENTITY);
        assert_eq!(r.resampled, a);
    }

    #[test]
    fn objective_never_worse_than_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let shift = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let fixed = blob([32, 32, 2], shift, 4.0);
            let moving = blob([32, 32, 2], (0.0, 0.0), 4.0);
            let r = register_inplane(&moving, &fixed, &PreprocParams::default()).unwrap();
            assert!(r.objective <= r.objective_identity);
        }
    }

    #[test]
    fn mismatched_geometry_is_rejected() {
        let a = blob([16, 16, 2], (0.0, 0.0), 3.0);
        let b = blob([16, 17, 2], (0.0, 0.0), 3.0);
        assert!(matches!(
            register_inplane(&a, &b, &PreprocParams::default()),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn warp_by_integer_translation_shifts_voxels() {
        let v = blob([20, 20, 1], (0.0, 0.0), 3.0);
        let w = warp_inplane(&v, &Affine2D::translation(2.0, -1.0)).unwrap();
        // output(x, y) = input(x - 2, y + 1)
        for y in 2..17 {
            for x in 3..18 {
                assert!((w.get(x, y, 0) - v.get(x - 2, y + 1, 0)).abs() < 1e-3);
            }
        }
    }
}
