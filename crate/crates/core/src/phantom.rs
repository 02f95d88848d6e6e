//! Synthetic DCE phantoms with known ground truth.
//!
//! Two ellipsoidal breasts of fat, each holding a box of FGT at a multiple
//! of the fat intensity, above a chest-wall block. S1 copies S0 except for
//! a slab of the FGT that enhances by a fixed percentage. Positions scale
//! with the grid, so a 128³ phantom has breasts centred at x = 40 and 88.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bpe::BpeMetrics;
use crate::error::{Error, Result};
use crate::io;
use crate::volume::{volume_of_mask, DceSeries, Geometry, Mask3D, Volume3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub fat: f32,
    /// FGT intensity as a multiple of `fat`.
    pub fgt_factor: f32,
    pub chest: f32,
    /// Standard deviation of the Gaussian noise added to S0 and S1.
    pub noise_sigma: f32,
    /// Percent enhancement of the enhancing FGT.
    pub enhancement_pct: f32,
    /// Share of the FGT slab depth (from its low-z face) that enhances.
    pub enhancing_fraction: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [128, 128, 128],
            spacing: [1.0; 3],
            fat: 100.0,
            fgt_factor: 3.0,
            chest: 150.0,
            noise_sigma: 5.0,
            enhancement_pct: 80.0,
            enhancing_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub series: DceSeries,
    pub breast: Mask3D,
    pub fgt: Mask3D,
    /// FGT voxels that enhance.
    pub enhancing: Mask3D,
    /// Metrics implied by the construction.
    pub expected: BpeMetrics,
}

fn at(frac: f64, n: usize) -> i64 {
    (frac * n as f64).round() as i64
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    let [nx, ny, nz] = spec.dims;
    if nx < 16 || ny < 16 || nz < 16 {
        return Err(Error::InvalidParameter(format!(
            "phantom needs at least 16 voxels per axis, got {:?}",
            spec.dims
        )));
    }
    let g = Geometry::new(spec.dims, spec.spacing, [0.0; 3])?;
    let (fx, fy, fz) = (nx as f64, ny as f64, nz as f64);
    let centres = [[0.3125 * fx, 0.625 * fy, 0.5 * fz], [0.6875 * fx, 0.625 * fy, 0.5 * fz]];
    let semi = [0.171875 * fx, 0.234375 * fy, 0.3125 * fz];
    let half_w = 0.078125;
    let (y0, y1) = (at(0.5625, ny), at(0.6875, ny));
    let (z0, z1) = (at(0.34375, nz), at(0.65625, nz));
    let z_split = z0 + ((z1 - z0) as f64 * spec.enhancing_fraction).round() as i64;
    let chest_x = (at(0.234375, nx), at(0.765625, nx));
    let chest_y = (at(0.0625, ny), at(0.21875, ny));

    let in_breast = |x: usize, y: usize, z: usize| {
        centres.iter().any(|c| {
            let u = (x as f64 - c[0]) / semi[0];
            let v = (y as f64 - c[1]) / semi[1];
            let w = (z as f64 - c[2]) / semi[2];
            u * u + v * v + w * w <= 1.0
        })
    };
    let in_fgt = |x: usize, y: usize, z: usize| {
        let (x, y, z) = (x as i64, y as i64, z as i64);
        let in_box = centres.iter().any(|c| {
            let cx = c[0].round() as i64;
            let hw = at(half_w, nx);
            (cx - hw..cx + hw).contains(&x)
        });
        in_box && (y0..y1).contains(&y) && (z0..z1).contains(&z)
    };
    let breast = Mask3D::from_fn(g.clone(), in_breast)?;
    let fgt = Mask3D::from_fn(g.clone(), |x, y, z| in_fgt(x, y, z) && in_breast(x, y, z))?;
    let enhancing = Mask3D::from_fn(g.clone(), |x, y, z| fgt.get(x, y, z) && (z as i64) < z_split)?;

    let clean = Volume3D::from_fn(g.clone(), |x, y, z| {
        if fgt.get(x, y, z) {
            spec.fat * spec.fgt_factor
        } else if breast.get(x, y, z) {
            spec.fat
        } else if (chest_x.0..=chest_x.1).contains(&(x as i64))
            && (chest_y.0..=chest_y.1).contains(&(y as i64))
        {
            spec.chest
        } else {
            0.0
        }
    })?;
    let gain = 1.0 + spec.enhancement_pct / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f32, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let s0: Vec<f32> = clean.data().iter().map(|&v| v + noise.sample(&mut rng)).collect();
    let s1: Vec<f32> = clean
        .data()
        .iter()
        .zip(enhancing.data())
        .map(|(&v, &e)| if e != 0 { v * gain } else { v } + noise.sample(&mut rng))
        .collect();
    let series = DceSeries::new(vec![Volume3D::new(g.clone(), s0)?, Volume3D::new(g, s1)?])?;

    let breast_v = volume_of_mask(&breast);
    let fgt_v = volume_of_mask(&fgt);
    let bpe_v = volume_of_mask(&enhancing);
    let expected = BpeMetrics {
        breast_volume_mm3: breast_v,
        fgt_volume_mm3: fgt_v,
        bpe_volume_mm3: bpe_v,
        bpe_fgt_ratio_pct: Some(100.0 * bpe_v / fgt_v),
        bpe_breast_ratio_pct: Some(100.0 * bpe_v / breast_v),
        bpe_integrated_intensity: bpe_v * spec.enhancement_pct as f64,
    };
    Ok(Phantom {
        series,
        breast,
        fgt,
        enhancing,
        expected,
    })
}

impl Phantom {
    /// Writes `s0.nii`, `s1.nii` and the truth masks into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_volume(self.series.pre(), dir.join("s0.nii"))?;
        io::write_volume(self.series.first_post(), dir.join("s1.nii"))?;
        io::write_mask(&self.breast, dir.join("truth_breast.nii"))?;
        io::write_mask(&self.fgt, dir.join("truth_fgt.nii"))?;
        io::write_mask(&self.enhancing, dir.join("truth_bpe.nii"))?;
        Ok(())
    }
}
