//! Voxel grid carriers shared by every stage of the pipeline.
//!
//! All grids are stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NIfTI orientation fields carried through I/O untouched.
///
/// Nothing in the toolkit interprets these; they only survive a
/// read/write round trip so that clinical viewers keep their orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    /// pixdim[0]; the handedness factor of the quaternion form.
    pub qfac: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// mm per voxel.
    pub spacing: [f64; 3],
    /// Physical position (mm) of the centre of voxel (0, 0, 0).
    pub origin: [f64; 3],
    pub orientation: Option<Orientation>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = Geometry {
            dims,
            spacing,
            origin,
            orientation: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!(
                "dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`Geometry::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Dims and spacing must agree exactly for two grids to be used together.
    pub fn check_aligned(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }

    /// Like [`Geometry::check_aligned`] but also requires the same origin.
    pub fn check_same_frame(&self, other: &Geometry, what: &str) -> Result<()> {
        self.check_aligned(other, what)?;
        if self.origin != other.origin {
            return Err(Error::GeometryMismatch(format!(
                "{what}: origin {:?} vs {:?}",
                self.origin, other.origin
            )));
        }
        Ok(())
    }
}

/// Dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "voxel count {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Volume3D { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        let n = geometry.len();
        Self::new(geometry, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Applies `f` voxel-wise, keeping the geometry.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume3D> {
        Volume3D::new(self.geometry.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn with_geometry(self, geometry: Geometry) -> Result<Volume3D> {
        Volume3D::new(geometry, self.data)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Binary voxel grid aligned to a [`Volume3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3D {
    geometry: Geometry,
    data: Vec<u8>,
}

impl Mask3D {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "mask voxel count {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "mask voxel {i} has value {}, expected 0 or 1",
                data[i]
            )));
        }
        Ok(Mask3D { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Result<Self> {
        let n = geometry.len();
        Self::new(geometry, vec![0; n])
    }

    pub fn full(geometry: Geometry) -> Result<Self> {
        let n = geometry.len();
        Self::new(geometry, vec![1; n])
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z) as u8);
                }
            }
        }
        Self::new(geometry, data)
    }

    /// Voxels where `pred(value)` holds.
    pub fn from_predicate(vol: &Volume3D, pred: impl Fn(f32) -> bool) -> Mask3D {
        Mask3D {
            geometry: vol.geometry().clone(),
            data: vol.data().iter().map(|&v| pred(v) as u8).collect(),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn and(&self, other: &Mask3D) -> Result<Mask3D> {
        self.geometry.check_aligned(&other.geometry, "mask intersection")?;
        Ok(self.zip_with(other, |a, b| a & b))
    }

    pub fn or(&self, other: &Mask3D) -> Result<Mask3D> {
        self.geometry.check_aligned(&other.geometry, "mask union")?;
        Ok(self.zip_with(other, |a, b| a | b))
    }

    pub fn and_not(&self, other: &Mask3D) -> Result<Mask3D> {
        self.geometry.check_aligned(&other.geometry, "mask difference")?;
        Ok(self.zip_with(other, |a, b| a & (1 - b)))
    }

    pub fn is_subset_of(&self, other: &Mask3D) -> Result<bool> {
        self.geometry.check_aligned(&other.geometry, "mask subset")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| a <= b))
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Interprets a volume of 0/1 values as a mask.
    pub fn from_volume(vol: &Volume3D) -> Result<Mask3D> {
        let mut data = Vec::with_capacity(vol.data().len());
        for (i, &v) in vol.data().iter().enumerate() {
            match v {
                v if v == 0.0 => data.push(0),
                v if v == 1.0 => data.push(1),
                v => {
                    return Err(Error::InvalidParameter(format!(
                        "voxel {i} has value {v}, expected 0 or 1"
                    )))
                }
            }
        }
        Mask3D::new(vol.geometry().clone(), data)
    }

    fn zip_with(&self, other: &Mask3D, f: impl Fn(u8, u8) -> u8) -> Mask3D {
        Mask3D {
            geometry: self.geometry.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Pre-contrast and post-contrast volumes of one DCE exam on a common grid.
#[derive(Debug, Clone)]
pub struct DceSeries {
    timepoints: Vec<Volume3D>,
}

impl DceSeries {
    pub fn new(timepoints: Vec<Volume3D>) -> Result<Self> {
        if timepoints.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "DCE series needs at least 2 timepoints, got {}",
                timepoints.len()
            )));
        }
        let first = timepoints[0].geometry().clone();
        for (t, vol) in timepoints.iter().enumerate().skip(1) {
            first.check_same_frame(vol.geometry(), &format!("timepoint {t} vs timepoint 0"))?;
        }
        Ok(DceSeries { timepoints })
    }

    pub fn pre(&self) -> &Volume3D {
        &self.timepoints[0]
    }

    pub fn first_post(&self) -> &Volume3D {
        &self.timepoints[1]
    }

    pub fn timepoints(&self) -> &[Volume3D] {
        &self.timepoints
    }

    pub fn geometry(&self) -> &Geometry {
        self.timepoints[0].geometry()
    }
}

/// Physical volume of a mask in mm³.
pub fn volume_of_mask(mask: &Mask3D) -> f64 {
    mask.count() as f64 * mask.geometry().voxel_volume()
}
