//! Volume and mask file I/O.
//!
//! Two on-disk formats are understood, chosen by file extension:
//!
//! * `.nii`: single-file uncompressed NIfTI-1. Volumes are written as
//!   float32, masks as uint8. `scl_slope`/`scl_inter` are applied on read.
//! * `.json` / `.raw`: a raw little-endian payload next to a JSON sidecar
//!   `{"dims", "spacing", "origin", "dtype": "f32"|"u8", "order": "x-fastest"}`.
//!   Either file name may be passed; the other is derived by extension.

mod nifti;
pub mod sidecar;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask3D, Volume3D};

pub(crate) enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

pub(crate) struct RawImage {
    geometry: Geometry,
    payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Nifti,
    Sidecar,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("nii") => Ok(Format::Nifti),
            Some("json") | Some("raw") => Ok(Format::Sidecar),
            Some("gz") => Err(Error::UnsupportedFormat(format!(
                "{}: compressed NIfTI is not supported",
                path.display()
            ))),
            _ => Err(Error::UnsupportedFormat(format!(
                "{}: expected .nii, .json or .raw",
                path.display()
            ))),
        }
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

fn read_raw(path: &Path) -> Result<RawImage> {
    match Format::from_path(path)? {
        Format::Nifti => {
            let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
            nifti::decode(path, &buf)
        }
        Format::Sidecar => {
            let (json, raw) = sidecar_paths(path);
            let meta = fs::read(&json).map_err(|e| Error::io(&json, e))?;
            let payload = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
            sidecar::decode(&meta, &payload)
        }
    }
}

fn write_raw(img: &RawImage, path: &Path) -> Result<()> {
    match Format::from_path(path)? {
        Format::Nifti => write_atomic(path, &nifti::encode(img)),
        Format::Sidecar => {
            let (json, raw) = sidecar_paths(path);
            let (meta, payload) = sidecar::encode(img)?;
            write_atomic(&raw, &payload)?;
            write_atomic(&json, &meta)
        }
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Reads a scalar volume. Mask files (uint8) are returned as 0.0/1.0 voxels.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let img = read_raw(path.as_ref())?;
    let data = match img.payload {
        Payload::F32(v) => v,
        Payload::U8(v) => v.into_iter().map(|b| b as f32).collect(),
    };
    Volume3D::new(img.geometry, data)
}

/// Reads a binary mask; every voxel must be 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask3D> {
    let img = read_raw(path.as_ref())?;
    match img.payload {
        Payload::U8(v) => Mask3D::new(img.geometry, v),
        Payload::F32(v) => Mask3D::from_volume(&Volume3D::new(img.geometry, v)?),
    }
}

pub fn write_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let img = RawImage {
        geometry: vol.geometry().clone(),
        payload: Payload::F32(vol.data().to_vec()),
    };
    write_raw(&img, path.as_ref())
}

pub fn write_mask(mask: &Mask3D, path: impl AsRef<Path>) -> Result<()> {
    let img = RawImage {
        geometry: mask.geometry().clone(),
        payload: Payload::U8(mask.data().to_vec()),
    };
    write_raw(&img, path.as_ref())
}
