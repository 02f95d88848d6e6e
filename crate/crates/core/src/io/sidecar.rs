//! Raw little-endian payload (`.raw`) with a JSON geometry sidecar (`.json`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Geometry;

use super::{Payload, RawImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: Dtype,
    pub order: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

pub const ORDER_X_FASTEST: &str = "x-fastest";

pub(crate) fn decode(sidecar_json: &[u8], payload: &[u8]) -> Result<RawImage> {
    let sc: Sidecar = serde_json::from_slice(sidecar_json)?;
    if sc.order != ORDER_X_FASTEST {
        return Err(Error::UnsupportedFormat(format!(
            "voxel order \"{}\" (expected \"{ORDER_X_FASTEST}\")",
            sc.order
        )));
    }
    let geometry = Geometry::new(sc.dims, sc.spacing, sc.origin)?;
    let n = geometry.len();
    let payload = match sc.dtype {
        Dtype::F32 => {
            if payload.len() != n * 4 {
                return Err(Error::PayloadSizeMismatch {
                    expected: n * 4,
                    found: payload.len(),
                });
            }
            Payload::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        Dtype::U8 => {
            if payload.len() != n {
                return Err(Error::PayloadSizeMismatch {
                    expected: n,
                    found: payload.len(),
                });
            }
            Payload::U8(payload.to_vec())
        }
    };
    Ok(RawImage { geometry, payload })
}

/// Returns `(sidecar json, payload bytes)`.
pub(crate) fn encode(img: &RawImage) -> Result<(Vec<u8>, Vec<u8>)> {
    let g = &img.geometry;
    let (dtype, bytes) = match &img.payload {
        Payload::F32(v) => (
            Dtype::F32,
            v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>(),
        ),
        Payload::U8(v) => (Dtype::U8, v.clone()),
    };
    let sc = Sidecar {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        dtype,
        order: ORDER_X_FASTEST.to_string(),
    };
    let mut json = serde_json::to_vec_pretty(&sc)?;
    json.push(b'\n');
    Ok((json, bytes))
}
