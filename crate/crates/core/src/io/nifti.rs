//! Single-file, uncompressed NIfTI-1 (`.nii`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Geometry, Orientation};

use super::{Payload, RawImage};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

mod off {
    pub const SIZEOF_HDR: usize = 0;
    pub const REGULAR: usize = 38;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }

    fn f32s<const N: usize>(&self, at: usize) -> [f32; N] {
        std::array::from_fn(|k| self.f32(at + 4 * k))
    }
}

pub(crate) fn decode(path: &Path, buf: &[u8]) -> Result<RawImage> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} bytes is shorter than a NIfTI-1 header",
            path.display(),
            buf.len()
        )));
    }
    let le = Reader { buf, big_endian: false };
    let r = if le.i32(off::SIZEOF_HDR) == HEADER_SIZE as i32 {
        le
    } else {
        let be = Reader { buf, big_endian: true };
        if be.i32(off::SIZEOF_HDR) != HEADER_SIZE as i32 {
            return Err(Error::UnsupportedFormat(format!(
                "{}: sizeof_hdr is not 348",
                path.display()
            )));
        }
        be
    };
    if &buf[off::MAGIC..off::MAGIC + 3] != b"n+1" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: magic is not \"n+1\" (only single-file NIfTI-1 is supported)",
            path.display()
        )));
    }

    let dim: [i16; 8] = std::array::from_fn(|k| r.i16(off::DIM + 2 * k));
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: dim[0] = {rank}",
            path.display()
        )));
    }
    let mut dims = [1usize; 3];
    for k in 0..3 {
        if (k as i16) < rank {
            let d = dim[k + 1];
            if d < 1 {
                return Err(Error::InvalidGeometry(format!("dim[{}] = {d}", k + 1)));
            }
            dims[k] = d as usize;
        }
    }
    for k in 4..=rank as usize {
        if dim[k] > 1 {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {}-dimensional image; only 3D volumes are supported",
                path.display(),
                rank
            )));
        }
    }

    let pixdim: [f32; 8] = r.f32s(off::PIXDIM);
    let spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
    let datatype = r.i16(off::DATATYPE);
    let vox_offset = r.f32(off::VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: vox_offset {vox_offset}",
            path.display()
        )));
    }
    let vox_offset = vox_offset as usize;

    let qform_code = r.i16(off::QFORM_CODE);
    let sform_code = r.i16(off::SFORM_CODE);
    let srow_x: [f32; 4] = r.f32s(off::SROW_X);
    let srow_y: [f32; 4] = r.f32s(off::SROW_Y);
    let srow_z: [f32; 4] = r.f32s(off::SROW_Z);
    let qoffset: [f32; 3] = r.f32s(off::QOFFSET_X);
    let origin = if qform_code <= 0 && sform_code > 0 {
        [srow_x[3] as f64, srow_y[3] as f64, srow_z[3] as f64]
    } else {
        [qoffset[0] as f64, qoffset[1] as f64, qoffset[2] as f64]
    };
    let orientation = Orientation {
        qfac: pixdim[0],
        qform_code,
        sform_code,
        quatern: r.f32s(off::QUATERN_B),
        srow_x,
        srow_y,
        srow_z,
    };

    let geometry = Geometry {
        dims,
        spacing,
        origin,
        orientation: Some(orientation),
    };
    geometry.validate()?;

    let n = geometry.len();
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: NIfTI datatype code {other}",
                path.display()
            )))
        }
    };
    let expected = n * elem;
    let found = buf.len().saturating_sub(vox_offset);
    if found != expected {
        return Err(Error::PayloadSizeMismatch { expected, found });
    }
    let body = Reader {
        buf: &buf[vox_offset..],
        big_endian: r.big_endian,
    };

    let slope = r.f32(off::SCL_SLOPE);
    let inter = r.f32(off::SCL_INTER);
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);

    let payload = if datatype == DT_UINT8 && !scaled {
        Payload::U8(body.buf.to_vec())
    } else {
        let mut v: Vec<f32> = match datatype {
            DT_UINT8 => body.buf.iter().map(|&b| b as f32).collect(),
            DT_INT16 => (0..n).map(|i| body.i16(2 * i) as f32).collect(),
            DT_UINT16 => (0..n)
                .map(|i| u16::from_le_bytes(body.bytes(2 * i)) as f32)
                .collect(),
            DT_FLOAT32 => (0..n).map(|i| body.f32(4 * i)).collect(),
            DT_FLOAT64 => (0..n)
                .map(|i| f64::from_le_bytes(body.bytes(8 * i)) as f32)
                .collect(),
            _ => unreachable!(),
        };
        if scaled {
            for x in &mut v {
                *x = *x * slope + inter;
            }
        }
        Payload::F32(v)
    };
    Ok(RawImage { geometry, payload })
}

pub(crate) fn encode(img: &RawImage) -> Vec<u8> {
    let g = &img.geometry;
    let (datatype, bitpix) = match img.payload {
        Payload::F32(_) => (DT_FLOAT32, 32i16),
        Payload::U8(_) => (DT_UINT8, 8i16),
    };
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, bytes: &[u8]| h[at..at + bytes.len()].copy_from_slice(bytes);

    put(&mut h, off::SIZEOF_HDR, &(HEADER_SIZE as i32).to_le_bytes());
    h[off::REGULAR] = b'r';
    let dim: [i16; 8] = [3, g.dims[0] as i16, g.dims[1] as i16, g.dims[2] as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put(&mut h, off::DIM + 2 * k, &d.to_le_bytes());
    }
    put(&mut h, off::DATATYPE, &datatype.to_le_bytes());
    put(&mut h, off::BITPIX, &bitpix.to_le_bytes());

    let o = g.orientation.unwrap_or_else(|| default_orientation(g));
    let pixdim: [f32; 8] = [
        o.qfac,
        g.spacing[0] as f32,
        g.spacing[1] as f32,
        g.spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut h, off::PIXDIM + 4 * k, &p.to_le_bytes());
    }
    put(&mut h, off::VOX_OFFSET, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, off::SCL_SLOPE, &1.0f32.to_le_bytes());
    put(&mut h, off::SCL_INTER, &0.0f32.to_le_bytes());
    // mm, seconds
    h[off::XYZT_UNITS] = 2 | 8;
    put(&mut h, off::QFORM_CODE, &o.qform_code.to_le_bytes());
    put(&mut h, off::SFORM_CODE, &o.sform_code.to_le_bytes());
    for k in 0..3 {
        put(&mut h, off::QUATERN_B + 4 * k, &o.quatern[k].to_le_bytes());
        put(&mut h, off::QOFFSET_X + 4 * k, &(g.origin[k] as f32).to_le_bytes());
    }
    for (row, at) in [(o.srow_x, off::SROW_X), (o.srow_y, off::SROW_Y), (o.srow_z, off::SROW_Z)] {
        for (k, v) in row.iter().enumerate() {
            put(&mut h, at + 4 * k, &v.to_le_bytes());
        }
    }
    put(&mut h, off::MAGIC, b"n+1\0");

    match &img.payload {
        Payload::F32(v) => {
            h.reserve(v.len() * 4);
            for x in v {
                h.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::U8(v) => h.extend_from_slice(v),
    }
    h
}

/// Scanner-frame, axis-aligned orientation used when a volume has none.
fn default_orientation(g: &Geometry) -> Orientation {
    let s = g.spacing;
    let o = g.origin;
    Orientation {
        qfac: 1.0,
        qform_code: 1,
        sform_code: 1,
        quatern: [0.0; 3],
        srow_x: [s[0] as f32, 0.0, 0.0, o[0] as f32],
        srow_y: [0.0, s[1] as f32, 0.0, o[1] as f32],
        srow_z: [0.0, 0.0, s[2] as f32, o[2] as f32],
    }
}
