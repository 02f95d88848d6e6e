//! Slice rendering: windowed grayscale with an optional red mask contour.

use bpe_core::{Mask3D, Volume3D};

use crate::error::{ReaderError, Result};

/// Mask voxels of slice `z` with at least one 4-neighbour in the plane
/// outside the mask; the image border counts as outside.
pub fn contour(mask: &Mask3D, z: usize) -> Vec<bool> {
    let [nx, ny, _] = mask.dims();
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny && mask.get(x as usize, y as usize, z)
    };
    let mut out = vec![false; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let (xi, yi) = (x as isize, y as isize);
            out[y * nx + x] = inside(xi, yi)
                && !(inside(xi - 1, yi) && inside(xi + 1, yi) && inside(xi, yi - 1) && inside(xi, yi + 1));
        }
    }
    out
}

fn gray(v: f32, (lo, hi): (f32, f32)) -> u8 {
    if hi <= lo {
        return if v > lo { 255 } else { 0 };
    }
    ((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0).round() as u8
}

/// RGB pixels of slice `z`, row `y`, column `x`.
pub fn slice_rgb(vol: &Volume3D, window: (f32, f32), mask: Option<&Mask3D>, z: usize) -> Result<Vec<u8>> {
    let [nx, ny, nz] = vol.dims();
    if z >= nz {
        return Err(ReaderError::SliceOutOfRange { z, slices: nz });
    }
    let edge = mask.map(|m| contour(m, z));
    let mut rgb = Vec::with_capacity(nx * ny * 3);
    for y in 0..ny {
        for x in 0..nx {
            if edge.as_ref().is_some_and(|e| e[y * nx + x]) {
                rgb.extend_from_slice(&[255, 0, 0]);
            } else {
                let g = gray(vol.get(x, y, z), window);
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
    }
    Ok(rgb)
}

pub fn encode_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| ReaderError::Data(format!("png encoding: {e}"));
    let mut w = enc.write_header().map_err(fail)?;
    w.write_image_data(rgb).map_err(fail)?;
    w.finish().map_err(fail)?;
    Ok(out)
}
