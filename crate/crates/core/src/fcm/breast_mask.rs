use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Mask3D, Volume3D};

/// Axial ellipse removed from every slice (the chest cavity).
///
/// A zero semi-axis disables the exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseExclusion {
    /// Centre `(cx, cy)` in voxel coordinates of the axial plane.
    pub center: [f64; 2],
    /// Semi-axes `(rx, ry)` in voxels.
    pub semi_axes: [f64; 2],
}

impl EllipseExclusion {
    pub fn none() -> Self {
        EllipseExclusion {
            center: [0.0, 0.0],
            semi_axes: [0.0, 0.0],
        }
    }

    /// Batch default: centred at `(nx/2, 0.15 ny)` with semi-axes
    /// `(0.45 nx, 0.2 ny)`.
    pub fn default_for(dims: [usize; 3]) -> Self {
        let (nx, ny) = (dims[0] as f64, dims[1] as f64);
        EllipseExclusion {
            center: [0.5 * nx, 0.15 * ny],
            semi_axes: [0.45 * nx, 0.2 * ny],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&r| !(r >= 0.0) || !r.is_finite())
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "ellipse semi-axes must be >= 0 and finite, got {:?} at {:?}",
                self.semi_axes, self.center
            )));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.semi_axes[0] == 0.0 || self.semi_axes[1] == 0.0
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        if self.is_null() {
            return false;
        }
        let u = (x as f64 - self.center[0]) / self.semi_axes[0];
        let v = (y as f64 - self.center[1]) / self.semi_axes[1];
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoThreshold {
    Otsu,
}

/// Either an absolute intensity or `"otsu"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensityThreshold {
    Absolute(f64),
    Auto(AutoThreshold),
}

impl Default for IntensityThreshold {
    fn default() -> Self {
        IntensityThreshold::Auto(AutoThreshold::Otsu)
    }
}

impl IntensityThreshold {
    pub fn resolve(&self, vol: &Volume3D) -> f64 {
        match *self {
            IntensityThreshold::Absolute(t) => t,
            IntensityThreshold::Auto(AutoThreshold::Otsu) => otsu_threshold(vol),
        }
    }
}

/// Otsu's threshold over a 256-bin histogram spanning the volume's range.
/// Voxels `>=` the returned value form the bright class.
pub fn otsu_threshold(vol: &Volume3D) -> f64 {
    const BINS: usize = 256;
    let (lo, hi) = vol.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    if hi <= lo {
        return lo;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in vol.data() {
        let b = (((v as f64 - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = vol.data().len() as f64;
    let centre = |b: usize| lo + (b as f64 + 0.5) * width;
    let sum_all: f64 = (0..BINS).map(|b| hist[b] as f64 * centre(b)).sum();

    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best, mut best_split) = (-1.0f64, 1usize);
    for b in 0..BINS - 1 {
        w0 += hist[b] as f64;
        sum0 += hist[b] as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_split = b + 1;
        }
    }
    lo + best_split as f64 * width
}

/// Labels 26-connected components and keeps the largest `keep` of them.
/// Ties in size go to the component found first in x-fastest scan order.
pub fn keep_largest_components(mask: &Mask3D, keep: usize) -> Mask3D {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims;
    let src = mask.data();
    let mut labels = vec![0u32; src.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..src.len() {
        if src[start] == 0 || labels[start] != 0 {
            continue;
        }
        sizes.push(0);
        let label = sizes.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            sizes[label as usize - 1] += 1;
            let [x, y, z] = g.coords(i);
            for dz in -1i64..=1 {
                let zz = z as i64 + dz;
                if zz < 0 || zz >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let yy = y as i64 + dy;
                    if yy < 0 || yy >= ny as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        let xx = x as i64 + dx;
                        if xx < 0 || xx >= nx as i64 {
                            continue;
                        }
                        let j = g.index(xx as usize, yy as usize, zz as usize);
                        if src[j] != 0 && labels[j] == 0 {
                            labels[j] = label;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut kept = vec![false; sizes.len() + 1];
    for &c in order.iter().take(keep) {
        kept[c + 1] = true;
    }
    let data = labels.iter().map(|&l| kept[l as usize] as u8).collect();
    Mask3D::new(g.clone(), data).expect("labels derived from a valid mask")
}

/// Breast mask from the pre-contrast volume: `voxel >= threshold`, minus
/// the exclusion ellipse on every slice, reduced to the two largest
/// 26-connected components.
pub fn threshold_breast_mask(
    pre: &Volume3D,
    threshold: IntensityThreshold,
    exclusion: &EllipseExclusion,
) -> Result<Mask3D> {
    exclusion.validate()?;
    let t = threshold.resolve(pre);
    let g = pre.geometry();
    let mut data = Vec::with_capacity(g.len());
    for (i, &v) in pre.data().iter().enumerate() {
        let [x, y, _] = g.coords(i);
        data.push((v as f64 >= t && !exclusion.contains(x, y)) as u8);
    }
    let raw = Mask3D::new(g.clone(), data)?;
    if raw.is_empty() {
        return Err(Error::EmptyMask(format!(
            "intensity threshold {t} leaves no breast voxels"
        )));
    }
    Ok(keep_largest_components(&raw, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    /// Two bright slabs (value 100) on a dark background.
    fn slab_phantom() -> (Volume3D, Mask3D, Mask3D) {
        let g = Geometry::unit([20, 12, 6]).unwrap();
        let left = |x: usize, y: usize| (2..8).contains(&x) && (4..10).contains(&y);
        let right = |x: usize, y: usize| (12..18).contains(&x) && (4..10).contains(&y);
        let vol = Volume3D::from_fn(g.clone(), |x, y, _| {
            if left(x, y) || right(x, y) {
                100.0
            } else {
                0.0
            }
        })
        .unwrap();
        let ml = Mask3D::from_fn(g.clone(), |x, y, _| left(x, y)).unwrap();
        let mr = Mask3D::from_fn(g, |x, y, _| right(x, y)).unwrap();
        (vol, ml, mr)
    }

    #[test]
    fn slabs_are_recovered_exactly() {
        let (vol, l, r) = slab_phantom();
        let m = threshold_breast_mask(&vol, IntensityThreshold::Absolute(50.0), &EllipseExclusion::none())
            .unwrap();
        assert_eq!(m, l.or(&r).unwrap());
    }

    #[test]
    fn ellipse_removes_covered_slab() {
        let (vol, _, r) = slab_phantom();
        let e = EllipseExclusion {
            center: [4.5, 6.5],
            semi_axes: [5.0, 5.0],
        };
        let m = threshold_breast_mask(&vol, IntensityThreshold::Absolute(50.0), &e).unwrap();
        assert_eq!(m, r);
    }

    #[test]
    fn threshold_above_everything_is_empty() {
        let (vol, _, _) = slab_phantom();
        let err = threshold_breast_mask(&vol, IntensityThreshold::Absolute(200.0), &EllipseExclusion::none())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyMask(_)));
    }

    #[test]
    fn otsu_separates_two_levels() {
        let (vol, l, r) = slab_phantom();
        let t = otsu_threshold(&vol);
        assert!(t > 0.0 && t <= 100.0, "{t}");
        let m = threshold_breast_mask(&vol, IntensityThreshold::default(), &EllipseExclusion::none()).unwrap();
        assert_eq!(m, l.or(&r).unwrap());
    }

    #[test]
    fn only_two_largest_components_survive() {
        let g = Geometry::unit([12, 3, 1]).unwrap();
        // runs of size 3, 1, 2, 1 along one row
        let on = [0, 1, 2, 4, 6, 7, 10];
        let vol = Volume3D::from_fn(g, |x, y, _| if y == 1 && on.contains(&x) { 1.0 } else { 0.0 }).unwrap();
        let m = keep_largest_components(&Mask3D::from_predicate(&vol, |v| v > 0.5), 2);
        let kept: Vec<usize> = (0..12).filter(|&x| m.get(x, 1, 0)).collect();
        assert_eq!(kept, vec![0, 1, 2, 6, 7]);
    }

    #[test]
    fn diagonal_neighbours_are_connected() {
        let g = Geometry::unit([3, 3, 3]).unwrap();
        let m = Mask3D::from_fn(g, |x, y, z| x == y && y == z).unwrap();
        assert_eq!(keep_largest_components(&m, 1), m);
    }

    #[test]
    fn default_ellipse_and_threshold_serde() {
        let e = EllipseExclusion::default_for([100, 200, 10]);
        assert_eq!(e.center, [50.0, 30.0]);
        assert_eq!(e.semi_axes, [45.0, 40.0]);
        let t: IntensityThreshold = serde_json::from_str("\"otsu\"").unwrap();
        assert_eq!(t, IntensityThreshold::Auto(AutoThreshold::Otsu));
        let t: IntensityThreshold = serde_json::from_str("42.5").unwrap();
        assert_eq!(t, IntensityThreshold::Absolute(42.5));
        assert!(EllipseExclusion { center: [0.0, 0.0], semi_axes: [-1.0, 2.0] }.validate().is_err());
    }
}
