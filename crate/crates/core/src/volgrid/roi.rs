//! Resampling, ROI cropping and the inverse embedding used by the cascade.
//!
//! Resampling uses the align-corners convention: target index `i` samples
//! source coordinate `i * (n_src - 1) / (n_tgt - 1)`, and a single-sample
//! target axis samples coordinate 0. Endpoints are reproduced exactly.

use serde::{Deserialize, Serialize};

use super::{Grid, LabelVolume, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

/// Source coordinate sampled by target index `i`.
#[inline]
fn source_coord(i: usize, n_src: usize, n_tgt: usize) -> f64 {
    if n_tgt <= 1 || n_src <= 1 {
        0.0
    } else {
        i as f64 * (n_src - 1) as f64 / (n_tgt - 1) as f64
    }
}

/// Spacing that keeps the physical extent when going from `n_src` to `n_tgt` samples.
fn rescaled_spacing(s: f64, n_src: usize, n_tgt: usize) -> f64 {
    if n_src > 1 && n_tgt > 1 {
        s * (n_src - 1) as f64 / (n_tgt - 1) as f64
    } else {
        s * n_src as f64 / n_tgt as f64
    }
}

/// Per-axis linear interpolation taps.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn linear_taps(n_src: usize, n_tgt: usize) -> Vec<Tap> {
    (0..n_tgt)
        .map(|i| {
            let c = source_coord(i, n_src, n_tgt);
            let lo = (c.floor() as usize).min(n_src - 1);
            let hi = (lo + 1).min(n_src - 1);
            Tap {
                lo,
                hi,
                frac: c - lo as f64,
            }
        })
        .collect()
}

fn nearest_taps(n_src: usize, n_tgt: usize) -> Vec<usize> {
    (0..n_tgt)
        .map(|i| (source_coord(i, n_src, n_tgt).round() as usize).min(n_src - 1))
        .collect()
}

fn check_target(target: [usize; 3]) -> Result<()> {
    if target.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter(format!(
            "target shape components must be >= 1, got {target:?}"
        )));
    }
    Ok(())
}

fn target_grid(src: &Grid, target: [usize; 3]) -> Grid {
    Grid {
        shape: target,
        spacing: [
            rescaled_spacing(src.spacing[0], src.shape[0], target[0]),
            rescaled_spacing(src.spacing[1], src.shape[1], target[1]),
            rescaled_spacing(src.spacing[2], src.shape[2], target[2]),
        ],
    }
}

/// Resamples intensities to `target_shape`, preserving the physical extent.
pub fn resample(v: &Volume, target_shape: [usize; 3], interpolation: Interpolation) -> Result<Volume> {
    check_target(target_shape)?;
    let src = *v.grid();
    let out_grid = target_grid(&src, target_shape);
    if target_shape == src.shape {
        return Ok(Volume::from_parts_unchecked(out_grid, v.data().to_vec()));
    }
    let data = match interpolation {
        Interpolation::Nearest => {
            let [tx, ty, tz] = [0, 1, 2].map(|a| nearest_taps(src.shape[a], target_shape[a]));
            let mut out = Vec::with_capacity(out_grid.len());
            for &z in &tz {
                for &y in &ty {
                    for &x in &tx {
                        out.push(v.at(x, y, z));
                    }
                }
            }
            out
        }
        Interpolation::Linear => {
            let [tx, ty, tz] = [0, 1, 2].map(|a| linear_taps(src.shape[a], target_shape[a]));
            let d = v.data();
            let mut out = Vec::with_capacity(out_grid.len());
            for cz in &tz {
                for cy in &ty {
                    for cx in &tx {
                        let at = |x, y, z| f64::from(d[src.index(x, y, z)]);
                        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                        let c00 = lerp(at(cx.lo, cy.lo, cz.lo), at(cx.hi, cy.lo, cz.lo), cx.frac);
                        let c10 = lerp(at(cx.lo, cy.hi, cz.lo), at(cx.hi, cy.hi, cz.lo), cx.frac);
                        let c01 = lerp(at(cx.lo, cy.lo, cz.hi), at(cx.hi, cy.lo, cz.hi), cx.frac);
                        let c11 = lerp(at(cx.lo, cy.hi, cz.hi), at(cx.hi, cy.hi, cz.hi), cx.frac);
                        let c0 = lerp(c00, c10, cy.frac);
                        let c1 = lerp(c01, c11, cy.frac);
                        out.push(lerp(c0, c1, cz.frac) as f32);
                    }
                }
            }
            out
        }
    };
    Ok(Volume::from_parts_unchecked(out_grid, data))
}

/// Nearest-neighbour resampling of labels.
pub fn resample_labels(l: &LabelVolume, target_shape: [usize; 3]) -> Result<LabelVolume> {
    check_target(target_shape)?;
    let src = *l.grid();
    let out_grid = target_grid(&src, target_shape);
    let [tx, ty, tz] = [0, 1, 2].map(|a| nearest_taps(src.shape[a], target_shape[a]));
    let mut out = Vec::with_capacity(out_grid.len());
    for &z in &tz {
        for &y in &ty {
            for &x in &tx {
                out.push(l.labels()[src.index(x, y, z)]);
            }
        }
    }
    Ok(LabelVolume::from_parts_unchecked(out_grid, out))
}

/// Records a crop-and-resample so ROI predictions can be placed back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTransform {
    /// Inclusive lower corner of the bounding box in source voxels.
    pub bbox_min: [usize; 3],
    /// Inclusive upper corner.
    pub bbox_max: [usize; 3],
    pub source_shape: [usize; 3],
    pub source_spacing: [f64; 3],
    pub target_shape: [usize; 3],
    pub interpolation: Interpolation,
}

impl RoiTransform {
    pub fn new(
        bbox_min: [usize; 3],
        bbox_max: [usize; 3],
        source: &Grid,
        target_shape: [usize; 3],
        interpolation: Interpolation,
    ) -> Result<Self> {
        check_target(target_shape)?;
        for a in 0..3 {
            if bbox_min[a] > bbox_max[a] || bbox_max[a] >= source.shape[a] {
                return Err(Error::InvalidParameter(format!(
                    "bbox {bbox_min:?}..={bbox_max:?} invalid for source {:?}",
                    source.shape
                )));
            }
        }
        Ok(Self {
            bbox_min,
            bbox_max,
            source_shape: source.shape,
            source_spacing: source.spacing,
            target_shape,
            interpolation,
        })
    }

    /// Extent of the bounding box in source voxels.
    pub fn bbox_shape(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.bbox_max[a] - self.bbox_min[a] + 1)
    }

    pub fn is_identity(&self) -> bool {
        self.bbox_min == [0; 3]
            && self.bbox_shape() == self.source_shape
            && self.target_shape == self.source_shape
    }

    pub fn contains(&self, [x, y, z]: [usize; 3]) -> bool {
        (self.bbox_min[0]..=self.bbox_max[0]).contains(&x)
            && (self.bbox_min[1]..=self.bbox_max[1]).contains(&y)
            && (self.bbox_min[2]..=self.bbox_max[2]).contains(&z)
    }

    fn check_source(&self, g: &Grid) -> Result<()> {
        if g.shape != self.source_shape {
            return Err(Error::ShapeMismatch {
                expected: self.source_shape.to_vec(),
                actual: g.shape.to_vec(),
            });
        }
        Ok(())
    }

    fn bbox_grid(&self) -> Grid {
        Grid {
            shape: self.bbox_shape(),
            spacing: self.source_spacing,
        }
    }

    fn extract<T: Copy>(&self, src: &Grid, data: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.bbox_grid().len());
        for z in self.bbox_min[2]..=self.bbox_max[2] {
            for y in self.bbox_min[1]..=self.bbox_max[1] {
                let row = src.index(self.bbox_min[0], y, z);
                out.extend_from_slice(&data[row..row + self.bbox_shape()[0]]);
            }
        }
        out
    }

    /// Crops `v` to the bounding box and resamples it to the target shape.
    pub fn crop_volume(&self, v: &Volume) -> Result<Volume> {
        self.check_source(v.grid())?;
        let sub = Volume::from_parts_unchecked(self.bbox_grid(), self.extract(v.grid(), v.data()));
        resample(&sub, self.target_shape, self.interpolation)
    }

    /// Crops labels with nearest-neighbour resampling.
    pub fn crop_labels(&self, l: &LabelVolume) -> Result<LabelVolume> {
        self.check_source(l.grid())?;
        let sub =
            LabelVolume::from_parts_unchecked(self.bbox_grid(), self.extract(l.grid(), l.labels()));
        resample_labels(&sub, self.target_shape)
    }

    /// ROI coordinate along `axis` for source index `s` (inside the bbox).
    #[inline]
    fn roi_coord(&self, axis: usize, s: usize) -> f64 {
        let nb = self.bbox_shape()[axis];
        let nt = self.target_shape[axis];
        let local = (s - self.bbox_min[axis]) as f64;
        if nb <= 1 || nt <= 1 {
            0.0
        } else {
            local * (nt - 1) as f64 / (nb - 1) as f64
        }
    }

    fn check_roi(&self, shape: [usize; 3]) -> Result<()> {
        if shape != self.target_shape {
            return Err(Error::ShapeMismatch {
                expected: self.target_shape.to_vec(),
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn source_grid(&self) -> Grid {
        Grid {
            shape: self.source_shape,
            spacing: self.source_spacing,
        }
    }
}

/// Tight bounding box of `mask != 0` dilated by `margin_vox` and clipped to the grid.
pub fn mask_bbox(mask: &LabelVolume, margin_vox: usize) -> Result<([usize; 3], [usize; 3])> {
    let g = *mask.grid();
    let mut lo = g.shape;
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &l) in mask.labels().iter().enumerate() {
        if l != 0 {
            any = true;
            let c = g.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return Err(Error::EmptyRoi);
    }
    for a in 0..3 {
        lo[a] = lo[a].saturating_sub(margin_vox);
        hi[a] = (hi[a] + margin_vox).min(g.shape[a] - 1);
    }
    Ok((lo, hi))
}

/// Dilates the tight bounding box of `mask != 0` by `margin_vox`, crops `v`
/// to it and resamples the crop (linearly) to `target_shape`.
pub fn crop_to_mask(
    v: &Volume,
    mask: &LabelVolume,
    margin_vox: usize,
    target_shape: [usize; 3],
) -> Result<(Volume, RoiTransform)> {
    v.grid().ensure_same(mask.grid())?;
    let (lo, hi) = mask_bbox(mask, margin_vox)?;
    let t = RoiTransform::new(lo, hi, mask.grid(), target_shape, Interpolation::Linear)?;
    let roi = t.crop_volume(v)?;
    Ok((roi, t))
}

/// Places ROI labels back into the full source grid; zero outside the bbox.
pub fn embed(labels_roi: &LabelVolume, t: &RoiTransform) -> Result<LabelVolume> {
    t.check_roi(labels_roi.shape())?;
    let g = t.source_grid();
    let rg = *labels_roi.grid();
    let idx = |axis: usize, s: usize| {
        (t.roi_coord(axis, s).round() as usize).min(t.target_shape[axis] - 1)
    };
    let mut out = vec![0u8; g.len()];
    for z in t.bbox_min[2]..=t.bbox_max[2] {
        let rz = idx(2, z);
        for y in t.bbox_min[1]..=t.bbox_max[1] {
            let ry = idx(1, y);
            for x in t.bbox_min[0]..=t.bbox_max[0] {
                out[g.index(x, y, z)] = labels_roi.labels()[rg.index(idx(0, x), ry, rz)];
            }
        }
    }
    Ok(LabelVolume::from_parts_unchecked(g, out))
}

/// Linear inverse resampling of ROI values into the source grid, `fill` outside the bbox.
pub fn embed_scalar(values_roi: &Volume, t: &RoiTransform, fill: f32) -> Result<Volume> {
    t.check_roi(values_roi.shape())?;
    let g = t.source_grid();
    let rg = *values_roi.grid();
    let taps = |axis: usize, s: usize| {
        let c = t.roi_coord(axis, s);
        let n = t.target_shape[axis];
        let lo = (c.floor() as usize).min(n - 1);
        Tap {
            lo,
            hi: (lo + 1).min(n - 1),
            frac: c - lo as f64,
        }
    };
    let d = values_roi.data();
    let at = |x, y, z| f64::from(d[rg.index(x, y, z)]);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut out = vec![fill; g.len()];
    for z in t.bbox_min[2]..=t.bbox_max[2] {
        let cz = taps(2, z);
        for y in t.bbox_min[1]..=t.bbox_max[1] {
            let cy = taps(1, y);
            for x in t.bbox_min[0]..=t.bbox_max[0] {
                let cx = taps(0, x);
                let c00 = lerp(at(cx.lo, cy.lo, cz.lo), at(cx.hi, cy.lo, cz.lo), cx.frac);
                let c10 = lerp(at(cx.lo, cy.hi, cz.lo), at(cx.hi, cy.hi, cz.lo), cx.frac);
                let c01 = lerp(at(cx.lo, cy.lo, cz.hi), at(cx.hi, cy.lo, cz.hi), cx.frac);
                let c11 = lerp(at(cx.lo, cy.hi, cz.hi), at(cx.hi, cy.hi, cz.hi), cx.frac);
                let v = lerp(lerp(c00, c10, cy.frac), lerp(c01, c11, cy.frac), cz.frac);
                out[g.index(x, y, z)] = v as f32;
            }
        }
    }
    Volume::new(g, out)
}

/// Sets voxels where `mask == 0` to `fill`.
pub fn apply_mask(v: &Volume, mask: &LabelVolume, fill: f32) -> Result<Volume> {
    v.grid().ensure_same(mask.grid())?;
    let data = v
        .data()
        .iter()
        .zip(mask.labels())
        .map(|(&x, &m)| if m == 0 { fill } else { x })
        .collect();
    Volume::new(*v.grid(), data)
}
