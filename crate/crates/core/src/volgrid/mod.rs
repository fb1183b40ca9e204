//! Volumetric grids: intensity, label and probability volumes.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Probability volumes keep the label axis
//! innermost, so voxel `i` owns `probs[i * num_labels..(i + 1) * num_labels]`.

mod io;
mod roi;

pub use io::{load_labels, load_probs, load_volume, save_volume, Sidecar, VolumeFile, VolumeKind};
pub use roi::{
    apply_mask, crop_to_mask, embed, embed_scalar, mask_bbox, resample, resample_labels,
    Interpolation, RoiTransform,
};

use crate::{Error, Result};

/// Number of labels in the background/liver/lesion label set.
pub const NUM_LABELS: usize = 3;

/// Shape and physical spacing shared by every volume kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub shape: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl Eq for Grid {}

impl Grid {
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!(
                "shape components must be >= 1, got {shape:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing components must be finite and > 0, got {spacing:?}"
            )));
        }
        Ok(Self { shape, spacing })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per axial slice.
    pub fn slice_len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Physical position of voxel `i` in millimetres.
    #[inline]
    pub fn position_mm(&self, i: usize) -> [f64; 3] {
        let c = self.coords(i);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_vec(),
                actual: other.shape.to_vec(),
            });
        }
        Ok(())
    }
}

/// A 2D plane of values, x-fastest. Used for axial slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::SizeMismatch(format!(
                "plane {nx}x{ny} needs {} values, got {}",
                nx * ny,
                data.len()
            )));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.nx * y]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.nx, self.ny]
    }
}

/// Scalar intensity volume (HU for CT, arbitrary units otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "volume {:?} needs {} voxels, got {}",
                grid.shape,
                grid.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        Self {
            data: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn slice_z(&self, z: usize) -> Plane<f32> {
        let n = self.grid.slice_len();
        Plane {
            nx: self.grid.shape[0],
            ny: self.grid.shape[1],
            data: self.data[z * n..(z + 1) * n].to_vec(),
        }
    }

    /// Builds a volume by stacking axial planes.
    pub fn from_slices(spacing: [f64; 3], slices: &[Plane<f32>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidParameter("no slices to stack".into()))?;
        let grid = Grid::new([first.nx, first.ny, slices.len()], spacing)?;
        let mut data = Vec::with_capacity(grid.len());
        for s in slices {
            if s.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    expected: first.shape().to_vec(),
                    actual: s.shape().to_vec(),
                });
            }
            data.extend_from_slice(&s.data);
        }
        Volume::new(grid, data)
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, data: Vec<f32>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }
}

/// Per-voxel labels in {0 = background, 1 = liver, 2 = lesion}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    grid: Grid,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: Grid, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "label volume {:?} needs {} voxels, got {}",
                grid.shape,
                grid.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| usize::from(l) >= NUM_LABELS) {
            return Err(Error::InvalidValue(format!(
                "label {} at voxel {i} outside {{0,1,2}}",
                labels[i]
            )));
        }
        Ok(Self { grid, labels })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            labels: vec![0; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn count_nonzero(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn slice_z(&self, z: usize) -> Plane<u8> {
        let n = self.grid.slice_len();
        Plane {
            nx: self.grid.shape[0],
            ny: self.grid.shape[1],
            data: self.labels[z * n..(z + 1) * n].to_vec(),
        }
    }

    /// Binary volume: 1 where the label is in `foreground`, 0 elsewhere.
    pub fn select(&self, foreground: &[u8]) -> LabelVolume {
        LabelVolume {
            grid: self.grid,
            labels: self
                .labels
                .iter()
                .map(|l| u8::from(foreground.contains(l)))
                .collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, labels: Vec<u8>) -> Self {
        debug_assert_eq!(grid.len(), labels.len());
        Self { grid, labels }
    }
}

/// Tolerance for per-voxel probability sums.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Per-voxel categorical distributions over `num_labels` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    grid: Grid,
    num_labels: usize,
    probs: Vec<f32>,
}

impl ProbVolume {
    pub fn new(grid: Grid, num_labels: usize, probs: Vec<f32>) -> Result<Self> {
        let v = Self {
            grid,
            num_labels,
            probs,
        };
        v.validate()?;
        Ok(v)
    }

    /// Two-label volume `(1 - p, p)` from a foreground probability per voxel.
    pub fn from_foreground(grid: Grid, fg: &[f32]) -> Result<Self> {
        let probs = fg.iter().flat_map(|&p| [1.0 - p, p]).collect();
        Self::new(grid, 2, probs)
    }

    /// Checks every invariant: size, entries in [0, 1], sums within [`PROB_SUM_TOL`].
    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 {
            return Err(Error::InvalidParameter("num_labels must be >= 1".into()));
        }
        if self.probs.len() != self.grid.len() * self.num_labels {
            return Err(Error::SizeMismatch(format!(
                "prob volume {:?} x {} labels needs {} values, got {}",
                self.grid.shape,
                self.num_labels,
                self.grid.len() * self.num_labels,
                self.probs.len()
            )));
        }
        for (i, row) in self.probs.chunks_exact(self.num_labels).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidValue(format!(
                    "probability outside [0,1] at voxel {i}"
                )));
            }
            let s: f64 = row.iter().map(|&p| f64::from(p)).sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidValue(format!(
                    "probabilities at voxel {i} sum to {s}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    /// Raw mutable access. Invariants are re-checked on save.
    pub fn probs_mut(&mut self) -> &mut [f32] {
        &mut self.probs
    }

    #[inline]
    pub fn voxel(&self, i: usize) -> &[f32] {
        &self.probs[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Probability of `label` at every voxel.
    pub fn channel(&self, label: usize) -> Vec<f32> {
        self.probs
            .chunks_exact(self.num_labels)
            .map(|r| r[label])
            .collect()
    }

    /// Per-voxel argmax, ties resolved to the smaller label.
    pub fn argmax(&self) -> Vec<u8> {
        self.probs
            .chunks_exact(self.num_labels)
            .map(|r| {
                let mut best = 0;
                for (k, &p) in r.iter().enumerate().skip(1) {
                    if p > r[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: [usize; 3]) -> Grid {
        Grid::new(shape, [1.0; 3]).unwrap()
    }

    #[test]
    fn grid_rejects_bad_shape_and_spacing() {
        assert!(Grid::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let g = grid([3, 4, 5]);
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn volume_rejects_non_finite() {
        assert!(Volume::new(grid([2, 1, 1]), vec![0.0, f32::INFINITY]).is_err());
        assert!(Volume::new(grid([2, 1, 1]), vec![0.0]).is_err());
    }

    #[test]
    fn labels_outside_set_rejected() {
        assert!(LabelVolume::new(grid([2, 1, 1]), vec![0, 3]).is_err());
        assert!(LabelVolume::new(grid([2, 1, 1]), vec![1, 2]).is_ok());
    }

    #[test]
    fn prob_volume_checks_sums() {
        assert!(ProbVolume::new(grid([1, 1, 1]), 2, vec![0.5, 0.6]).is_err());
        assert!(ProbVolume::new(grid([1, 1, 1]), 2, vec![0.25, 0.75]).is_ok());
        let p = ProbVolume::from_foreground(grid([2, 1, 1]), &[0.5, 0.9]).unwrap();
        assert_eq!(p.argmax(), vec![0, 1]);
    }
}
