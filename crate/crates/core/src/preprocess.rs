//! Slice-wise intensity preprocessing and training-time augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::stream_rng;
use crate::volgrid::{Plane, Volume};
use crate::{Error, Result};

/// Default CT window in Hounsfield units.
pub const HU_WINDOW: (f32, f32) = (-100.0, 400.0);

/// Number of histogram bins used by [`hist_equalize`].
pub const EQUALIZE_BINS: usize = 256;

/// Clamps `(x - lo) / (hi - lo)` to [0, 1].
pub fn hu_window(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "window bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let scale = 1.0 / (f64::from(hi) - f64::from(lo));
    let data = v
        .data()
        .iter()
        .map(|&x| ((f64::from(x) - f64::from(lo)) * scale).clamp(0.0, 1.0) as f32)
        .collect();
    Volume::new(*v.grid(), data)
}

#[inline]
fn bin_of(x: f32) -> usize {
    ((x.clamp(0.0, 1.0) * EQUALIZE_BINS as f32) as usize).min(EQUALIZE_BINS - 1)
}

/// Per-axial-slice histogram equalization: each voxel maps to the CDF of
/// its 256-bin histogram bin, `cdf(b) = #{voxels in bins <= b} / n`.
pub fn hist_equalize(v: &Volume) -> Volume {
    let n = v.grid().slice_len();
    let mut out = Vec::with_capacity(v.data().len());
    for slice in v.data().chunks_exact(n) {
        let mut hist = [0usize; EQUALIZE_BINS];
        for &x in slice {
            hist[bin_of(x)] += 1;
        }
        let mut cdf = [0f32; EQUALIZE_BINS];
        let mut acc = 0usize;
        for (c, h) in cdf.iter_mut().zip(hist) {
            acc += h;
            *c = (acc as f64 / n as f64) as f32;
        }
        out.extend(slice.iter().map(|&x| cdf[bin_of(x)]));
    }
    Volume::from_parts_unchecked(*v.grid(), out)
}

/// Zero-mean, unit-variance (population) normalization over the whole volume.
pub fn zscore_normalize(v: &Volume) -> Result<Volume> {
    let n = v.data().len() as f64;
    let mean = v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = v
        .data()
        .iter()
        .map(|&x| (f64::from(x) - mean).powi(2))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::InvalidValue("zero variance volume cannot be normalized".into()));
    }
    let inv = 1.0 / var.sqrt();
    let data = v
        .data()
        .iter()
        .map(|&x| ((f64::from(x) - mean) * inv) as f32)
        .collect();
    Volume::new(*v.grid(), data)
}

/// Switches for the intensity pipeline applied before inference and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// HU window; `None` skips windowing (e.g. for MR).
    pub window: Option<[f32; 2]>,
    pub equalize: bool,
    pub zscore: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: Some([HU_WINDOW.0, HU_WINDOW.1]),
            equalize: true,
            zscore: false,
        }
    }
}

impl PreprocessConfig {
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        let mut out = match self.zscore {
            true => zscore_normalize(v)?,
            false => v.clone(),
        };
        if let Some([lo, hi]) = self.window {
            out = hu_window(&out, lo, hi)?;
        }
        if self.equalize {
            out = hist_equalize(&out);
        }
        Ok(out)
    }
}

/// Parameters of the random slice augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub seed: u64,
    /// Control-point spacing of the elastic grid in pixels.
    pub elastic_grid: usize,
    /// Standard deviation of control-point displacements in pixels.
    pub elastic_sigma: f64,
    pub max_rotation_deg: f64,
    pub max_translation_vox: f64,
    /// Noise std as a multiple of the slice's own intensity std.
    pub noise_scale: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            seed: 0,
            elastic_grid: 16,
            elastic_sigma: 1.0,
            max_rotation_deg: 10.0,
            max_translation_vox: 3.0,
            noise_scale: 1.0,
        }
    }
}

impl AugmentParams {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            seed: 0,
            elastic_grid: 16,
            elastic_sigma: 0.0,
            max_rotation_deg: 0.0,
            max_translation_vox: 0.0,
            noise_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.elastic_sigma,
            self.max_rotation_deg,
            self.max_translation_vox,
            self.noise_scale,
        ];
        if mags.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "augmentation magnitudes must be finite and >= 0".into(),
            ));
        }
        if self.elastic_grid < 2 {
            return Err(Error::InvalidParameter("elastic_grid must be >= 2".into()));
        }
        Ok(())
    }

    /// Draws the geometric warp for `draw_index` on an `nx` x `ny` slice.
    pub fn draw_warp(&self, nx: usize, ny: usize, draw_index: u64) -> SliceWarp {
        let mut rng = stream_rng(self.seed, draw_index);
        self.draw_warp_with(&mut rng, nx, ny)
    }

    fn draw_warp_with<R: Rng>(&self, rng: &mut R, nx: usize, ny: usize) -> SliceWarp {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let rotation_deg = sym(rng, self.max_rotation_deg);
        let translation = [
            sym(rng, self.max_translation_vox),
            sym(rng, self.max_translation_vox),
        ];
        let elastic = (self.elastic_sigma > 0.0)
            .then(|| ElasticField::random(rng, nx, ny, self.elastic_grid, self.elastic_sigma));
        SliceWarp {
            rotation_deg,
            translation,
            elastic,
        }
    }
}

/// Coarse grid of Gaussian control-point displacements, bilinearly upsampled.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticField {
    grid: usize,
    cx: usize,
    cy: usize,
    /// `(dx, dy)` per control point, x-fastest.
    ctrl: Vec<[f64; 2]>,
}

impl ElasticField {
    fn random<R: Rng>(rng: &mut R, nx: usize, ny: usize, grid: usize, sigma: f64) -> Self {
        let cx = nx.saturating_sub(1).div_ceil(grid) + 1;
        let cy = ny.saturating_sub(1).div_ceil(grid) + 1;
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and >= 0");
        let ctrl = (0..cx * cy)
            .map(|_| [normal.sample(rng), normal.sample(rng)])
            .collect();
        Self { grid, cx, cy, ctrl }
    }

    fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        let gx = (x / self.grid as f64).clamp(0.0, (self.cx - 1) as f64);
        let gy = (y / self.grid as f64).clamp(0.0, (self.cy - 1) as f64);
        let x0 = (gx.floor() as usize).min(self.cx - 1);
        let y0 = (gy.floor() as usize).min(self.cy - 1);
        let x1 = (x0 + 1).min(self.cx - 1);
        let y1 = (y0 + 1).min(self.cy - 1);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let c = |x: usize, y: usize| self.ctrl[x + self.cx * y];
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let a = c(x0, y0)[k] * (1.0 - fx) + c(x1, y0)[k] * fx;
            let b = c(x0, y1)[k] * (1.0 - fx) + c(x1, y1)[k] * fx;
            *o = a * (1.0 - fy) + b * fy;
        }
        out
    }
}

/// A 2D geometric transform applied identically to an image and its labels.
///
/// Output pixel `p` samples the input at
/// `R⁻¹(p - c - t) + c + d(p)` where `c` is the slice centre, `R` the
/// rotation, `t` the translation and `d` the elastic displacement. Content
/// therefore moves by `+t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceWarp {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub elastic: Option<ElasticField>,
}

impl SliceWarp {
    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translation: [dx, dy],
            ..Self::default()
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::default()
        }
    }

    fn source_of(&self, x: f64, y: f64, centre: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let px = x - centre[0] - self.translation[0];
        let py = y - centre[1] - self.translation[1];
        // inverse rotation
        let mut sx = c * px + s * py + centre[0];
        let mut sy = -s * px + c * py + centre[1];
        if let Some(e) = &self.elastic {
            let d = e.displacement(x, y);
            sx += d[0];
            sy += d[1];
        }
        [sx, sy]
    }

    /// Warps the image (bilinear, edge-clamped) and labels (nearest, edge-clamped).
    pub fn apply(&self, image: &Plane<f32>, labels: &Plane<u8>) -> Result<(Plane<f32>, Plane<u8>)> {
        if image.shape() != labels.shape() {
            return Err(Error::ShapeMismatch {
                expected: image.shape().to_vec(),
                actual: labels.shape().to_vec(),
            });
        }
        let (nx, ny) = (image.nx, image.ny);
        let centre = [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0];
        let mut img = Vec::with_capacity(nx * ny);
        let mut lab = Vec::with_capacity(nx * ny);
        let clamp_x = |v: f64| v.clamp(0.0, (nx - 1) as f64);
        let clamp_y = |v: f64| v.clamp(0.0, (ny - 1) as f64);
        for y in 0..ny {
            for x in 0..nx {
                let [sx, sy] = self.source_of(x as f64, y as f64, centre);
                let (sx, sy) = (clamp_x(sx), clamp_y(sy));
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(nx - 1);
                let y1 = (y0 + 1).min(ny - 1);
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let g = |x, y| f64::from(image.get(x, y));
                let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
                let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
                img.push((top * (1.0 - fy) + bot * fy) as f32);
                lab.push(labels.get(sx.round() as usize, sy.round() as usize));
            }
        }
        Ok((Plane::new(nx, ny, img)?, Plane::new(nx, ny, lab)?))
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.translation == [0.0, 0.0] && self.elastic.is_none()
    }
}

fn plane_std(p: &Plane<f32>) -> f64 {
    let n = p.data.len() as f64;
    let mean = p.data.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    (p.data.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Random elastic deformation, rotation, translation and Gaussian noise.
///
/// The same warp is applied to both planes; noise (std = `noise_scale`
/// times the slice's std) is added to the image only. The result depends
/// only on `(p.seed, draw_index)`.
pub fn augment_slice(
    image: &Plane<f32>,
    labels: &Plane<u8>,
    p: &AugmentParams,
    draw_index: u64,
) -> Result<(Plane<f32>, Plane<u8>)> {
    p.validate()?;
    if image.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape().to_vec(),
            actual: labels.shape().to_vec(),
        });
    }
    let mut rng = stream_rng(p.seed, draw_index);
    let warp = p.draw_warp_with(&mut rng, image.nx, image.ny);
    let (mut img, lab) = if warp.is_identity() {
        (image.clone(), labels.clone())
    } else {
        warp.apply(image, labels)?
    };
    let std = p.noise_scale * plane_std(image);
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut img.data {
            *v = (f64::from(*v) + normal.sample(&mut rng)) as f32;
        }
    }
    Ok((img, lab))
}
