//! Two-step inference: the organ network runs on every axial slice, its
//! thresholded map defines a region of interest, and the lesion network runs
//! on the masked, cropped and resampled ROI. Lesions are confined to the
//! organ mask.

use serde::{Deserialize, Serialize};

use crate::densecrf::{refine_with, CrfParams, MessagePassing};
use crate::minifcn::MiniFcn;
use crate::volgrid::{
    apply_mask, embed, embed_scalar, mask_bbox, Interpolation, LabelVolume, ProbVolume,
    RoiTransform, Volume,
};
use crate::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const LIVER: u8 = 1;
pub const LESION: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Voxels with liver probability strictly above this are liver.
    pub liver_threshold: f32,
    pub lesion_threshold: f32,
    /// Dilation of the liver bounding box before cropping.
    pub roi_margin_vox: usize,
    /// Shape the ROI is resampled to for the lesion network. A zero keeps the
    /// bounding-box extent along that axis.
    pub roi_target_shape: [usize; 3],
    /// Intensity written to non-liver voxels of the ROI.
    pub fill_value: f32,
    /// Keep only the largest 6-connected component of the liver mask.
    pub largest_component: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            liver_threshold: 0.5,
            lesion_threshold: 0.5,
            roi_margin_vox: 4,
            roi_target_shape: [64, 64, 0],
            fill_value: 0.0,
            largest_component: false,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("liver", self.liver_threshold), ("lesion", self.lesion_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} threshold must lie in (0, 1), got {t}"
                )));
            }
        }
        if !self.fill_value.is_finite() {
            return Err(Error::InvalidParameter("fill value must be finite".into()));
        }
        Ok(())
    }

    /// Target shape for a bounding box of `bbox_shape` voxels.
    pub fn resolve_target(&self, bbox_shape: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| match self.roi_target_shape[a] {
            0 => bbox_shape[a],
            n => n,
        })
    }
}

/// Liver-masked ROI: non-liver voxels set to the fill value, cropped to the
/// dilated liver bounding box and resampled for the lesion network.
pub fn liver_roi(v: &Volume, liver: &LabelVolume, cfg: &CascadeConfig) -> Result<(Volume, RoiTransform)> {
    v.grid().ensure_same(liver.grid())?;
    let (lo, hi) = mask_bbox(liver, cfg.roi_margin_vox)?;
    let bbox = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let t = RoiTransform::new(lo, hi, liver.grid(), cfg.resolve_target(bbox), Interpolation::Linear)?;
    let masked = apply_mask(v, liver, cfg.fill_value)?;
    Ok((t.crop_volume(&masked)?, t))
}

/// Foreground probabilities of `net` on every axial slice of `v`, stacked.
pub fn segment_volume(net: &MiniFcn<f32>, v: &Volume) -> Result<ProbVolume> {
    let [nx, ny, nz] = v.shape();
    net.check_input(nx, ny)?;
    let slices: Vec<_> = (0..nz).map(|z| v.slice_z(z)).collect();
    let fg: Vec<f32> = net.forward(&slices)?.into_iter().flat_map(|p| p.data).collect();
    ProbVolume::from_foreground(*v.grid(), &fg)
}

fn threshold(fg: &[f32], t: f32) -> Vec<u8> {
    fg.iter().map(|&p| u8::from(p > t)).collect()
}

/// Largest 6-connected component of a binary mask; ties go to the component
/// containing the lowest voxel index.
pub fn largest_component(mask: &LabelVolume) -> LabelVolume {
    let g = *mask.grid();
    let [nx, ny, nz] = g.shape;
    let mut comp = vec![u32::MAX; g.len()];
    let mut best = (0usize, u32::MAX);
    let mut stack = Vec::new();
    let mut id = 0u32;
    for seed in 0..g.len() {
        if mask.labels()[seed] == 0 || comp[seed] != u32::MAX {
            continue;
        }
        comp[seed] = id;
        stack.push(seed);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let [x, y, z] = g.coords(i);
            let mut visit = |j: usize| {
                if mask.labels()[j] != 0 && comp[j] == u32::MAX {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        if size > best.0 {
            best = (size, id);
        }
        id += 1;
    }
    let labels = comp.iter().map(|&c| u8::from(c != u32::MAX && c == best.1)).collect();
    LabelVolume::new(g, labels).expect("same grid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    /// 0 background, 1 liver, 2 lesion.
    pub labels: LabelVolume,
    pub liver: ProbVolume,
    /// Zero outside the liver mask.
    pub lesion: ProbVolume,
    /// `None` when the liver mask came out empty.
    pub roi: Option<RoiTransform>,
}

impl CascadeOutput {
    pub fn empty_roi(&self) -> bool {
        self.roi.is_none()
    }

    pub fn liver_mask(&self) -> LabelVolume {
        self.labels.select(&[LIVER, LESION])
    }
}

fn compose(liver: &[u8], lesion: &[u8]) -> Vec<u8> {
    liver
        .iter()
        .zip(lesion)
        .map(|(&l, &s)| match (l != 0, s != 0) {
            (true, true) => LESION,
            (true, false) => LIVER,
            _ => BACKGROUND,
        })
        .collect()
}

/// Runs both stages on a preprocessed volume. An empty liver mask yields an
/// all-background result with `roi == None` and a logged warning.
pub fn run_cascade(
    liver_net: &MiniFcn<f32>,
    lesion_net: &MiniFcn<f32>,
    v: &Volume,
    cfg: &CascadeConfig,
) -> Result<CascadeOutput> {
    cfg.validate()?;
    let g = *v.grid();
    let liver = segment_volume(liver_net, v)?;
    let mut mask = LabelVolume::new(g, threshold(&liver.channel(1), cfg.liver_threshold))?;
    if cfg.largest_component {
        mask = largest_component(&mask);
    }
    if mask.count_nonzero() == 0 {
        log::warn!("liver mask is empty; returning an all-background labeling");
        return Ok(CascadeOutput {
            labels: LabelVolume::zeros(g),
            liver,
            lesion: ProbVolume::from_foreground(g, &vec![0.0; g.len()])?,
            roi: None,
        });
    }
    let (roi, t) = liver_roi(v, &mask, cfg)?;
    let roi_fg = segment_volume(lesion_net, &roi)?.channel(1);
    let roi_fg = Volume::new(*roi.grid(), roi_fg)?;
    let lesion_fg: Vec<f32> = embed_scalar(&roi_fg, &t, 0.0)?
        .data()
        .iter()
        .zip(mask.labels())
        .map(|(&p, &m)| if m != 0 { p.clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let lesion_mask = threshold(&lesion_fg, cfg.lesion_threshold);
    Ok(CascadeOutput {
        labels: LabelVolume::new(g, compose(mask.labels(), &lesion_mask))?,
        liver,
        lesion: ProbVolume::from_foreground(g, &lesion_fg)?,
        roi: Some(t),
    })
}

/// Single-network baseline: the lesion network on the whole unmasked volume.
/// Lesion voxels get label 2, everything else 0.
pub fn run_single(net: &MiniFcn<f32>, v: &Volume, cfg: &CascadeConfig) -> Result<LabelVolume> {
    cfg.validate()?;
    let fg = segment_volume(net, v)?.channel(1);
    let labels = fg.iter().map(|&p| if p > cfg.lesion_threshold { LESION } else { BACKGROUND }).collect();
    LabelVolume::new(*v.grid(), labels)
}

/// Per-stage CRF settings; a `None` stage is left unrefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeCrf {
    pub liver: Option<CrfParams>,
    pub lesion: Option<CrfParams>,
    pub method: MessagePassing,
    /// Dilation of the liver bounding box that bounds the liver CRF.
    pub margin_vox: usize,
}

impl Default for CascadeCrf {
    fn default() -> Self {
        Self {
            liver: Some(CrfParams::default()),
            lesion: Some(CrfParams::default()),
            method: MessagePassing::Window,
            margin_vox: 8,
        }
    }
}

/// Domain of one CRF stage: the box of `support` dilated by `margin`, with
/// `p` and `v` cropped to it without resampling. `None` for an empty support.
pub fn stage_domain(
    p: &ProbVolume,
    v: &Volume,
    support: &LabelVolume,
    margin: usize,
) -> Result<Option<(ProbVolume, Volume, RoiTransform)>> {
    p.grid().ensure_same(v.grid())?;
    support.grid().ensure_same(v.grid())?;
    if support.count_nonzero() == 0 {
        return Ok(None);
    }
    let (lo, hi) = mask_bbox(support, margin)?;
    let shape = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let t = RoiTransform::new(lo, hi, v.grid(), shape, Interpolation::Linear)?;
    let fg = t.crop_volume(&Volume::new(*p.grid(), p.channel(1))?)?;
    let vc = t.crop_volume(v)?;
    Ok(Some((ProbVolume::from_foreground(*vc.grid(), fg.data())?, vc, t)))
}

/// Binary CRF of one stage inside its [`stage_domain`]; voxels outside the
/// domain are background.
pub fn refine_stage(
    p: &ProbVolume,
    v: &Volume,
    support: &LabelVolume,
    margin: usize,
    params: &CrfParams,
    method: MessagePassing,
) -> Result<LabelVolume> {
    match stage_domain(p, v, support, margin)? {
        None => Ok(LabelVolume::zeros(*v.grid())),
        Some((pc, vc, t)) => embed(&refine_with(&pc, &vc, params, method)?, &t),
    }
}

/// Refines the cascade output stage by stage: the liver map around the liver
/// mask, then the lesion map inside the refined liver's box. Lesions stay a
/// subset of the refined liver. With `largest_component` the refined liver
/// keeps only its largest component.
pub fn refine_cascade(
    out: &CascadeOutput,
    v: &Volume,
    crf: &CascadeCrf,
    cfg: &CascadeConfig,
) -> Result<LabelVolume> {
    let g = *v.grid();
    let mask = out.liver_mask();
    let liver = match &crf.liver {
        Some(params) => {
            let refined = refine_stage(&out.liver, v, &mask, crf.margin_vox, params, crf.method)?;
            if cfg.largest_component {
                largest_component(&refined)
            } else {
                refined
            }
        }
        None => mask,
    };
    let lesion = match &crf.lesion {
        Some(params) => refine_stage(&out.lesion, v, &liver, cfg.roi_margin_vox, params, crf.method)?,
        None => out.labels.select(&[LESION]),
    };
    LabelVolume::new(g, compose(liver.labels(), lesion.labels()))
}
