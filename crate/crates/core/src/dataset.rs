//! Training slices for the two networks.
//!
//! Liver samples are the axial slices of the preprocessed volume with the
//! merged liver+lesion mask as truth. Lesion samples come from the
//! liver-masked ROI built from a liver mask (the ground truth during
//! training), with the lesion mask cropped by the same transform.

use crate::cascade::{liver_roi, CascadeConfig, LESION, LIVER};
use crate::minifcn::SliceSample;
use crate::volgrid::{LabelVolume, Volume};
use crate::Result;

/// One sample per axial slice; truth is `labels ∈ {1, 2}`.
pub fn liver_slices(v: &Volume, labels: &LabelVolume) -> Result<Vec<SliceSample>> {
    v.grid().ensure_same(labels.grid())?;
    let truth = labels.select(&[LIVER, LESION]);
    Ok((0..v.shape()[2])
        .map(|z| SliceSample {
            image: v.slice_z(z),
            truth: truth.slice_z(z),
        })
        .collect())
}

/// One sample per axial slice of the ROI cut around `liver`; truth is
/// `labels == 2` resampled by nearest neighbour. An empty liver gives no samples.
pub fn lesion_slices(
    v: &Volume,
    labels: &LabelVolume,
    liver: &LabelVolume,
    cfg: &CascadeConfig,
) -> Result<Vec<SliceSample>> {
    v.grid().ensure_same(labels.grid())?;
    if liver.count_nonzero() == 0 {
        return Ok(Vec::new());
    }
    let (roi, t) = liver_roi(v, liver, cfg)?;
    // lesion truth outside the liver mask cannot be predicted by the cascade
    let lesion: Vec<u8> = labels
        .labels()
        .iter()
        .zip(liver.labels())
        .map(|(&l, &m)| u8::from(l == LESION && m != 0))
        .collect();
    let truth = t.crop_labels(&LabelVolume::new(*labels.grid(), lesion)?)?;
    Ok((0..roi.shape()[2])
        .map(|z| SliceSample {
            image: roi.slice_z(z),
            truth: truth.slice_z(z),
        })
        .collect())
}

/// Lesion samples from the ground-truth liver of `labels`.
pub fn lesion_slices_from_truth(
    v: &Volume,
    labels: &LabelVolume,
    cfg: &CascadeConfig,
) -> Result<Vec<SliceSample>> {
    lesion_slices(v, labels, &labels.select(&[LIVER, LESION]), cfg)
}
