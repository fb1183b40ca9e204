//! Cascaded fully-convolutional segmentation of volumetric images.
//!
//! The pipeline segments an organ slice by slice, crops the organ region of
//! interest, segments lesions inside it with a second network and refines
//! both maps with a dense 3D conditional random field:
//!
//! - [`volgrid`]: volume types, sidecar file format, resampling and ROI crops
//! - [`preprocess`]: HU windowing, histogram equalization, augmentation
//! - [`phantom`]: synthetic abdomen-like volumes with exact ground truth
//! - [`minifcn`]: a small U-Net style network, class-balanced loss, training
//! - [`cascade`]: two-stage organ → lesion inference
//! - [`densecrf`]: fully connected CRF, mean-field inference, parameter search
//! - [`metrics`]: Dice, VOE, RVD, ASD and MSD
//!
//! With the default `parallel` feature, data-parallel loops (per-slice
//! inference, per-sample gradients, per-voxel CRF updates, batch evaluation)
//! run on rayon. Every reduction happens in a fixed order so results are
//! bit-identical with and without the feature.

pub mod cascade;
pub mod dataset;
pub mod densecrf;
mod error;
pub mod metrics;
pub mod minifcn;
pub mod par;
pub mod phantom;
pub mod preprocess;
pub mod seed;
pub mod volgrid;

pub use error::{Error, Result};
