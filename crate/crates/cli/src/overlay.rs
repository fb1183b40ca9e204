//! PNG overlays of axial slices. With a reference labeling, correct liver is
//! green, liver errors yellow, correct lesion blue and lesion errors red;
//! without one, liver and lesion are tinted green and blue.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cfcn_core::cascade::{BACKGROUND, LESION};
use cfcn_core::volgrid::{LabelVolume, Volume};
use image::{Rgb, RgbImage};

pub const GREEN: [u8; 3] = [0, 200, 0];
pub const YELLOW: [u8; 3] = [240, 220, 0];
pub const BLUE: [u8; 3] = [0, 90, 255];
pub const RED: [u8; 3] = [230, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    None,
    LiverCorrect,
    LiverError,
    LesionCorrect,
    LesionError,
}

/// Lesion classes take precedence over liver classes.
pub fn classify(pred: u8, truth: u8) -> Class {
    let (pl, tl) = (pred == LESION, truth == LESION);
    let (po, to) = (pred != BACKGROUND, truth != BACKGROUND);
    match () {
        _ if pl && tl => Class::LesionCorrect,
        _ if pl != tl => Class::LesionError,
        _ if po && to => Class::LiverCorrect,
        _ if po != to => Class::LiverError,
        _ => Class::None,
    }
}

/// Middle slice first, then every `every_k`-th slice from 0, without repeats.
pub fn overlay_slices(nz: usize, every_k: usize) -> Vec<usize> {
    let mut zs = vec![nz / 2];
    if every_k > 0 {
        zs.extend((0..nz).step_by(every_k).filter(|&z| z != nz / 2));
    }
    zs
}

fn gray(v: f32, lo: f32, hi: f32) -> u8 {
    if hi > lo {
        (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

fn tint(g: u8, c: [u8; 3]) -> [u8; 3] {
    c.map(|c| ((u16::from(g) + u16::from(c)) / 2) as u8)
}

/// Renders axial slice `z`; intensities are scaled by the volume's range.
pub fn render(image: &Volume, pred: &LabelVolume, truth: Option<&LabelVolume>, z: usize) -> RgbImage {
    let [nx, ny, _] = image.shape();
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let g = image.grid();
    RgbImage::from_fn(nx as u32, ny as u32, |x, y| {
        let i = g.index(x as usize, y as usize, z);
        let base = gray(image.data()[i], lo, hi);
        let p = pred.labels()[i];
        let px = match truth {
            Some(t) => match classify(p, t.labels()[i]) {
                Class::None => [base; 3],
                Class::LiverCorrect => GREEN,
                Class::LiverError => YELLOW,
                Class::LesionCorrect => BLUE,
                Class::LesionError => RED,
            },
            None => match p {
                BACKGROUND => [base; 3],
                LESION => tint(base, BLUE),
                _ => tint(base, GREEN),
            },
        };
        Rgb(px)
    })
}

/// Writes `<dir>/<name>_z<zzz>.png` for the configured slices.
pub fn write_overlays(
    dir: &Path,
    name: &str,
    image: &Volume,
    pred: &LabelVolume,
    truth: Option<&LabelVolume>,
    every_k: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = Vec::new();
    for z in overlay_slices(image.shape()[2], every_k) {
        let path = dir.join(format!("{name}_z{z:03}.png"));
        render(image, pred, truth, z)
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        out.push(path);
    }
    Ok(out)
}
