//! Synthetic abdomen-like phantoms with exact ground truth.
//!
//! A phantom is an ellipsoidal "liver" in a soft-tissue background, with
//! lesions (unions of one to three spheres, clipped to the liver) and
//! extrahepatic distractor blobs whose intensity matches the lesions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::volgrid::{Grid, LabelVolume, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiverSpec {
    /// Centre in voxels.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
    /// Random per-volume jitter of the centre, in voxels.
    pub center_jitter: f64,
    /// Random relative jitter of each radius (0.1 = ±10%).
    pub radius_jitter: f64,
    pub intensity: f32,
    /// Std of the additive liver texture.
    pub texture_std: f32,
}

impl Default for LiverSpec {
    fn default() -> Self {
        Self {
            center: [31.5, 31.5, 31.5],
            radii: [18.0, 14.0, 12.0],
            center_jitter: 2.0,
            radius_jitter: 0.08,
            intensity: 120.0,
            texture_std: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionSpec {
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Added to the liver intensity; negative is hypo-intense.
    pub intensity_offset: f32,
}

impl Default for LesionSpec {
    fn default() -> Self {
        Self {
            count_min: 1,
            count_max: 3,
            radius_min: 2.0,
            radius_max: 4.0,
            intensity_offset: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorSpec {
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self {
            count: 1,
            radius_min: 2.0,
            radius_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background: f32,
    pub liver: LiverSpec,
    pub lesions: LesionSpec,
    pub distractors: DistractorSpec,
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: [64, 64, 64],
            spacing: [1.0, 1.0, 2.0],
            background: 20.0,
            liver: LiverSpec::default(),
            lesions: LesionSpec::default(),
            distractors: DistractorSpec::default(),
            noise_std: 25.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.shape, self.spacing)?;
        let minor = self.liver.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(minor > 0.0) {
            return Err(Error::InvalidParameter("liver radii must be > 0".into()));
        }
        let l = &self.lesions;
        if l.count_min > l.count_max || l.radius_min > l.radius_max || l.radius_min <= 0.0 {
            return Err(Error::InvalidParameter("lesion ranges must be ordered and positive".into()));
        }
        if l.radius_max > minor * (1.0 - self.liver.radius_jitter) {
            return Err(Error::InvalidParameter(format!(
                "lesion radius {} exceeds liver minor radius {minor}",
                l.radius_max
            )));
        }
        let d = &self.distractors;
        if d.count > 0 && (d.radius_min > d.radius_max || d.radius_min <= 0.0) {
            return Err(Error::InvalidParameter("distractor radii must be ordered and positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.liver.texture_std >= 0.0) {
            return Err(Error::InvalidParameter("noise levels must be >= 0".into()));
        }
        Ok(())
    }
}

/// Geometry of one drawn phantom, kept for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomLayout {
    pub liver_center: [f64; 3],
    pub liver_radii: [f64; 3],
    /// Spheres `(center, radius)` per lesion.
    pub lesions: Vec<Vec<([f64; 3], f64)>>,
    pub distractors: Vec<([f64; 3], f64)>,
}

impl PhantomLayout {
    pub fn in_liver(&self, p: [f64; 3]) -> bool {
        in_ellipsoid(p, self.liver_center, self.liver_radii)
    }
}

fn in_ellipsoid(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
}

fn in_sphere(p: [f64; 3], c: [f64; 3], r: f64) -> bool {
    (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() <= r * r
}

fn voxel_pos(g: &Grid, i: usize) -> [f64; 3] {
    let [x, y, z] = g.coords(i);
    [x as f64, y as f64, z as f64]
}

fn draw_layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> PhantomLayout {
    let lv = &spec.liver;
    let jitter = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let liver_center = lv.center.map(|c| c + jitter(rng, lv.center_jitter));
    let liver_radii = lv.radii.map(|r| r * (1.0 + jitter(rng, lv.radius_jitter)));

    let ls = &spec.lesions;
    let n_lesions = rng.random_range(ls.count_min..=ls.count_max);
    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        let r = rng.random_range(ls.radius_min..=ls.radius_max);
        // centre strictly inside a shrunken ellipsoid so most of the lesion is liver
        let centre = loop {
            let u = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0f64));
            if u.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                break [0, 1, 2].map(|a| liver_center[a] + 0.6 * u[a] * liver_radii[a]);
            }
        };
        let extra = rng.random_range(0..=2usize);
        let mut spheres = vec![(centre, r)];
        for _ in 0..extra {
            let off = [0, 1, 2].map(|_| rng.random_range(-r..=r) * 0.8);
            let rr = r * rng.random_range(0.5..=0.9);
            spheres.push(([0, 1, 2].map(|a| centre[a] + off[a]), rr));
        }
        lesions.push(spheres);
    }

    let ds = &spec.distractors;
    let mut distractors = Vec::with_capacity(ds.count);
    let shape = spec.shape.map(|n| n as f64);
    for _ in 0..ds.count {
        let r = rng.random_range(ds.radius_min..=ds.radius_max);
        // rejection sampling: the whole ball must be outside the liver and inside the volume
        for _attempt in 0..1000 {
            let c = [0, 1, 2].map(|a| rng.random_range(r.min(shape[a] / 2.0)..=(shape[a] - 1.0 - r).max(shape[a] / 2.0)));
            let inflated = liver_radii.map(|x| x + r + 1.0);
            if !in_ellipsoid(c, liver_center, inflated) {
                distractors.push((c, r));
                break;
            }
        }
    }
    PhantomLayout {
        liver_center,
        liver_radii,
        lesions,
        distractors,
    }
}

/// Generates one phantom volume in HU-like units with its exact labels.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, LabelVolume)> {
    generate_with_layout(spec).map(|(v, l, _)| (v, l))
}

/// As [`generate`], also returning the drawn geometry.
pub fn generate_with_layout(spec: &PhantomSpec) -> Result<(Volume, LabelVolume, PhantomLayout)> {
    spec.validate()?;
    let g = Grid::new(spec.shape, spec.spacing)?;
    let mut rng = seed::stream_rng(spec.seed, 0);
    let layout = draw_layout(spec, &mut rng);

    let lesion_value = spec.liver.intensity + spec.lesions.intensity_offset;
    let mut labels = vec![0u8; g.len()];
    let mut data = vec![spec.background; g.len()];
    for i in 0..g.len() {
        let p = voxel_pos(&g, i);
        if layout.in_liver(p) {
            let in_lesion = layout
                .lesions
                .iter()
                .any(|spheres| spheres.iter().any(|&(c, r)| in_sphere(p, c, r)));
            if in_lesion {
                labels[i] = 2;
                data[i] = lesion_value;
            } else {
                labels[i] = 1;
                data[i] = spec.liver.intensity;
            }
        } else if layout.distractors.iter().any(|&(c, r)| in_sphere(p, c, r)) {
            data[i] = lesion_value;
        }
    }

    let mut noise_rng = seed::stream_rng(spec.seed, 1);
    if spec.liver.texture_std > 0.0 {
        let tex = Normal::new(0.0, spec.liver.texture_std).expect("finite std");
        for (d, &l) in data.iter_mut().zip(&labels) {
            let t: f32 = tex.sample(&mut noise_rng);
            if l == 1 {
                *d += t;
            }
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
        for d in &mut data {
            *d += noise.sample(&mut noise_rng);
        }
    }
    Ok((
        Volume::new(g, data)?,
        LabelVolume::new(g, labels)?,
        layout,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub volume: Volume,
    pub labels: LabelVolume,
}

/// Generates `n` phantoms with per-case seeds derived from `seed` and a
/// seeded train/test split with `round(n * train_fraction)` training cases
/// (at least one of each).
pub fn generate_dataset(
    base: &PhantomSpec,
    n: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Vec<PhantomCase>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 volumes, got {n}")));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidParameter("train_fraction must be in [0, 1]".into()));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(seed::derive_named(seed, "split"), 0));
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let specs: Vec<PhantomSpec> = (0..n)
        .map(|i| PhantomSpec {
            seed: seed::derive(seed, i as u64),
            ..base.clone()
        })
        .collect();
    let volumes = crate::par::map_slice(&specs, generate);
    volumes
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let (volume, labels) = r?;
            Ok(PhantomCase {
                id: format!("case_{i:03}"),
                seed: specs[i].seed,
                split: split[i],
                volume,
                labels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_spec() -> PhantomSpec {
        PhantomSpec {
            shape: [24, 20, 16],
            spacing: [1.0; 3],
            liver: LiverSpec {
                center: [11.0, 9.5, 8.0],
                radii: [7.0, 5.0, 4.0],
                center_jitter: 0.0,
                radius_jitter: 0.0,
                texture_std: 0.0,
                ..LiverSpec::default()
            },
            lesions: LesionSpec {
                count_min: 0,
                count_max: 0,
                ..LesionSpec::default()
            },
            distractors: DistractorSpec {
                count: 0,
                ..DistractorSpec::default()
            },
            noise_std: 0.0,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn noise_free_liver_only_matches_ellipsoid_scan() {
        let spec = plain_spec();
        let (v, l) = generate(&spec).unwrap();
        let mut distinct: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
        // independent membership scan
        let mut count = 0;
        for z in 0..16 {
            for y in 0..20 {
                for x in 0..24 {
                    let d = ((x as f64 - 11.0) / 7.0).powi(2)
                        + ((y as f64 - 9.5) / 5.0).powi(2)
                        + ((z as f64 - 8.0) / 4.0).powi(2);
                    count += usize::from(d <= 1.0);
                }
            }
        }
        assert_eq!(l.count(1), count);
        assert_eq!(l.count(2), 0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec {
            shape: [32, 32, 16],
            liver: LiverSpec {
                center: [15.5, 15.5, 7.5],
                radii: [9.0, 7.0, 5.0],
                ..LiverSpec::default()
            },
            seed: 77,
            ..PhantomSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.1, b.1);
        assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn default_spec_fractions_and_subsets() {
        for s in 0..4 {
            let spec = PhantomSpec {
                seed: s,
                ..PhantomSpec::default()
            };
            let (v, l, layout) = generate_with_layout(&spec).unwrap();
            let n = l.grid().len() as f64;
            let liver = (l.count(1) + l.count(2)) as f64 / n;
            let lesion = l.count(2) as f64 / n;
            assert!((0.03..=0.12).contains(&liver), "liver fraction {liver}");
            assert!(lesion < 0.01, "lesion fraction {lesion}");
            assert!(l.count(2) > 0);
            for i in 0..l.grid().len() {
                let p = voxel_pos(l.grid(), i);
                if l.labels()[i] == 2 {
                    assert!(layout.in_liver(p));
                }
                if layout.distractors.iter().any(|&(c, r)| in_sphere(p, c, r)) {
                    assert_eq!(l.labels()[i], 0);
                    assert!(!layout.in_liver(p));
                }
            }
            assert_eq!(layout.distractors.len(), 1);
            assert!(v.data().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn oversized_lesions_rejected() {
        let mut spec = PhantomSpec::default();
        spec.lesions.radius_max = 15.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn dataset_split_is_disjoint_and_reproducible() {
        let base = PhantomSpec {
            shape: [24, 24, 12],
            liver: LiverSpec {
                center: [11.5, 11.5, 5.5],
                radii: [7.0, 6.0, 4.0],
                ..LiverSpec::default()
            },
            lesions: LesionSpec {
                radius_min: 1.5,
                radius_max: 2.5,
                ..LesionSpec::default()
            },
            ..PhantomSpec::default()
        };
        let a = generate_dataset(&base, 10, 5, 0.8).unwrap();
        assert_eq!(a.iter().filter(|c| c.split == Split::Train).count(), 8);
        assert_eq!(a.iter().filter(|c| c.split == Split::Test).count(), 2);
        let b = generate_dataset(&base, 10, 5, 0.8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.split, y.split);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.volume, y.volume);
        }
        let seeds: std::collections::BTreeSet<u64> = a.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 10);
        assert!(generate_dataset(&base, 1, 5, 0.8).is_err());
    }
}
