//! Segmentation quality metrics on binary masks with physical spacing.
//!
//! Surface voxels are foreground voxels with at least one 6-neighbour that is
//! background or outside the volume. Surface distances are measured between
//! voxel centres in millimetres. Each distance metric has a brute-force
//! reference (`*_brute`) and an exact distance-transform path.

use serde::{Deserialize, Serialize};

use crate::volgrid::{Grid, LabelVolume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    mask: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "{} mask values for {} voxels",
                mask.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, mask })
    }

    /// Foreground = voxels whose label is in `labels`.
    pub fn from_labels(v: &LabelVolume, labels: &[u8]) -> Self {
        Self {
            grid: *v.grid(),
            mask: v.labels().iter().map(|l| labels.contains(l)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

fn same_grid(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    a.grid.ensure_same(&b.grid)
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    same_grid(a, b)?;
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.mask.iter().zip(&b.mask) {
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    Ok((inter, na, nb))
}

/// Indices of surface voxels in increasing order.
pub fn surface_voxels(m: &BinaryMask) -> Vec<usize> {
    let [nx, ny, nz] = m.grid.shape;
    let at = |x: usize, y: usize, z: usize| m.mask[x + nx * (y + ny * z)];
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !at(x, y, z) {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if border
                    || !at(x - 1, y, z)
                    || !at(x + 1, y, z)
                    || !at(x, y - 1, z)
                    || !at(x, y + 1, z)
                    || !at(x, y, z - 1)
                    || !at(x, y, z + 1)
                {
                    out.push(x + nx * (y + ny * z));
                }
            }
        }
    }
    out
}

/// `2|A∩B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = overlap(a, b)?;
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * i as f64 / (na + nb) as f64
    })
}

/// Volumetric overlap error `100 (1 - |A∩B| / |A∪B|)`; 0 when both are empty.
pub fn voe(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = overlap(a, b)?;
    let union = na + nb - i;
    Ok(if union == 0 {
        0.0
    } else {
        100.0 * (1.0 - i as f64 / union as f64)
    })
}

/// Relative volume difference `100 (|B| - |A|) / |A|` with `A` the reference.
pub fn rvd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (_, na, nb) = overlap(a, b)?;
    if na == 0 {
        return Err(Error::EmptyMask("rvd reference is empty".into()));
    }
    Ok(100.0 * (nb as f64 - na as f64) / na as f64)
}

fn surfaces(a: &BinaryMask, b: &BinaryMask) -> Result<(Vec<usize>, Vec<usize>)> {
    same_grid(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask("surface distance needs two non-empty masks".into()));
    }
    Ok((surface_voxels(a), surface_voxels(b)))
}

fn dist2(g: &Grid, i: usize, j: usize) -> f64 {
    let (pi, pj) = (g.coords(i), g.coords(j));
    (0..3)
        .map(|k| {
            let d = (pi[k] as f64 - pj[k] as f64) * g.spacing[k];
            d * d
        })
        .sum()
}

/// Directed distances from each voxel of `from` to the nearest voxel of `to`, by scanning all pairs.
fn directed_brute(g: &Grid, from: &[usize], to: &[usize]) -> Vec<f64> {
    from.iter()
        .map(|&i| {
            to.iter()
                .map(|&j| dist2(g, i, j))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// 1D lower envelope of parabolas (Felzenszwalb and Huttenlocher) for
/// samples at positions `q * step`. `f` holds squared distances (inf = no
/// feature) and is overwritten with the transform.
fn edt_1d(f: &mut [f64], step: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * step;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..n {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - pos(v[k]);
        out.push(d * d + f[v[k]]);
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest of `features`.
pub fn squared_distance_transform(g: &Grid, features: &[usize]) -> Vec<f64> {
    let [nx, ny, nz] = g.shape;
    let mut d = vec![f64::INFINITY; g.len()];
    for &i in features {
        d[i] = 0.0;
    }
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    for (axis, n, stride) in [(0, nx, 1), (1, ny, nx), (2, nz, nx * ny)] {
        let step = g.spacing[axis];
        for start in 0..g.len() {
            // start of each line along `axis`
            if (start / stride) % n != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|q| d[start + q * stride]));
            edt_1d(&mut line, step, &mut v, &mut z, &mut out);
            for (q, &val) in line.iter().enumerate() {
                d[start + q * stride] = val;
            }
        }
    }
    d
}

fn directed_edt(g: &Grid, from: &[usize], to: &[usize]) -> Vec<f64> {
    let d = squared_distance_transform(g, to);
    from.iter().map(|&i| d[i].sqrt()).collect()
}

fn asd_from(da: &[f64], db: &[f64]) -> f64 {
    (da.iter().sum::<f64>() + db.iter().sum::<f64>()) / (da.len() + db.len()) as f64
}

fn msd_from(da: &[f64], db: &[f64]) -> f64 {
    da.iter().chain(db).fold(0.0, |m, &x| m.max(x))
}

/// Average symmetric surface distance (mm), distance-transform path.
pub fn asd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    Ok(asd_from(&directed_edt(&a.grid, &sa, &sb), &directed_edt(&a.grid, &sb, &sa)))
}

/// Maximum symmetric surface distance (mm), distance-transform path.
pub fn msd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    Ok(msd_from(&directed_edt(&a.grid, &sa, &sb), &directed_edt(&a.grid, &sb, &sa)))
}

/// ASD by scanning all surface pairs.
pub fn asd_brute(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    Ok(asd_from(&directed_brute(&a.grid, &sa, &sb), &directed_brute(&a.grid, &sb, &sa)))
}

/// MSD by scanning all surface pairs.
pub fn msd_brute(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    Ok(msd_from(&directed_brute(&a.grid, &sa, &sb), &directed_brute(&a.grid, &sb, &sa)))
}

/// Metrics for one structure of one case. `None` marks an undefined value
/// (empty reference for RVD, an empty mask for the surface distances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: u8,
    pub dice: f64,
    pub voe_pct: f64,
    pub rvd_pct: Option<f64>,
    pub asd_mm: Option<f64>,
    pub msd_mm: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case: String,
    pub rows: Vec<MetricRow>,
}

pub const FLAG_BOTH_EMPTY: &str = "both-empty";
pub const FLAG_PRED_EMPTY: &str = "pred-empty";
pub const FLAG_TRUTH_EMPTY: &str = "truth-empty";
/// Liver rows count lesion voxels as liver.
pub const FLAG_MERGED: &str = "merged-1-2";

/// Metrics of `pred` against `truth` (the reference) for one binary structure.
pub fn score_masks(label: u8, truth: &BinaryMask, pred: &BinaryMask) -> Result<MetricRow> {
    same_grid(truth, pred)?;
    let mut flags = Vec::new();
    let (te, pe) = (truth.is_empty(), pred.is_empty());
    match (te, pe) {
        (true, true) => flags.push(FLAG_BOTH_EMPTY.to_string()),
        (true, false) => flags.push(FLAG_TRUTH_EMPTY.to_string()),
        (false, true) => flags.push(FLAG_PRED_EMPTY.to_string()),
        _ => {}
    }
    let (asd_mm, msd_mm) = if te || pe {
        (None, None)
    } else {
        let (st, sp) = (surface_voxels(truth), surface_voxels(pred));
        let (dt, dp) = (directed_edt(&truth.grid, &st, &sp), directed_edt(&truth.grid, &sp, &st));
        (Some(asd_from(&dt, &dp)), Some(msd_from(&dt, &dp)))
    };
    Ok(MetricRow {
        label,
        dice: dice(truth, pred)?,
        voe_pct: voe(truth, pred)?,
        rvd_pct: if te { None } else { Some(rvd(truth, pred)?) },
        asd_mm,
        msd_mm,
        flags,
    })
}

/// Rows for the liver (labels 1 and 2 merged) and the lesion (label 2).
pub fn evaluate(case: &str, pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricReport> {
    pred.grid().ensure_same(truth.grid())?;
    let mut liver = score_masks(
        1,
        &BinaryMask::from_labels(truth, &[1, 2]),
        &BinaryMask::from_labels(pred, &[1, 2]),
    )?;
    liver.flags.push(FLAG_MERGED.to_string());
    let lesion = score_masks(
        2,
        &BinaryMask::from_labels(truth, &[2]),
        &BinaryMask::from_labels(pred, &[2]),
    )?;
    Ok(MetricReport {
        case: case.to_string(),
        rows: vec![liver, lesion],
    })
}

/// Evaluates many `(case, pred, truth)` triples, in parallel, in input order.
pub fn evaluate_batch(cases: &[(String, LabelVolume, LabelVolume)]) -> Result<Vec<MetricReport>> {
    crate::par::map_slice(cases, |(c, p, t)| evaluate(c, p, t))
        .into_iter()
        .collect()
}

/// Mean and population standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub label: u8,
    pub dice: Option<MeanStd>,
    pub voe_pct: Option<MeanStd>,
    pub rvd_pct: Option<MeanStd>,
    pub asd_mm: Option<MeanStd>,
    pub msd_mm: Option<MeanStd>,
}

/// Per-label unweighted mean ± std across cases.
pub fn summarize(reports: &[MetricReport], label: u8) -> MetricSummary {
    let rows: Vec<&MetricRow> = reports
        .iter()
        .flat_map(|r| r.rows.iter().filter(|row| row.label == label))
        .collect();
    MetricSummary {
        label,
        dice: MeanStd::of(rows.iter().map(|r| r.dice)),
        voe_pct: MeanStd::of(rows.iter().map(|r| r.voe_pct)),
        rvd_pct: MeanStd::of(rows.iter().filter_map(|r| r.rvd_pct)),
        asd_mm: MeanStd::of(rows.iter().filter_map(|r| r.asd_mm)),
        msd_mm: MeanStd::of(rows.iter().filter_map(|r| r.msd_mm)),
    }
}
