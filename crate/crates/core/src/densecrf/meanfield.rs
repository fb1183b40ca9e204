//! Synchronous mean-field inference.
//!
//! `Q_i(l) ∝ exp(-φ_i(l) - Σ_{l'≠l} Σ_{j≠i} k(i,j) Q_j(l'))`. With the Potts
//! model the inner sum is `K_i - S_i(l)` where `S_i(l) = Σ_{j≠i} k(i,j) Q_j(l)`;
//! `K_i` is shared by all labels and cancels in the normalisation.

use serde::{Deserialize, Serialize};

use super::{check_inputs, CrfParams, UnaryField};
use crate::volgrid::{Grid, LabelVolume, ProbVolume, Volume, NUM_LABELS};
use crate::{par, Error, Result};

/// Volumes up to this many voxels use exact all-pairs messages by default.
pub const EXACT_VOXEL_BUDGET: usize = 4096;

/// How messages `S_i(l)` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePassing {
    /// Exact up to `exact_budget` voxels, truncated window above.
    Auto { exact_budget: usize },
    /// All pairs, O(N²) per sweep.
    Exact,
    /// Kernels truncated at 3σ per axis: separable filtering for the
    /// positional term, a direct box window for the bilateral term.
    Window,
}

impl Default for MessagePassing {
    fn default() -> Self {
        Self::Auto {
            exact_budget: EXACT_VOXEL_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub q: ProbVolume,
    pub labels: LabelVolume,
}

/// Mean-field with the default message passing; returns `(Q, argmax Q)`.
pub fn mean_field(u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<(ProbVolume, LabelVolume)> {
    let r = mean_field_with(u, v, params, MessagePassing::default())?;
    Ok((r.q, r.labels))
}

pub fn mean_field_with(
    u: &UnaryField,
    v: &Volume,
    params: &CrfParams,
    method: MessagePassing,
) -> Result<MeanField> {
    check_inputs(u, v, params)?;
    let nl = u.num_labels();
    if nl > NUM_LABELS {
        return Err(Error::InvalidParameter(format!(
            "at most {NUM_LABELS} labels supported, got {nl}"
        )));
    }
    let grid = *u.grid();
    let exact = match method {
        MessagePassing::Exact => true,
        MessagePassing::Window => false,
        MessagePassing::Auto { exact_budget } => grid.len() <= exact_budget,
    };
    let mut q = vec![0.0f64; u.phi().len()];
    for (row, phi) in q.chunks_exact_mut(nl).zip(u.phi().chunks_exact(nl)) {
        normalize_exp(row, phi.iter().map(|p| -p));
    }
    let coupled = params.w_pos > 0.0 || params.w_bil > 0.0;
    if coupled {
        let intensity: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).collect();
        for _ in 0..params.iterations {
            let s = if exact {
                exact_messages(&grid, &intensity, &q, nl, params)
            } else {
                window_messages(&grid, &intensity, &q, nl, params)
            };
            for ((row, phi), s) in q
                .chunks_exact_mut(nl)
                .zip(u.phi().chunks_exact(nl))
                .zip(s.chunks_exact(nl))
            {
                normalize_exp(row, phi.iter().zip(s).map(|(p, s)| s - p));
            }
        }
    }
    let labels = q
        .chunks_exact(nl)
        .map(|r| {
            let mut best = 0;
            for (k, &p) in r.iter().enumerate().skip(1) {
                if p > r[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok(MeanField {
        q: ProbVolume::new(grid, nl, q.iter().map(|&x| x as f32).collect())?,
        labels: LabelVolume::new(grid, labels)?,
    })
}

/// `row[l] = exp(a_l - max a) / Σ`.
fn normalize_exp(row: &mut [f64], a: impl Iterator<Item = f64> + Clone) {
    let m = a.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (r, x) in row.iter_mut().zip(a) {
        *r = (x - m).exp();
        sum += *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
}

fn exact_messages(g: &Grid, intensity: &[f64], q: &[f64], nl: usize, p: &CrfParams) -> Vec<f64> {
    let n = g.len();
    let pos: Vec<[f64; 3]> = (0..n).map(|i| g.position_mm(i)).collect();
    let mut s = vec![0.0; n * nl];
    par::for_each_chunk_mut(&mut s, nl, |i, out| {
        for j in 0..n {
            if j == i {
                continue;
            }
            let d2: f64 = (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum();
            let di = intensity[i] - intensity[j];
            let k = super::kernel_value(d2, di * di, p);
            for (o, &qj) in out.iter_mut().zip(&q[j * nl..(j + 1) * nl]) {
                *o += k * qj;
            }
        }
    });
    s
}

fn radius(sigma: f64, spacing: f64, n: usize) -> usize {
    ((3.0 * sigma / spacing).ceil() as usize).min(n.saturating_sub(1))
}

/// Truncated 1D Gaussian taps `exp(-(d·spacing)² / 2σ²)` for `d = 0..=r`.
fn taps(sigma: f64, spacing: f64, r: usize) -> Vec<f64> {
    (0..=r)
        .map(|d| {
            let x = d as f64 * spacing;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Separable truncated Gaussian filter of a label-innermost field, self term included.
fn gaussian_filter(g: &Grid, field: &[f64], nl: usize, sigma: f64) -> Vec<f64> {
    let [nx, ny, _] = g.shape;
    let plane = nx * ny * nl;
    let mut a = field.to_vec();
    let mut b = vec![0.0; field.len()];
    for axis in 0..3 {
        let n = g.shape[axis];
        let r = radius(sigma, g.spacing[axis], n);
        let w = taps(sigma, g.spacing[axis], r);
        let stride = [nl, nx * nl, plane][axis];
        let src = &a;
        par::for_each_chunk_mut(&mut b, plane, |z, out| {
            for y in 0..ny {
                for x in 0..nx {
                    let c = [x, y, z][axis];
                    let lo = c.saturating_sub(r);
                    let hi = (c + r).min(n - 1);
                    let local = (x + nx * y) * nl;
                    let global = z * plane + local;
                    for l in 0..nl {
                        let mut acc = 0.0;
                        for t in lo..=hi {
                            let j = global - c * stride + t * stride;
                            acc += w[c.abs_diff(t)] * src[j + l];
                        }
                        out[local + l] = acc;
                    }
                }
            }
        });
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// Neighbour offsets in the 3σ box with their weighted spatial factor; the
/// centre itself is excluded.
fn bilateral_offsets(g: &Grid, p: &CrfParams) -> Vec<([isize; 3], f64)> {
    let r = [0, 1, 2].map(|a| radius(p.sigma_bil, g.spacing[a], g.shape[a]) as isize);
    let mut out = Vec::new();
    for dz in -r[2]..=r[2] {
        for dy in -r[1]..=r[1] {
            for dx in -r[0]..=r[0] {
                let mm = [dx, dy, dz].map(|d| d as f64);
                let d2: f64 = (0..3).map(|a| (mm[a] * g.spacing[a]).powi(2)).sum();
                if d2 == 0.0 {
                    continue;
                }
                out.push(([dx, dy, dz], p.w_bil * (-d2 / (2.0 * p.sigma_bil * p.sigma_bil)).exp()));
            }
        }
    }
    out
}

/// `exp(-x)` for `x >= 0` by linear interpolation on a uniform table; 0 past
/// the table end, where `exp(-x)` is below 1e-13.
struct NegExp {
    inv_step: f64,
    table: Vec<f64>,
}

impl NegExp {
    const MAX: f64 = 30.0;
    const STEPS: usize = 1 << 14;

    fn new() -> Self {
        let step = Self::MAX / Self::STEPS as f64;
        Self {
            inv_step: 1.0 / step,
            table: (0..=Self::STEPS + 1).map(|k| (-(k as f64) * step).exp()).collect(),
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let t = x * self.inv_step;
        if t >= Self::STEPS as f64 {
            return 0.0;
        }
        let k = t as usize;
        let f = t - k as f64;
        self.table[k] + f * (self.table[k + 1] - self.table[k])
    }
}

fn window_messages(g: &Grid, intensity: &[f64], q: &[f64], nl: usize, p: &CrfParams) -> Vec<f64> {
    let [nx, ny, nz] = g.shape;
    let mut s = vec![0.0; q.len()];
    if p.w_pos > 0.0 {
        let f = gaussian_filter(g, q, nl, p.sigma_pos);
        for ((o, &fv), &qv) in s.iter_mut().zip(&f).zip(q) {
            *o = p.w_pos * (fv - qv);
        }
    }
    if p.w_bil > 0.0 {
        let offsets = bilateral_offsets(g, p);
        let inv2si = 1.0 / (2.0 * p.sigma_int * p.sigma_int);
        let neg_exp = NegExp::new();
        let plane = nx * ny * nl;
        let span = |c: isize, n: usize| (0.max(-c) as usize, (n as isize - 0.max(c)).max(0) as usize);
        par::for_each_chunk_mut(&mut s, plane, |z, out| {
            for &(d, w) in &offsets {
                let zz = z as isize + d[2];
                if zz < 0 || zz >= nz as isize {
                    continue;
                }
                let (x0, x1) = span(d[0], nx);
                let (y0, y1) = span(d[1], ny);
                let shift = d[0] + nx as isize * (d[1] + ny as isize * d[2]);
                for y in y0..y1 {
                    let (a, b) = (nx * (y + ny * z) + x0, nx * (y + ny * z) + x1);
                    let (ja, jb) = ((a as isize + shift) as usize, (b as isize + shift) as usize);
                    let local = (x0 + nx * y) * nl..(x1 + nx * y) * nl;
                    let rows = out[local]
                        .chunks_exact_mut(nl)
                        .zip(&intensity[a..b])
                        .zip(&intensity[ja..jb])
                        .zip(q[ja * nl..jb * nl].chunks_exact(nl));
                    for (((o, &ii), &ij), qj) in rows {
                        let di = ii - ij;
                        let k = w * neg_exp.eval(di * di * inv2si);
                        for (o, &qv) in o.iter_mut().zip(qj) {
                            *o += k * qv;
                        }
                    }
                }
            }
        });
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_filter_matches_direct_sum() {
        let g = Grid::new([5, 4, 3], [1.0, 0.5, 2.0]).unwrap();
        let field: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64).collect();
        let sigma = 0.8;
        let f = gaussian_filter(&g, &field, 1, sigma);
        for i in 0..g.len() {
            let ci = g.coords(i);
            let mut expect = 0.0;
            for j in 0..g.len() {
                let cj = g.coords(j);
                let ok = (0..3).all(|a| {
                    ci[a].abs_diff(cj[a]) <= radius(sigma, g.spacing[a], g.shape[a])
                });
                if ok {
                    let (pi, pj) = (g.position_mm(i), g.position_mm(j));
                    let d2: f64 = (0..3).map(|k| (pi[k] - pj[k]).powi(2)).sum();
                    expect += (-d2 / (2.0 * sigma * sigma)).exp() * field[j];
                }
            }
            assert!((f[i] - expect).abs() < 1e-12, "voxel {i}");
        }
    }

    #[test]
    fn untruncated_window_equals_exact_messages() {
        // radius 3σ covers the whole 4x4x3 volume, so nothing is dropped; the
        // only difference left is the interpolated intensity kernel
        let g = Grid::new([4, 4, 3], [1.0, 1.0, 1.5]).unwrap();
        let intensity: Vec<f64> = (0..g.len()).map(|i| (i % 5) as f64 * 0.1).collect();
        let q: Vec<f64> = (0..g.len()).flat_map(|i| {
            let a = (i % 7) as f64 / 7.0;
            [a, 1.0 - a]
        }).collect();
        let p = CrfParams {
            w_pos: 0.7,
            w_bil: 1.3,
            sigma_pos: 2.0,
            sigma_bil: 3.0,
            sigma_int: 0.2,
            iterations: 1,
        };
        let e = exact_messages(&g, &intensity, &q, 2, &p);
        let w = window_messages(&g, &intensity, &q, 2, &p);
        let bound = p.w_bil * g.len() as f64 * 1e-6;
        for (a, b) in e.iter().zip(&w) {
            assert!((a - b).abs() < bound, "{a} vs {b}");
        }
    }

    #[test]
    fn interpolated_exp_is_close() {
        let f = NegExp::new();
        let mut worst = 0.0f64;
        for k in 0..200_000 {
            let x = k as f64 * 35.0 / 200_000.0;
            worst = worst.max((f.eval(x) - (-x).exp()).abs());
        }
        // linear interpolation error is at most step² / 8
        let step = NegExp::MAX / NegExp::STEPS as f64;
        assert!(worst <= step * step / 8.0 + 1e-13, "{worst:e}");
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(NegExp::MAX + 1.0), 0.0);
    }
}
