//! Fully connected 3D CRF with Potts pairwise potentials.
//!
//! The Gibbs energy of a labeling `x` is
//!
//! ```text
//! E(x) = Σ_i φ_i(x_i) + Σ_{i<j} 1(x_i ≠ x_j) k(i, j)
//! k(i, j) = w_pos exp(-|p_i - p_j|² / 2σ_pos²)
//!         + w_bil exp(-|p_i - p_j|² / 2σ_bil² - |I_i - I_j|² / 2σ_int²)
//! ```
//!
//! with `φ_i(l) = -log P(x_i = l | I)` and positions `p` in millimetres.

mod brute;
mod meanfield;
mod search;

pub use brute::{brute_force_enumerate, brute_force_map, brute_force_map_bounded, BRUTE_FORCE_MAX_LOG2};
pub use meanfield::{mean_field, mean_field_with, MeanField, MessagePassing, EXACT_VOXEL_BUDGET};
pub use search::{random_search, CrfCase, LogRange, SearchResult, SearchSpace, Trial};

use serde::{Deserialize, Serialize};

use crate::volgrid::{Grid, LabelVolume, ProbVolume, Volume};
use crate::{Error, Result};

/// Probabilities are clamped to `[UNARY_CLAMP, 1]` before the log.
pub const UNARY_CLAMP: f64 = 1e-7;

/// Voxel limit for exact O(N²) energy evaluation.
pub const ENERGY_MAX_VOXELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub w_pos: f64,
    pub w_bil: f64,
    /// Millimetres.
    pub sigma_pos: f64,
    /// Millimetres.
    pub sigma_bil: f64,
    /// Intensity units of the reference volume.
    pub sigma_int: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_pos: 1.0,
            w_bil: 1.0,
            sigma_pos: 1.0,
            sigma_bil: 2.0,
            sigma_int: 0.1,
            iterations: 5,
        }
    }
}

impl CrfParams {
    /// Parameters with no pairwise coupling.
    pub fn unary_only() -> Self {
        Self {
            w_pos: 0.0,
            w_bil: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.sigma_pos, self.sigma_bil, self.sigma_int];
        if sig.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter("CRF kernel widths must be > 0".into()));
        }
        if [self.w_pos, self.w_bil].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("CRF weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-voxel, per-label potentials `φ_i(l)`, label axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    grid: Grid,
    num_labels: usize,
    phi: Vec<f64>,
}

impl UnaryField {
    pub fn new(grid: Grid, num_labels: usize, phi: Vec<f64>) -> Result<Self> {
        if num_labels == 0 || phi.len() != grid.len() * num_labels {
            return Err(Error::SizeMismatch(format!(
                "{} potentials for {} voxels x {num_labels} labels",
                phi.len(),
                grid.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite unary potential".into()));
        }
        Ok(Self {
            grid,
            num_labels,
            phi,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    #[inline]
    pub fn voxel(&self, i: usize) -> &[f64] {
        &self.phi[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Per-voxel argmin of the potentials, ties to the smaller label.
    pub fn argmin(&self) -> Vec<u8> {
        self.phi
            .chunks_exact(self.num_labels)
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate().skip(1) {
                    if v < r[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// `φ = -log clamp(p, 1e-7, 1)`.
pub fn unaries_from_probs(p: &ProbVolume) -> UnaryField {
    UnaryField {
        grid: *p.grid(),
        num_labels: p.num_labels(),
        phi: p
            .probs()
            .iter()
            .map(|&v| -f64::from(v).clamp(UNARY_CLAMP, 1.0).ln())
            .collect(),
    }
}

/// Pairwise kernel `k(i, j)` between voxels `i` and `j` of `v`.
pub fn pairwise_kernel(i: usize, j: usize, v: &Volume, params: &CrfParams) -> f64 {
    let g = v.grid();
    let (pi, pj) = (g.position_mm(i), g.position_mm(j));
    let d2: f64 = (0..3).map(|k| (pi[k] - pj[k]).powi(2)).sum();
    let di = f64::from(v.data()[i]) - f64::from(v.data()[j]);
    kernel_value(d2, di * di, params)
}

#[inline]
pub(crate) fn kernel_value(d2: f64, di2: f64, p: &CrfParams) -> f64 {
    let mut k = 0.0;
    if p.w_pos != 0.0 {
        k += p.w_pos * (-d2 / (2.0 * p.sigma_pos * p.sigma_pos)).exp();
    }
    if p.w_bil != 0.0 {
        k += p.w_bil
            * (-d2 / (2.0 * p.sigma_bil * p.sigma_bil) - di2 / (2.0 * p.sigma_int * p.sigma_int)).exp();
    }
    k
}

fn check_inputs(u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<()> {
    params.validate()?;
    u.grid.ensure_same(v.grid())
}

/// Dense pairwise kernel matrix, row-major `N x N` with zero diagonal.
pub(crate) fn kernel_matrix(v: &Volume, params: &CrfParams) -> Vec<f64> {
    let n = v.grid().len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let kij = pairwise_kernel(i, j, v, params);
            k[i * n + j] = kij;
            k[j * n + i] = kij;
        }
    }
    k
}

/// Exact Gibbs energy of `labels`; refuses volumes above [`ENERGY_MAX_VOXELS`].
pub fn energy(labels: &LabelVolume, u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<f64> {
    energy_of(labels.labels(), u, v, params)
}

pub(crate) fn energy_of(labels: &[u8], u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<f64> {
    check_inputs(u, v, params)?;
    let n = u.grid.len();
    if labels.len() != n {
        return Err(Error::SizeMismatch(format!("{} labels for {n} voxels", labels.len())));
    }
    if n > ENERGY_MAX_VOXELS {
        return Err(Error::TooLarge(format!(
            "{n} voxels exceed the exact energy limit of {ENERGY_MAX_VOXELS}"
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= u.num_labels) {
        return Err(Error::InvalidValue(format!("label {l} outside the unary label set")));
    }
    let mut e: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| u.voxel(i)[usize::from(l)])
        .sum();
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] != labels[j] {
                e += pairwise_kernel(i, j, v, params);
            }
        }
    }
    Ok(e)
}

/// Unaries from `p`, mean-field inference, per-voxel argmax.
pub fn refine(p: &ProbVolume, v: &Volume, params: &CrfParams) -> Result<LabelVolume> {
    refine_with(p, v, params, MessagePassing::default())
}

pub fn refine_with(
    p: &ProbVolume,
    v: &Volume,
    params: &CrfParams,
    method: MessagePassing,
) -> Result<LabelVolume> {
    p.grid().ensure_same(v.grid())?;
    Ok(mean_field_with(&unaries_from_probs(p), v, params, method)?.labels)
}
