//! Exact MAP labelings for tiny volumes.

use super::{check_inputs, kernel_matrix, CrfParams, UnaryField};
use crate::volgrid::{LabelVolume, Volume};
use crate::{Error, Result};

/// Search-space cap for [`brute_force_map`]: `|L|^N ≤ 2^BRUTE_FORCE_MAX_LOG2`.
pub const BRUTE_FORCE_MAX_LOG2: f64 = 27.0;

/// Cap for plain enumeration in [`brute_force_enumerate`].
const ENUMERATE_MAX_LOG2: f64 = 20.0;

fn check_size(u: &UnaryField, max_log2: f64) -> Result<()> {
    let bits = u.grid().len() as f64 * (u.num_labels() as f64).log2();
    if bits > max_log2 + 1e-9 {
        return Err(Error::TooLarge(format!(
            "{}^{} labelings exceed 2^{max_log2}",
            u.num_labels(),
            u.grid().len()
        )));
    }
    Ok(())
}

/// Global minimiser of the Gibbs energy; ties go to the lexicographically
/// smallest labeling (voxel 0 most significant).
///
/// Depth-first branch and bound in lexicographic order. The bound adds, for
/// every unassigned voxel, its cheapest label given the assigned ones;
/// pairwise terms among unassigned voxels are non-negative and dropped.
pub fn brute_force_map(u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<LabelVolume> {
    check_inputs(u, v, params)?;
    check_size(u, BRUTE_FORCE_MAX_LOG2)?;
    search(u, v, params, u64::MAX)
}

/// [`brute_force_map`] without the labeling-count cap: the search gives up with
/// [`Error::TooLarge`] after visiting `max_nodes` search nodes instead. Suits
/// larger instances whose energy landscape prunes well.
pub fn brute_force_map_bounded(
    u: &UnaryField,
    v: &Volume,
    params: &CrfParams,
    max_nodes: u64,
) -> Result<LabelVolume> {
    check_inputs(u, v, params)?;
    if u.grid().len() > super::ENERGY_MAX_VOXELS {
        return Err(Error::TooLarge(format!(
            "{} voxels exceed the exact energy limit of {}",
            u.grid().len(),
            super::ENERGY_MAX_VOXELS
        )));
    }
    search(u, v, params, max_nodes)
}

fn search(u: &UnaryField, v: &Volume, params: &CrfParams, max_nodes: u64) -> Result<LabelVolume> {
    let n = u.grid().len();
    let nl = u.num_labels();
    let k = kernel_matrix(v, params);
    let mut search = Search {
        n,
        nl,
        k: &k,
        cost: u.phi().to_vec(),
        current: vec![0u8; n],
        best: vec![0u8; n],
        best_e: f64::INFINITY,
        nodes: 0,
        max_nodes,
    };
    if !search.recurse(0, 0.0) {
        return Err(Error::TooLarge(format!("search exceeded {max_nodes} nodes")));
    }
    LabelVolume::new(*u.grid(), search.best)
}

struct Search<'a> {
    n: usize,
    nl: usize,
    k: &'a [f64],
    /// `cost[i*nl + l]`: unary plus pairwise cost of `l` at `i` against assigned voxels.
    cost: Vec<f64>,
    current: Vec<u8>,
    best: Vec<u8>,
    best_e: f64,
    nodes: u64,
    max_nodes: u64,
}

impl Search<'_> {
    fn bound(&self, depth: usize) -> f64 {
        (depth..self.n)
            .map(|i| {
                self.cost[i * self.nl..(i + 1) * self.nl]
                    .iter()
                    .fold(f64::INFINITY, |m, &c| m.min(c))
            })
            .sum()
    }

    /// Adds the pairwise cost of voxel `d` having label `l` to later voxels.
    fn assign(&mut self, d: usize, l: usize) {
        for i in (d + 1)..self.n {
            let kij = self.k[d * self.n + i];
            if kij == 0.0 {
                continue;
            }
            for m in 0..self.nl {
                if m != l {
                    self.cost[i * self.nl + m] += kij;
                }
            }
        }
    }

    /// Returns false once the node budget is spent.
    fn recurse(&mut self, depth: usize, partial: f64) -> bool {
        self.nodes += 1;
        if self.nodes > self.max_nodes {
            return false;
        }
        if depth == self.n {
            if partial < self.best_e {
                self.best_e = partial;
                self.best.copy_from_slice(&self.current);
            }
            return true;
        }
        // restored from a copy rather than subtracted, so costs never drift
        let saved = self.cost[(depth + 1) * self.nl..].to_vec();
        for l in 0..self.nl {
            let e = partial + self.cost[depth * self.nl + l];
            self.assign(depth, l);
            if e + self.bound(depth + 1) < self.best_e {
                self.current[depth] = l as u8;
                if !self.recurse(depth + 1, e) {
                    return false;
                }
            }
            self.cost[(depth + 1) * self.nl..].copy_from_slice(&saved);
        }
        true
    }
}

/// Plain exhaustive enumeration in lexicographic order (at most 2^20 labelings).
/// Independent of the branch-and-bound search; used to cross-check it.
pub fn brute_force_enumerate(u: &UnaryField, v: &Volume, params: &CrfParams) -> Result<LabelVolume> {
    check_inputs(u, v, params)?;
    check_size(u, ENUMERATE_MAX_LOG2)?;
    let n = u.grid().len();
    let nl = u.num_labels();
    let mut x = vec![0u8; n];
    let mut best = x.clone();
    let mut best_e = f64::INFINITY;
    loop {
        let e = super::energy_of(&x, u, v, params)?;
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&x);
        }
        // odometer increment, last voxel least significant
        let mut d = n;
        loop {
            if d == 0 {
                return LabelVolume::new(*u.grid(), best);
            }
            d -= 1;
            if usize::from(x[d]) + 1 < nl {
                x[d] += 1;
                break;
            }
            x[d] = 0;
        }
    }
}
