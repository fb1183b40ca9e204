//! Random search over CRF parameters, scored by mean foreground Dice.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{refine_with, CrfParams, MessagePassing};
use crate::minifcn::dice_score;
use crate::seed::stream_rng;
use crate::volgrid::{LabelVolume, ProbVolume, Volume};
use crate::{par, Error, Result};

/// Closed range sampled log-uniformly; `lo == hi` is a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange(pub f64, pub f64);

impl LogRange {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.0 > 0.0 && self.0 <= self.1 && self.1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} range must satisfy 0 < lo <= hi, got [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if self.0 == self.1 {
            return self.0;
        }
        (self.0.ln() + u * (self.1.ln() - self.0.ln())).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub w_pos: LogRange,
    pub w_bil: LogRange,
    pub sigma_pos: LogRange,
    pub sigma_bil: LogRange,
    pub sigma_int: LogRange,
    pub iterations: usize,
    /// Also score the zero-weight parameters as trial 0, on top of the budget.
    pub include_baseline: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            w_pos: LogRange(1e-2, 1e2),
            w_bil: LogRange(1e-2, 1e2),
            sigma_pos: LogRange(0.5, 32.0),
            sigma_bil: LogRange(0.5, 32.0),
            sigma_int: LogRange(0.01, 1.0),
            iterations: 5,
            include_baseline: false,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.w_pos.validate("w_pos")?;
        self.w_bil.validate("w_bil")?;
        self.sigma_pos.validate("sigma_pos")?;
        self.sigma_bil.validate("sigma_bil")?;
        self.sigma_int.validate("sigma_int")
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> CrfParams {
        CrfParams {
            w_pos: self.w_pos.sample(rng),
            w_bil: self.w_bil.sample(rng),
            sigma_pos: self.sigma_pos.sample(rng),
            sigma_bil: self.sigma_bil.sample(rng),
            sigma_int: self.sigma_int.sample(rng),
            iterations: self.iterations,
        }
    }
}

/// A training case: stage probabilities, reference intensities, binary truth.
#[derive(Debug, Clone)]
pub struct CrfCase {
    pub probs: ProbVolume,
    pub volume: Volume,
    pub truth: LabelVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: CrfParams,
    pub mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: CrfParams,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "trial,w_pos,w_bil,sigma_pos,sigma_bil,sigma_int,iterations,mean_dice")?;
        for t in &self.trials {
            let p = &t.params;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t.index, p.w_pos, p.w_bil, p.sigma_pos, p.sigma_bil, p.sigma_int, p.iterations, t.mean_dice
            )?;
        }
        Ok(())
    }
}

fn score(cases: &[CrfCase], params: &CrfParams, method: MessagePassing) -> Result<f64> {
    let mut sum = 0.0;
    for c in cases {
        let labels = refine_with(&c.probs, &c.volume, params, method)?;
        sum += dice_score(labels.labels(), c.truth.labels());
    }
    Ok(sum / cases.len() as f64)
}

/// Samples `budget` parameter sets from `space` and keeps the one with the
/// highest mean Dice of [`super::refine`] against the truths. Ties go to the
/// earliest trial. Trials are scored in parallel; the result depends only on
/// `seed`.
pub fn random_search(
    cases: &[CrfCase],
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    method: MessagePassing,
) -> Result<SearchResult> {
    space.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptyDataset("no CRF search cases".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    for c in cases {
        c.probs.grid().ensure_same(c.volume.grid())?;
        c.truth.grid().ensure_same(c.volume.grid())?;
    }
    let mut rng = stream_rng(seed, 0);
    let mut candidates = Vec::with_capacity(budget + 1);
    if space.include_baseline {
        candidates.push(CrfParams {
            w_pos: 0.0,
            w_bil: 0.0,
            iterations: space.iterations,
            ..CrfParams::default()
        });
    }
    candidates.extend((0..budget).map(|_| space.sample(&mut rng)));
    let scores = par::map_slice(&candidates, |p| score(cases, p, method));
    let mut trials = Vec::with_capacity(candidates.len());
    for (index, (params, s)) in candidates.into_iter().zip(scores).enumerate() {
        trials.push(Trial {
            index,
            params,
            mean_dice: s?,
        });
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.mean_dice > trials[best].mean_dice {
            best = i;
        }
    }
    Ok(SearchResult {
        best: trials[best].params,
        best_score: trials[best].mean_dice,
        trials,
    })
}
