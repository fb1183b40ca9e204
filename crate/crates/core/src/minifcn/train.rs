//! Slice-wise training loop with optional augmentation and class balancing.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::class_weights;
use super::optim::{AdamState, Optimizer, OptimizerKind};
use super::{MiniFcn, NetConfig};
use crate::preprocess::{augment_slice, AugmentParams};
use crate::seed::{derive_named, stream_rng};
use crate::volgrid::Plane;
use crate::{Error, Result};

/// One training example: an image slice and its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Plane<f32>,
    pub truth: Plane<u8>,
}

/// Where class-balancing weights are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceScope {
    /// Per slice; slices without foreground (or background) get unit weights.
    #[default]
    Slice,
    /// One foreground weight from the class counts of the whole training set.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub class_balancing: bool,
    pub balance_scope: BalanceScope,
    /// Evaluate every this many iterations; the final iteration is always evaluated.
    pub eval_every: usize,
    /// Cap on training slices scored per evaluation (evenly spaced).
    pub eval_train_slices: usize,
    pub seed: u64,
    pub augment: Option<AugmentParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            lr: 0.001,
            momentum: 0.8,
            weight_decay: 0.0005,
            adam_eps: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            iterations: 2000,
            class_balancing: true,
            balance_scope: BalanceScope::Slice,
            eval_every: 250,
            eval_train_slices: 64,
            seed: 0,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be >= 1");
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    fn optimizer(&self, n: usize) -> Optimizer<f32> {
        let f = |x: f64| x as f32;
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: f(self.lr),
                momentum: f(self.momentum),
                weight_decay: f(self.weight_decay),
                velocity: vec![0.0; n],
            },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: f(self.lr),
                eps: f(self.adam_eps),
                beta1: f(self.beta1),
                beta2: f(self.beta2),
                weight_decay: f(self.weight_decay),
                state: AdamState::new(n),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    /// Mean batch loss since the previous record.
    pub loss: f64,
    pub train_dice: f64,
    pub test_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<CurveRecord>,
}

impl TrainingCurve {
    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,train_dice,test_dice")?;
        for r in &self.records {
            let test = r.test_dice.map(|d| format!("{d:.6}")).unwrap_or_default();
            writeln!(w, "{},{:.6},{:.6},{}", r.iteration, r.loss, r.train_dice, test)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both are empty.
pub fn dice_score(pred: &[u8], truth: &[u8]) -> f64 {
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p != 0, t != 0);
        inter += usize::from(p && t);
        a += usize::from(p);
        b += usize::from(t);
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Dice pooled over all pixels of `samples`, thresholding at 0.5.
pub fn evaluate_dice(net: &MiniFcn<f32>, samples: &[SliceSample]) -> Result<f64> {
    let images: Vec<Plane<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    let probs = net.forward(&images)?;
    let pred: Vec<u8> = probs
        .iter()
        .flat_map(|p| p.data.iter().map(|&v| u8::from(v > 0.5)))
        .collect();
    let truth: Vec<u8> = samples.iter().flat_map(|s| s.truth.data.iter().copied()).collect();
    Ok(dice_score(&pred, &truth))
}

fn evenly_spaced(samples: &[SliceSample], max: usize) -> Vec<SliceSample> {
    if samples.len() <= max {
        return samples.to_vec();
    }
    (0..max)
        .map(|i| samples[i * samples.len() / max].clone())
        .collect()
}

fn dataset_fg_weight(samples: &[SliceSample]) -> Result<f32> {
    let fg: usize = samples
        .iter()
        .map(|s| s.truth.data.iter().filter(|&&t| t != 0).count())
        .sum();
    let total: usize = samples.iter().map(|s| s.truth.data.len()).sum();
    if fg == 0 || fg == total {
        return Err(Error::DegenerateBalance(
            "training set lacks one of the two classes".into(),
        ));
    }
    Ok(((total - fg) as f64 / fg as f64) as f32)
}

fn pixel_weights(truth: &Plane<u8>, cfg: &TrainConfig, dataset_w: Option<f32>) -> Vec<f32> {
    if !cfg.class_balancing {
        return vec![1.0; truth.data.len()];
    }
    match dataset_w {
        Some(w) => truth.data.iter().map(|&t| if t != 0 { w } else { 1.0 }).collect(),
        None => class_weights(&truth.data).unwrap_or_else(|_| vec![1.0; truth.data.len()]),
    }
}

/// Trains a freshly initialised network. Initial weights come from `cfg.seed`.
pub fn train(
    net_cfg: NetConfig,
    cfg: &TrainConfig,
    train_set: &[SliceSample],
    test_set: &[SliceSample],
) -> Result<(MiniFcn<f32>, TrainingCurve)> {
    let mut rng = stream_rng(derive_named(cfg.seed, "init"), 0);
    let net = MiniFcn::new(net_cfg, &mut rng)?;
    train_from(net, cfg, train_set, test_set)
}

/// Continues training `net` (fine-tuning when it was loaded from a checkpoint).
///
/// Batches are drawn from a per-epoch seeded shuffle; augmentation draws are
/// indexed by global sample position, so results depend only on the seed.
pub fn train_from(
    mut net: MiniFcn<f32>,
    cfg: &TrainConfig,
    train_set: &[SliceSample],
    test_set: &[SliceSample],
) -> Result<(MiniFcn<f32>, TrainingCurve)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("no training slices".into()));
    }
    for s in train_set.iter().chain(test_set) {
        if s.image.shape() != s.truth.shape() {
            return Err(Error::ShapeMismatch {
                expected: s.image.shape().to_vec(),
                actual: s.truth.shape().to_vec(),
            });
        }
        net.check_input(s.image.nx, s.image.ny)?;
    }
    let dataset_w = match (cfg.class_balancing, cfg.balance_scope) {
        (true, BalanceScope::Dataset) => Some(dataset_fg_weight(train_set)?),
        _ => None,
    };
    let train_eval = evenly_spaced(train_set, cfg.eval_train_slices.max(1));
    let mut opt = cfg.optimizer(net.num_params());
    let mut curve = TrainingCurve::default();
    let shuffle_seed = derive_named(cfg.seed, "shuffle");
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut cursor = 0usize;
    let mut drawn = 0u64;
    let mut loss_acc = 0.0f64;
    let mut loss_n = 0usize;

    for it in 1..=cfg.iterations {
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut truths = Vec::with_capacity(cfg.batch_size);
        let mut weights = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut stream_rng(shuffle_seed, epoch));
                epoch += 1;
                cursor = 0;
            }
            let s = &train_set[order[cursor]];
            cursor += 1;
            let (img, lab) = match &cfg.augment {
                Some(a) => augment_slice(&s.image, &s.truth, a, drawn)?,
                None => (s.image.clone(), s.truth.clone()),
            };
            drawn += 1;
            weights.push(pixel_weights(&lab, cfg, dataset_w));
            images.push(img);
            truths.push(lab);
        }
        let (l, grads) = net.batch_loss_and_grad(&images, &truths, &weights)?;
        loss_acc += f64::from(l);
        loss_n += 1;
        opt.step(&mut net, &grads);

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let train_dice = evaluate_dice(&net, &train_eval)?;
            let test_dice = if test_set.is_empty() {
                None
            } else {
                Some(evaluate_dice(&net, test_set)?)
            };
            log::debug!("iter {it}: loss {:.4} train {train_dice:.4}", loss_acc / loss_n as f64);
            curve.records.push(CurveRecord {
                iteration: it,
                loss: loss_acc / loss_n as f64,
                train_dice,
                test_dice,
            });
            loss_acc = 0.0;
            loss_n = 0;
        }
    }
    Ok((net, curve))
}
