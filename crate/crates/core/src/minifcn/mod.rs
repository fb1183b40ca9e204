//! A small encoder-decoder FCN with U-Net skip connections.
//!
//! Level `l` of the encoder runs two 3x3 conv+ReLU layers with
//! `base_channels * 2^l` channels and, except at the bottom, a 2x2 max-pool.
//! Each decoder level upsamples (nearest x2) followed by a 3x3 conv+ReLU,
//! concatenates the encoder features of the same level and applies two more
//! 3x3 conv+ReLU layers. A 1x1 conv produces one logit per pixel and the
//! logistic function turns it into a foreground probability. All
//! convolutions are same-padded so the output shape equals the input shape.

mod checkpoint;
mod layers;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, CheckpointHeader, TensorEntry};
pub use layers::{Real, Tensor};
pub use loss::{class_weights, loss, loss_grad_from_logits, sigmoid, PROB_CLAMP};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};
pub use train::{
    dice_score, evaluate_dice, train, train_from, BalanceScope, CurveRecord, SliceSample,
    TrainConfig, TrainingCurve,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volgrid::Plane;
use crate::{Error, Result};
use layers::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Number of down/up levels.
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub in_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            kernel: 3,
            in_channels: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::InvalidParameter("channel counts must be >= 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidParameter("kernel size must be odd".into()));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input sides must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    /// `(name, cin, cout, kernel)` for every conv layer, in parameter order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let k = self.kernel;
        let mut v = Vec::new();
        for l in 0..=self.depth {
            let cin = if l == 0 {
                self.in_channels
            } else {
                self.channels(l - 1)
            };
            v.push((format!("enc{l}.conv1"), cin, self.channels(l), k));
            v.push((format!("enc{l}.conv2"), self.channels(l), self.channels(l), k));
        }
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            v.push((format!("dec{l}.up"), self.channels(l + 1), c, k));
            v.push((format!("dec{l}.conv1"), 2 * c, c, k));
            v.push((format!("dec{l}.conv2"), c, c, k));
        }
        v.push(("head".into(), self.channels(0), 1, 1));
        v
    }
}

/// One convolution's parameters; weights are `cout x cin x k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniFcn<T> {
    config: NetConfig,
    layers: Vec<ConvLayer<T>>,
}

/// Gradients with the same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &MiniFcn<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    /// Adds `other` into `self` element-wise.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, &x)| *a += x);
            b.iter_mut().zip(ob).for_each(|(a, &x)| *a += x);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Everything the backward pass needs from one forward pass.
struct Trace<T> {
    /// Per conv layer: column matrix and post-activation output.
    cols: Vec<Vec<T>>,
    outs: Vec<Tensor<T>>,
    /// Per pooled encoder level: argmax offsets.
    pool_args: Vec<Vec<u32>>,
    logits: Tensor<T>,
}

impl<T: Real> MiniFcn<T> {
    /// He-initialised weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .into_iter()
            .map(|(name, cin, cout, k)| {
                let fan_in = (cin * k * k) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let weight = (0..cout * cin * k * k)
                    .map(|_| T::from_f64(normal.sample(rng)).expect("finite"))
                    .collect();
                ConvLayer {
                    name,
                    cin,
                    cout,
                    k,
                    weight,
                    bias: vec![T::zero(); cout],
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// All weights zero; the head bias is `logit`, so every output is `sigmoid(logit)`.
    pub fn constant(config: NetConfig, logit: T) -> Result<Self> {
        config.validate()?;
        let mut layers: Vec<ConvLayer<T>> = config
            .layer_specs()
            .into_iter()
            .map(|(name, cin, cout, k)| ConvLayer {
                name,
                cin,
                cout,
                k,
                weight: vec![T::zero(); cout * cin * k * k],
                bias: vec![T::zero(); cout],
            })
            .collect();
        layers.last_mut().expect("head layer").bias[0] = logit;
        Ok(Self { config, layers })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        Self::constant(config, T::zero())
    }

    pub(crate) fn from_layers(config: NetConfig, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} layers, found {}",
                specs.len(),
                layers.len()
            )));
        }
        for ((name, cin, cout, k), l) in specs.iter().zip(&layers) {
            if *name != l.name
                || (*cin, *cout, *k) != (l.cin, l.cout, l.k)
                || l.weight.len() != cout * cin * k * k
                || l.bias.len() != *cout
            {
                return Err(Error::ConfigMismatch(format!("layer {} does not match config", l.name)));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite parameter in {}", l.name)));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters flattened in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Overwrites parameters from the flattened layout of [`Self::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Converts the parameter precision.
    pub fn cast<U: Real>(&self) -> MiniFcn<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from(*x).expect("representable")).collect();
        MiniFcn {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    cin: l.cin,
                    cout: l.cout,
                    k: l.k,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    pub fn check_input(&self, nx: usize, ny: usize) -> Result<()> {
        let d = self.config.divisor();
        if nx == 0 || ny == 0 || nx % d != 0 || ny % d != 0 {
            return Err(Error::InvalidParameter(format!(
                "slice {nx}x{ny} not divisible by 2^depth = {d}"
            )));
        }
        Ok(())
    }

    fn input_tensor(&self, image: &Plane<f32>) -> Result<Tensor<T>> {
        self.check_input(image.nx, image.ny)?;
        if self.config.in_channels != 1 {
            return Err(Error::InvalidParameter("planes carry a single channel".into()));
        }
        Ok(Tensor {
            c: 1,
            h: image.ny,
            w: image.nx,
            data: image
                .data
                .iter()
                .map(|&v| T::from_f32(v).expect("finite"))
                .collect(),
        })
    }

    fn run(&self, input: Tensor<T>, keep_trace: bool) -> Trace<T> {
        let d = self.config.depth;
        let mut cols = Vec::new();
        let mut outs = Vec::new();
        let mut pool_args = Vec::new();
        let mut li = 0;
        let mut conv = |x: &Tensor<T>, relu: bool, cols: &mut Vec<Vec<T>>, outs: &mut Vec<Tensor<T>>| {
            let l = &self.layers[li];
            li += 1;
            let (mut y, c) = conv_forward(x, &l.weight, &l.bias, l.cout, l.k);
            if relu {
                relu_inplace(&mut y);
            }
            if keep_trace {
                cols.push(c);
                outs.push(y.clone());
            }
            y
        };

        let mut x = input;
        let mut skips = Vec::with_capacity(d);
        for level in 0..=d {
            let a = conv(&x, true, &mut cols, &mut outs);
            let e = conv(&a, true, &mut cols, &mut outs);
            if level < d {
                let (p, arg) = maxpool_forward(&e);
                if keep_trace {
                    pool_args.push(arg);
                }
                skips.push(e);
                x = p;
            } else {
                x = e;
            }
        }
        for _ in (0..d).rev() {
            let skip = skips.pop().expect("one skip per level");
            let up = upsample_forward(&x);
            let c = conv(&up, true, &mut cols, &mut outs);
            let cat = concat(&skip, &c);
            let a = conv(&cat, true, &mut cols, &mut outs);
            x = conv(&a, true, &mut cols, &mut outs);
        }
        let logits = conv(&x, false, &mut cols, &mut outs);
        Trace {
            cols,
            outs,
            pool_args,
            logits,
        }
    }

    /// Per-pixel logits for one slice.
    pub fn logits(&self, image: &Plane<f32>) -> Result<Plane<T>> {
        let t = self.run(self.input_tensor(image)?, false);
        Ok(Plane {
            nx: image.nx,
            ny: image.ny,
            data: t.logits.data,
        })
    }

    /// Foreground probability maps for a batch of slices.
    pub fn forward(&self, batch: &[Plane<f32>]) -> Result<Vec<Plane<f32>>> {
        for p in batch {
            self.check_input(p.nx, p.ny)?;
        }
        crate::par::map_slice(batch, |p| {
            self.logits(p).map(|l| Plane {
                nx: l.nx,
                ny: l.ny,
                data: l
                    .data
                    .iter()
                    .map(|&z| sigmoid(z).to_f32().expect("finite"))
                    .collect(),
            })
        })
        .into_iter()
        .collect()
    }

    /// Loss (mean over pixels) and parameter gradients for one slice.
    pub fn loss_and_grad(
        &self,
        image: &Plane<f32>,
        truth: &Plane<u8>,
        weights: &[T],
    ) -> Result<(T, Gradients<T>)> {
        if image.shape() != truth.shape() || weights.len() != truth.data.len() {
            return Err(Error::ShapeMismatch {
                expected: image.shape().to_vec(),
                actual: truth.shape().to_vec(),
            });
        }
        let trace = self.run(self.input_tensor(image)?, true);
        let (l, dlogits) = loss_grad_from_logits(&trace.logits.data, &truth.data, weights)?;
        let grads = self.backward_trace(trace, dlogits);
        Ok((l, grads))
    }

    /// Batch loss and gradient: per-slice means summed over the batch.
    /// Slices are processed in parallel and reduced in batch order.
    pub fn batch_loss_and_grad(
        &self,
        images: &[Plane<f32>],
        truths: &[Plane<u8>],
        weights: &[Vec<T>],
    ) -> Result<(T, Gradients<T>)> {
        if images.len() != truths.len() || images.len() != weights.len() {
            return Err(Error::SizeMismatch("batch components differ in length".into()));
        }
        let per = crate::par::map_range(images.len(), |i| {
            self.loss_and_grad(&images[i], &truths[i], &weights[i])
        });
        let mut total = T::zero();
        let mut grads = Gradients::zeros_like(self);
        for r in per {
            let (l, g) = r?;
            total += l;
            grads.accumulate(&g);
        }
        Ok((total, grads))
    }

    fn backward_trace(&self, trace: Trace<T>, dlogits: Vec<T>) -> Gradients<T> {
        let d = self.config.depth;
        let mut grads = Gradients::zeros_like(self);
        let Trace {
            mut cols,
            mut outs,
            mut pool_args,
            logits,
        } = trace;
        let mut li = self.layers.len();
        // Pops the most recent conv from the trace and returns its input gradient.
        let mut conv_back = |g: Tensor<T>,
                             grads: &mut Gradients<T>,
                             cols: &mut Vec<Vec<T>>,
                             outs: &mut Vec<Tensor<T>>,
                             need_input: bool|
         -> Option<Tensor<T>> {
            li -= 1;
            let l = &self.layers[li];
            let c = cols.pop().expect("trace cols");
            outs.pop();
            let (gw, gb) = &mut grads.layers[li];
            conv_backward(&g, &c, &l.weight, l.cin, l.k, gw, gb, need_input)
        };
        let relu_back = |mut g: Tensor<T>, out: &Tensor<T>| {
            relu_backward(&mut g, out);
            g
        };

        let dlog = Tensor {
            c: 1,
            h: logits.h,
            w: logits.w,
            data: dlogits,
        };
        // head
        let mut g = conv_back(dlog, &mut grads, &mut cols, &mut outs, true).expect("input grad");
        // decoder, top level first in reverse order of construction
        let mut skip_grads: Vec<Tensor<T>> = Vec::with_capacity(d);
        for _ in 0..d {
            // g is the gradient w.r.t. the output of decN.conv2 (post-ReLU)
            g = relu_back(g, outs.last().expect("conv2 out"));
            g = conv_back(g, &mut grads, &mut cols, &mut outs, true).expect("input grad");
            let conv1_out = outs.last().expect("conv1 out");
            // conv1 keeps the skip's channel count
            let skip_c = conv1_out.c;
            g = relu_back(g, conv1_out);
            let gcat = conv_back(g, &mut grads, &mut cols, &mut outs, true).expect("input grad");
            let (gskip, gup) = split_concat(gcat, skip_c);
            skip_grads.push(gskip);
            let gup = relu_back(gup, outs.last().expect("up out"));
            let gu = conv_back(gup, &mut grads, &mut cols, &mut outs, true).expect("input grad");
            g = upsample_backward(&gu);
        }
        // encoder, bottom level first; skip_grads were pushed top-down from the deepest decoder
        for level in (0..=d).rev() {
            if level < d {
                let arg = pool_args.pop().expect("pool args");
                let e_out = outs.last().expect("enc conv2 out");
                let mut ge = maxpool_backward(&g, &arg, e_out.h, e_out.w);
                let gs = skip_grads.pop().expect("skip grad");
                for (a, b) in ge.data.iter_mut().zip(&gs.data) {
                    *a += *b;
                }
                g = ge;
            }
            g = relu_back(g, outs.last().expect("enc conv2 out"));
            g = conv_back(g, &mut grads, &mut cols, &mut outs, true).expect("input grad");
            g = relu_back(g, outs.last().expect("enc conv1 out"));
            match conv_back(g, &mut grads, &mut cols, &mut outs, level > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
        debug_assert_eq!(li, 0);
        grads
    }
}
