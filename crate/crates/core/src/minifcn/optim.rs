//! SGD with momentum and Adam, element-wise over flat parameter slices.

use serde::{Deserialize, Serialize};

use super::layers::Real;
use super::{Gradients, MiniFcn};

/// `v ← momentum·v − lr·(g + weight_decay·θ); θ ← θ + v`.
pub fn sgd_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * (g + weight_decay * *p);
        *p += *v;
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One Adam update with bias correction:
/// `θ ← θ − lr · m̂ / (√v̂ + eps)`, `m̂ = m / (1 − β1^t)`, `v̂ = v / (1 − β2^t)`.
/// Increments `state.t` before applying the step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
    eps: T,
    beta1: T,
    beta2: T,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (T::one() - beta1) * g;
        *v = beta2 * *v + (T::one() - beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p = *p - lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state bound to one network's flat parameter layout.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd {
        lr: T,
        momentum: T,
        weight_decay: T,
        velocity: Vec<T>,
    },
    Adam {
        lr: T,
        eps: T,
        beta1: T,
        beta2: T,
        weight_decay: T,
        state: AdamState<T>,
    },
}

impl<T: Real> Optimizer<T> {
    /// Applies one update to `net` from `grads`.
    pub fn step(&mut self, net: &mut MiniFcn<T>, grads: &Gradients<T>) {
        let mut flat = net.flat_params();
        let g = grads.flat();
        match self {
            Optimizer::Sgd {
                lr,
                momentum,
                weight_decay,
                velocity,
            } => sgd_step(&mut flat, &g, velocity, *lr, *momentum, *weight_decay),
            Optimizer::Adam {
                lr,
                eps,
                beta1,
                beta2,
                weight_decay,
                state,
            } => {
                // L2 decay folded into the gradient, as in classic solvers
                let g: Vec<T> = if *weight_decay > T::zero() {
                    g.iter().zip(&flat).map(|(&g, &p)| g + *weight_decay * p).collect()
                } else {
                    g
                };
                adam_step(&mut flat, &g, state, *lr, *eps, *beta1, *beta2)
            }
        }
        let mut off = 0;
        for p in net.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_vanilla() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, [0.95, -1.9]);
    }

    #[test]
    fn sgd_momentum_decay() {
        let mut p = [3.0f64];
        let mut v = [1.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.001, 0.8, 0.0);
        assert!((p[0] - 3.8).abs() < 1e-15);
        assert!((v[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_only() {
        let mut p = [2.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.001, 0.8, 0.0005);
        assert!((p[0] - 2.0 * (1.0 - 0.001 * 0.0005)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // t = 1: m̂ = c, v̂ = c², so the step is lr·c / (|c| + eps)
        for c in [0.3f64, -2.0, 0.05] {
            let mut p = [1.0];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[c], &mut s, 0.01, 0.1, 0.9, 0.999);
            let expected = 1.0 - 0.01 * c / (c.abs() + 0.1);
            assert!((p[0] - expected).abs() < 1e-14, "{} vs {expected}", p[0]);
            assert_eq!(s.t, 1);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = [1.5f64, -0.25];
        let mut s = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.1, 0.9, 0.999);
        }
        assert_eq!(p, [1.5, -0.25]);
    }

    #[test]
    fn adam_is_elementwise() {
        let mut p = [0.7f64, 0.7];
        let mut s = AdamState::new(2);
        for g in [0.2, -0.5, 1.0, 0.3] {
            adam_step(&mut p, &[g, g], &mut s, 0.05, 0.1, 0.9, 0.999);
        }
        assert_eq!(p[0].to_bits(), p[1].to_bits());
    }
}
