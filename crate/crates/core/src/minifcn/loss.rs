//! Class-balanced binary cross-entropy.
//!
//! `L = -(1/N) Σ ω_i [ŷ_i log p_i + (1 - ŷ_i) log(1 - p_i)]` with `N` the
//! number of pixels in the slice. With balancing, foreground pixels get
//! `ω = #background / #foreground` and background pixels `ω = 1`.

use super::layers::Real;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Per-pixel weights: `#bg / #fg` on foreground pixels, 1 on background.
///
/// Fails when either class is absent: with no foreground the ratio is
/// undefined, with no background it is 0 and would silence the loss.
pub fn class_weights<T: Real>(truth: &[u8]) -> Result<Vec<T>> {
    let fg = truth.iter().filter(|&&t| t != 0).count();
    let bg = truth.len() - fg;
    if fg == 0 {
        return Err(Error::DegenerateBalance("no foreground pixels".into()));
    }
    if bg == 0 {
        return Err(Error::DegenerateBalance(
            "no background pixels (foreground weight would be 0)".into(),
        ));
    }
    let w_fg = T::from_f64(bg as f64 / fg as f64).expect("finite ratio");
    Ok(truth
        .iter()
        .map(|&t| if t != 0 { w_fg } else { T::one() })
        .collect())
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::ShapeMismatch {
            expected: vec![a],
            actual: vec![b, c],
        });
    }
    if a == 0 {
        return Err(Error::InvalidParameter("empty loss input".into()));
    }
    Ok(())
}

fn clamp<T: Real>(p: T) -> T {
    let lo = T::from_f64(PROB_CLAMP).expect("const");
    p.max(lo).min(T::one() - lo)
}

/// Weighted cross-entropy of probabilities `probs` against binary `truth`.
pub fn loss<T: Real>(probs: &[T], truth: &[u8], weights: &[T]) -> Result<T> {
    check_lengths(probs.len(), truth.len(), weights.len())?;
    let n = T::from_usize(probs.len()).expect("size");
    let mut s = T::zero();
    for ((&p, &y), &w) in probs.iter().zip(truth).zip(weights) {
        let p = clamp(p);
        s += w * if y != 0 { p.ln() } else { (T::one() - p).ln() };
    }
    Ok(-s / n)
}

/// Loss from logits and its gradient with respect to each logit.
///
/// Where the clamp is active the loss is locally constant, so the gradient is 0.
pub fn loss_grad_from_logits<T: Real>(
    logits: &[T],
    truth: &[u8],
    weights: &[T],
) -> Result<(T, Vec<T>)> {
    check_lengths(logits.len(), truth.len(), weights.len())?;
    let n = T::from_usize(logits.len()).expect("size");
    let lo = T::from_f64(PROB_CLAMP).expect("const");
    let hi = T::one() - lo;
    let mut s = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((&z, &y), &w) in logits.iter().zip(truth).zip(weights) {
        let p = sigmoid(z);
        let pc = clamp(p);
        let yt = if y != 0 { T::one() } else { T::zero() };
        s += w * if y != 0 { pc.ln() } else { (T::one() - pc).ln() };
        let active = p > lo && p < hi;
        grad.push(if active { w * (p - yt) / n } else { T::zero() });
    }
    Ok((-s / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_single_foreground() {
        let w: Vec<f64> = class_weights(&[1, 0, 0, 0]).unwrap();
        assert_eq!(w, vec![3.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_degenerate_cases() {
        assert!(matches!(
            class_weights::<f64>(&[1, 1, 1]),
            Err(Error::DegenerateBalance(_))
        ));
        assert!(matches!(
            class_weights::<f64>(&[0, 0]),
            Err(Error::DegenerateBalance(_))
        ));
    }

    #[test]
    fn weights_half_foreground_is_one() {
        let w: Vec<f64> = class_weights(&[1, 0, 1, 0]).unwrap();
        assert_eq!(w, vec![1.0; 4]);
    }

    #[test]
    fn balanced_populations_have_equal_mass() {
        let truth = [1, 0, 0, 0, 0, 1, 0];
        let w: Vec<f64> = class_weights(&truth).unwrap();
        let fg: f64 = truth.iter().zip(&w).filter(|(t, _)| **t != 0).map(|(_, w)| w).sum();
        let bg: f64 = truth.iter().zip(&w).filter(|(t, _)| **t == 0).map(|(_, w)| w).sum();
        assert_eq!(fg, bg);
    }

    #[test]
    fn half_probability_gives_ln2() {
        let l = loss(&[0.5f64, 0.5], &[1, 0], &[1.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_tends_to_zero() {
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let l = loss(&[1.0 - eps, eps], &[1, 0], &[1.0, 1.0]).unwrap();
            assert!(l >= 0.0 && l < prev);
            prev = l;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn loss_is_linear_in_weights() {
        let p = [0.3f64, 0.8, 0.6];
        let t = [1, 0, 1];
        let a = loss(&p, &t, &[1.0, 2.0, 0.5]).unwrap();
        let b = loss(&p, &t, &[2.0, 4.0, 1.0]).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn logit_path_matches_probability_path() {
        let z = [-1.3f64, 0.2, 2.5, -0.1];
        let t = [0, 1, 1, 0];
        let w = [1.0, 3.0, 3.0, 1.0];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (l, g) = loss_grad_from_logits(&z, &t, &w).unwrap();
        assert!((l - loss(&p, &t, &w).unwrap()).abs() < 1e-14);
        // finite differences
        for i in 0..4 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += 1e-6;
            zm[i] -= 1e-6;
            let fd = (loss_grad_from_logits(&zp, &t, &w).unwrap().0
                - loss_grad_from_logits(&zm, &t, &w).unwrap().0)
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        let l = loss(&[0.0f64, 1.0], &[1, 0], &[1.0, 1.0]).unwrap();
        assert!(l.is_finite());
        assert!(loss(&[0.5f64], &[1, 0], &[1.0]).is_err());
    }
}
