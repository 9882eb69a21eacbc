//! Training losses with analytic gradients w.r.t. the predicted samples.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    NegPearson,
    SmoothL1,
}

impl LossKind {
    pub fn eval(self, pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::NegPearson => neg_pearson(pred, gt),
            LossKind::SmoothL1 => smooth_l1(pred, gt),
        }
    }
}

/// `1 - r(pred, gt)`, in `[0, 2]`.
///
/// With centered `x`, `y` and `r = <x, y> / (|x| |y|)`:
/// `dr/dpred_i = y_i / (|x| |y|) - r x_i / |x|^2`. A zero-variance side gives
/// loss 1 with a zero gradient.
pub fn neg_pearson_loss(pred: &Waveform, gt: &Waveform) -> Result<(f64, Vec<f64>)> {
    neg_pearson(&pred.samples, &gt.samples)
}

fn neg_pearson(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let n = pred.len();
    if n < 3 {
        return Err(invalid("length", format!("pearson loss needs >= 3 samples, got {n}")));
    }
    let mx = pred.iter().sum::<f64>() / n as f64;
    let my = gt.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = pred.iter().map(|v| v - mx).collect();
    let y: Vec<f64> = gt.iter().map(|v| v - my).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Ok((1.0, vec![0.0; n]));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let (nx, ny) = (sxx.sqrt(), syy.sqrt());
    let r = (sxy / (nx * ny)).clamp(-1.0, 1.0);
    let grad = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| -(yi / (nx * ny) - r * xi / sxx))
        .collect();
    Ok((1.0 - r, grad))
}

/// Mean of `0.5 d^2` for `|d| < 1` and `|d| - 0.5` otherwise, `d = pred - gt`.
pub fn smooth_l1_loss(pred: &Waveform, gt: &Waveform) -> Result<(f64, Vec<f64>)> {
    smooth_l1(&pred.samples, &gt.samples)
}

fn smooth_l1(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("smooth l1 needs at least one sample"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            if d.abs() < 1.0 {
                loss += 0.5 * d * d;
                d / n
            } else {
                loss += d.abs() - 0.5;
                d.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max of `|fd - analytic| / max(|analytic|, 1e-8)` over checked samples.
    pub max_rel_error: f64,
    /// Largest relative error among excluded (subgradient) samples, if any.
    pub excluded_max_rel_error: Option<f64>,
    /// Samples left out of the pass/fail statistic.
    pub excluded: Vec<usize>,
}

/// Compares the analytic gradient of `kind` at `pred` against central
/// differences with the given step. For smooth L1, samples whose residual
/// lies within one step of the `|d| = 1` knee are reported separately.
pub fn fd_gradient_check(kind: LossKind, pred: &[f64], gt: &[f64], step: f64) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    let (_, analytic) = kind.eval(pred, gt)?;
    let mut probe = pred.to_vec();
    let mut max_rel = 0.0f64;
    let mut excluded_max = None::<f64>;
    let mut excluded = Vec::new();
    for i in 0..pred.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let (up, _) = kind.eval(&probe, gt)?;
        probe[i] = orig - step;
        let (down, _) = kind.eval(&probe, gt)?;
        probe[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(1e-8);
        let at_knee = kind == LossKind::SmoothL1 && ((pred[i] - gt[i]).abs() - 1.0).abs() <= step;
        if at_knee {
            excluded.push(i);
            excluded_max = Some(excluded_max.map_or(rel, |m| m.max(rel)));
        } else {
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        excluded_max_rel_error: excluded_max,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 25.0).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn pearson_extremes() {
        let gt = [0.0, 1.0, 3.0, 2.0, -1.0];
        let neg: Vec<f64> = gt.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(neg_pearson_loss(&w(&gt), &w(&gt)).unwrap().0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(neg_pearson_loss(&w(&neg), &w(&gt)).unwrap().0, 2.0, epsilon = 1e-12);
        let (l, g) = neg_pearson_loss(&w(&[4.0; 5]), &w(&gt)).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(neg_pearson_loss(&w(&[1.0, 2.0]), &w(&[1.0, 2.0])).is_err());
        assert!(neg_pearson_loss(&w(&[1.0, 2.0, 3.0]), &w(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn pearson_gradient_matches_fd() {
        let pred = random(64, 7);
        let gt = random(64, 8);
        let c = fd_gradient_check(LossKind::NegPearson, &pred, &gt, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-5, "{}", c.max_rel_error);
    }

    #[test]
    fn smooth_l1_point_values() {
        assert_eq!(smooth_l1_loss(&w(&[0.5]), &w(&[0.0])).unwrap().0, 0.125);
        assert_eq!(smooth_l1_loss(&w(&[2.0]), &w(&[0.0])).unwrap().0, 1.5);
        assert_eq!(smooth_l1_loss(&w(&[1.0]), &w(&[0.0])).unwrap().0, 0.5);
        assert!(smooth_l1_loss(&w(&[1.0]), &w(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn smooth_l1_gradient_quadratic_zone() {
        let gt = random(32, 1);
        let pred: Vec<f64> = gt.iter().zip(random(32, 2)).map(|(g, d)| g + 0.9 * d).collect();
        let c = fd_gradient_check(LossKind::SmoothL1, &pred, &gt, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-6, "{}", c.max_rel_error);
        assert!(c.excluded.is_empty());
    }

    #[test]
    fn smooth_l1_knee_is_excluded() {
        let gt = [0.0, 0.0, 0.0];
        let pred = [1.0, 0.3, -2.0];
        let c = fd_gradient_check(LossKind::SmoothL1, &pred, &gt, 1e-5).unwrap();
        assert_eq!(c.excluded, vec![0]);
        assert!(c.excluded_max_rel_error.is_some());
        assert!(c.max_rel_error < 1e-6);
        assert!(fd_gradient_check(LossKind::SmoothL1, &pred, &gt, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn pearson_bounds_and_affine_invariance(
            seed in any::<u64>(), gain in 0.1f64..10.0, shift in -5.0f64..5.0
        ) {
            let pred = random(32, seed);
            let gt = random(32, seed ^ 0xabcd);
            let (l, _) = neg_pearson(&pred, &gt).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
            let moved: Vec<f64> = pred.iter().map(|x| gain * x + shift).collect();
            let (l2, _) = neg_pearson(&moved, &gt).unwrap();
            prop_assert!((l - l2).abs() < 1e-10);
        }

        #[test]
        fn smooth_l1_zero_iff_equal(seed in any::<u64>(), k in 0usize..16) {
            let gt = random(16, seed);
            let (l, _) = smooth_l1(&gt, &gt).unwrap();
            prop_assert_eq!(l, 0.0);
            let mut pred = gt.clone();
            pred[k] += 0.25;
            let (l, _) = smooth_l1(&pred, &gt).unwrap();
            prop_assert!(l > 0.0);
            let scaled: Vec<f64> = gt.iter().map(|x| 3.0 * x + 1.0).collect();
            prop_assert!(smooth_l1(&scaled, &gt).unwrap().0 > 0.0);
        }
    }
}
