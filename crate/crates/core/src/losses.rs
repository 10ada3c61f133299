//! Multi-class and binary cross-entropy, the hybrid adversarial objective,
//! and one-sided label smoothing.
//!
//! Every loss comes with its derivative with respect to the prediction so
//! the trainer can chain it into the network backward passes. Clamped
//! inputs have zero derivative, matching the value's flat region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::voxcore::{OneHotVolume, ProbabilityVolume};

pub const DEFAULT_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: prediction has {pred} elements, target {target}")]
    Shape { pred: usize, target: usize },
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("real and fake discriminator outputs come from different variants ({real} vs {fake} elements)")]
    Variant { real: usize, fake: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvMode {
    /// `mce - lambda * bce(d_fake, 0)`, the objective as written.
    Minimax,
    /// `mce + lambda * bce(d_fake, 1)`.
    Nonsaturating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    /// One-sided smoothing: the real target becomes `1 - smoothing`.
    pub smoothing: f64,
    /// Lower clamp for log arguments.
    pub clamp: f64,
    pub adv_mode: AdvMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            smoothing: 0.1,
            clamp: DEFAULT_CLAMP,
            adv_mode: AdvMode::Minimax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LossError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..0.5).contains(&self.smoothing) {
            return Err(LossError::Config(format!(
                "smoothing must lie in [0, 0.5), got {}",
                self.smoothing
            )));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(LossError::Config(format!("clamp must lie in (0, 0.5), got {}", self.clamp)));
        }
        Ok(())
    }

    pub fn real_target(&self) -> f64 {
        1.0 - self.smoothing
    }
}

fn check_len(pred: usize, target: usize) -> Result<(), LossError> {
    if pred != target {
        return Err(LossError::Shape { pred, target });
    }
    Ok(())
}

/// `-sum_i sum_c y_ic ln max(p_ic, delta)`, summed over voxels.
pub fn mce<T: Scalar>(pred: &[T], target: &[T], delta: f64) -> Result<T, LossError> {
    check_len(pred.len(), target.len())?;
    let d = T::of(delta);
    Ok(pred
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != T::zero())
        .map(|(&p, &y)| -y * p.max(d).ln())
        .sum())
}

/// Derivative of [`mce`] with respect to each prediction entry.
pub fn mce_grad<T: Scalar>(pred: &[T], target: &[T], delta: f64) -> Result<Vec<T>, LossError> {
    check_len(pred.len(), target.len())?;
    let d = T::of(delta);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| if p > d { -y / p } else { T::zero() })
        .collect())
}

/// Summed and per-voxel-mean cross-entropy of a prediction volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MceValue {
    pub sum: f64,
    pub per_voxel: f64,
}

pub fn mce_volume<T: Scalar>(
    pred: &ProbabilityVolume<T>,
    target: &OneHotVolume<T>,
    delta: f64,
) -> Result<MceValue, LossError> {
    if pred.spec.dims() != target.spec.dims() || pred.spec.num_classes != target.spec.num_classes {
        return Err(LossError::Shape {
            pred: pred.values.len(),
            target: target.values.len(),
        });
    }
    let sum = mce(&pred.values, &target.values, delta)?.as_f64();
    Ok(MceValue {
        sum,
        per_voxel: sum / pred.spec.voxel_count() as f64,
    })
}

/// Mean over elements of `-[z ln p + (1 - z) ln(1 - p)]` with `p` clamped to
/// `[delta, 1 - delta]`.
pub fn bce<T: Scalar>(pred: &[T], target: &[T], delta: f64) -> Result<T, LossError> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let (lo, hi) = (T::of(delta), T::of(1.0 - delta));
    let one = T::one();
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &z)| {
            let p = p.max(lo).min(hi);
            -(z * p.ln() + (one - z) * (one - p).ln())
        })
        .sum();
    Ok(total / T::of(pred.len() as f64))
}

/// Derivative of [`bce`] with respect to each prediction entry.
pub fn bce_grad<T: Scalar>(pred: &[T], target: &[T], delta: f64) -> Result<Vec<T>, LossError> {
    check_len(pred.len(), target.len())?;
    let (lo, hi) = (T::of(delta), T::of(1.0 - delta));
    let n = T::of(pred.len() as f64);
    let one = T::one();
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &z)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                (-z / p + (one - z) / (one - p)) / n
            }
        })
        .collect())
}

/// [`bce`] against a constant target.
pub fn bce_const<T: Scalar>(pred: &[T], target: f64, delta: f64) -> T {
    let z = vec![T::of(target); pred.len()];
    bce(pred, &z, delta).expect("same length")
}

pub fn bce_const_grad<T: Scalar>(pred: &[T], target: f64, delta: f64) -> Vec<T> {
    let z = vec![T::of(target); pred.len()];
    bce_grad(pred, &z, delta).expect("same length")
}

/// Discriminator objective `bce(d_real, 1 - eps) + bce(d_fake, 0)`, minimized
/// over the discriminator parameters.
pub fn disc_loss<T: Scalar>(d_real: &[T], d_fake: &[T], cfg: &LossConfig) -> Result<T, LossError> {
    if d_real.len() != d_fake.len() {
        return Err(LossError::Variant {
            real: d_real.len(),
            fake: d_fake.len(),
        });
    }
    Ok(bce_const(d_real, cfg.real_target(), cfg.clamp) + bce_const(d_fake, 0.0, cfg.clamp))
}

/// Gradients of [`disc_loss`] with respect to `d_real` and `d_fake`.
pub fn disc_loss_grad<T: Scalar>(
    d_real: &[T],
    d_fake: &[T],
    cfg: &LossConfig,
) -> Result<(Vec<T>, Vec<T>), LossError> {
    if d_real.len() != d_fake.len() {
        return Err(LossError::Variant {
            real: d_real.len(),
            fake: d_fake.len(),
        });
    }
    Ok((
        bce_const_grad(d_real, cfg.real_target(), cfg.clamp),
        bce_const_grad(d_fake, 0.0, cfg.clamp),
    ))
}

/// The adversarial part of the generator objective: `-lambda * bce(d_fake, 0)`
/// (minimax) or `lambda * bce(d_fake, 1)` (non-saturating).
pub fn gen_adv_term<T: Scalar>(d_fake: &[T], cfg: &LossConfig) -> T {
    let l = T::of(cfg.lambda);
    match cfg.adv_mode {
        AdvMode::Minimax => -l * bce_const(d_fake, 0.0, cfg.clamp),
        AdvMode::Nonsaturating => l * bce_const(d_fake, 1.0, cfg.clamp),
    }
}

pub fn gen_adv_term_grad<T: Scalar>(d_fake: &[T], cfg: &LossConfig) -> Vec<T> {
    let l = T::of(cfg.lambda);
    let g = match cfg.adv_mode {
        AdvMode::Minimax => bce_const_grad(d_fake, 0.0, cfg.clamp),
        AdvMode::Nonsaturating => bce_const_grad(d_fake, 1.0, cfg.clamp),
    };
    let sign = match cfg.adv_mode {
        AdvMode::Minimax => -l,
        AdvMode::Nonsaturating => l,
    };
    g.into_iter().map(|v| sign * v).collect()
}

/// Generator objective: `mce + adversarial term`.
pub fn gen_loss<T: Scalar>(mce_value: T, d_fake: &[T], cfg: &LossConfig) -> Result<T, LossError> {
    cfg.validate()?;
    Ok(mce_value + gen_adv_term(d_fake, cfg))
}

/// One sample's ingredients of the hybrid objective.
#[derive(Clone, Debug)]
pub struct ObjectiveTerm<'a, T> {
    pub pred: &'a [T],
    pub target: &'a [T],
    pub d_real: &'a [T],
    pub d_fake: &'a [T],
}

/// `sum_n mce(g(x_n), y_n) - lambda [bce(d(x_n, y_n), 1) + bce(d(x_n, g(x_n)), 0)]`.
/// The conditional objective has the same form; only the discriminator
/// outputs differ. No smoothing enters this value.
pub fn hybrid_objective<T: Scalar>(terms: &[ObjectiveTerm<'_, T>], lambda: f64, delta: f64) -> Result<T, LossError> {
    let mut total = T::zero();
    for t in terms {
        let m = mce(t.pred, t.target, delta)?;
        if t.d_real.len() != t.d_fake.len() {
            return Err(LossError::Variant {
                real: t.d_real.len(),
                fake: t.d_fake.len(),
            });
        }
        let adv = bce_const(t.d_real, 1.0, delta) + bce_const(t.d_fake, 0.0, delta);
        total = total + m - T::of(lambda) * adv;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn mce_examples() {
        assert_relative_eq!(mce(&[0.5, 0.5], &[1.0, 0.0], 1e-7).unwrap(), LN2, epsilon = 1e-12);
        let perfect = mce(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 1e-7).unwrap();
        assert!(perfect <= -2.0 * (1.0f64 - 1e-7).ln() + 1e-15);
        assert!(matches!(mce(&[0.5], &[1.0, 0.0], 1e-7), Err(LossError::Shape { .. })));
        // Zero prediction on the target class is clamped, not infinite.
        let v = mce(&[0.0, 1.0], &[1.0, 0.0], 1e-7).unwrap();
        assert_relative_eq!(v, -(1e-7f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn bce_examples() {
        assert_relative_eq!(bce(&[0.5], &[1.0], 1e-7).unwrap(), LN2, epsilon = 1e-12);
        assert_relative_eq!(bce(&[0.9], &[0.9], 1e-7).unwrap(), 0.325083, epsilon = 1e-6);
        assert!(bce(&[1.0 - 1e-7], &[1.0], 1e-7).unwrap() < 1e-6);
        assert!(bce(&[1.0f64], &[0.0], 1e-7).unwrap().is_finite());
    }

    #[test]
    fn disc_loss_examples() {
        let exact = LossConfig {
            smoothing: 0.0,
            ..LossConfig::default()
        };
        assert!(disc_loss(&[1.0 - 1e-7], &[1e-7], &exact).unwrap() < 1e-6);
        assert_relative_eq!(disc_loss(&[0.5], &[0.5], &exact).unwrap(), 2.0 * LN2, epsilon = 1e-12);
        let smooth = LossConfig::default();
        assert_relative_eq!(disc_loss(&[0.9], &[0.1], &smooth).unwrap(), 0.430444, epsilon = 1e-6);
        assert!(matches!(disc_loss(&[0.5], &[0.5, 0.5], &smooth), Err(LossError::Variant { .. })));
    }

    #[test]
    fn gen_loss_examples() {
        let m = 3.25;
        for mode in [AdvMode::Minimax, AdvMode::Nonsaturating] {
            let cfg = LossConfig {
                lambda: 0.0,
                adv_mode: mode,
                ..LossConfig::default()
            };
            assert_eq!(gen_loss(m, &[0.3], &cfg).unwrap(), m);
        }
        let mm = LossConfig::default();
        assert_relative_eq!(gen_loss(m, &[0.5], &mm).unwrap(), m - LN2, epsilon = 1e-12);
        let ns = LossConfig {
            adv_mode: AdvMode::Nonsaturating,
            ..LossConfig::default()
        };
        assert_relative_eq!(gen_loss(m, &[0.5], &ns).unwrap(), m + LN2, epsilon = 1e-12);
        let bad = LossConfig {
            lambda: -1.0,
            ..LossConfig::default()
        };
        assert!(matches!(gen_loss(m, &[0.5], &bad), Err(LossError::Config(_))));
    }

    #[test]
    fn generator_is_always_pushed_to_raise_d_fake() {
        for mode in [AdvMode::Minimax, AdvMode::Nonsaturating] {
            let cfg = LossConfig {
                adv_mode: mode,
                ..LossConfig::default()
            };
            for &d in &[0.05, 0.3, 0.5, 0.8, 0.97] {
                let h = 1e-6;
                let fd = (gen_loss(1.0, &[d + h], &cfg).unwrap() - gen_loss(1.0, &[d - h], &cfg).unwrap()) / (2.0 * h);
                assert!(fd < 0.0, "{mode:?} at {d}: {fd}");
                let an = gen_adv_term_grad(&[d], &cfg)[0];
                assert_relative_eq!(an, fd, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn disc_loss_swap_symmetry() {
        let cfg = LossConfig {
            smoothing: 0.0,
            ..LossConfig::default()
        };
        for &(r, f) in &[(0.7, 0.2), (0.4, 0.9), (0.5, 0.5)] {
            let a = disc_loss(&[r], &[f], &cfg).unwrap();
            let b = disc_loss(&[1.0 - f], &[1.0 - r], &cfg).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pred = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3];
        let target = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let g = mce_grad(&pred, &target, 1e-7).unwrap();
        let bg = bce_grad(&pred, &target, 1e-7).unwrap();
        let h = 1e-7;
        for i in 0..pred.len() {
            let mut a = pred;
            a[i] += h;
            let mut b = pred;
            b[i] -= h;
            let fd = (mce(&a, &target, 1e-7).unwrap() - mce(&b, &target, 1e-7).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-6);
            let fd = (bce(&a, &target, 1e-7).unwrap() - bce(&b, &target, 1e-7).unwrap()) / (2.0 * h);
            assert_relative_eq!(bg[i], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn hybrid_objective_assembles_terms() {
        let pred = [0.25, 0.75];
        let target = [0.0, 1.0];
        let t = ObjectiveTerm {
            pred: &pred,
            target: &target,
            d_real: &[0.8],
            d_fake: &[0.3],
        };
        let v = hybrid_objective(&[t.clone(), t], 1.0, 1e-7).unwrap();
        let one = -(0.75f64).ln() - (-(0.8f64).ln() - (0.7f64).ln());
        assert_relative_eq!(v, 2.0 * one, epsilon = 1e-12);
    }
}
