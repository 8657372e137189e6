//! Diagonal Gaussian policy head with tanh squashing.
//!
//! The network emits `[mean; log_std]`. Actions are `a = tanh(u)` with
//! `u ~ N(mean, diag(exp(2 log_std)))`; densities carry the tanh Jacobian.
//! Divergences are taken on the pre-squash Gaussian, where they are closed form.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Largest |a| used when inverting the squash for stored actions.
pub const ACTION_EDGE: f64 = 1.0 - 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussParams {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl GaussParams {
    /// Builds the distribution, clamping `log_std` into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        check_dim("log_std", mean.len(), log_std.len())?;
        if mean.is_empty() {
            return Err(Error::Dimension {
                what: "action",
                expected: 1,
                got: 0,
            });
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters"));
        }
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self { mean, log_std })
    }

    /// Splits a `[mean; log_std]` network head.
    pub fn from_head(head: &[f64]) -> Result<Self> {
        if !head.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                what: "policy head (must be even)",
                expected: head.len() + 1,
                got: head.len(),
            });
        }
        let k = head.len() / 2;
        Self::new(head[..k].to_vec(), head[k..].to_vec())
    }

    /// Mask of head coordinates whose `log_std` was not clamped; the clamp
    /// passes gradient only where this is true.
    pub fn log_std_unclamped(head: &[f64]) -> Vec<bool> {
        let k = head.len() / 2;
        head[k..]
            .iter()
            .map(|&l| (LOG_STD_MIN..=LOG_STD_MAX).contains(&l))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self, i: usize) -> f64 {
        self.log_std[i].exp()
    }

    pub fn var(&self, i: usize) -> f64 {
        (2.0 * self.log_std[i]).exp()
    }

    /// Deterministic action: `tanh(mean)`.
    pub fn mode_action(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh()).collect()
    }

    /// Gaussian log-density of a pre-squash point.
    pub fn gaussian_log_density(&self, u: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(u)
            .map(|((&m, &ls), &ui)| {
                let z = (ui - m) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    /// Log-density of `a = tanh(u)` expressed through `u`.
    pub fn log_prob_pre_squash(&self, u: &[f64]) -> f64 {
        self.gaussian_log_density(u) - u.iter().map(|&ui| log_one_minus_tanh_sq(ui)).sum::<f64>()
    }
}

/// `log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedAction {
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample<R: Rng + ?Sized>(p: &GaussParams, rng: &mut R) -> SquashedAction {
    let u: Vec<f64> = p
        .mean
        .iter()
        .zip(&p.log_std)
        .map(|(&m, &ls)| {
            let z: f64 = rng.sample(StandardNormal);
            m + ls.exp() * z
        })
        .collect();
    let a = u.iter().map(|v| v.tanh()).collect();
    let log_prob = p.log_prob_pre_squash(&u);
    SquashedAction { u, a, log_prob }
}

/// Log-density of a squashed action; `|a_i| >= 1` is a domain error.
pub fn log_prob(p: &GaussParams, a: &[f64]) -> Result<f64> {
    check_dim("action", p.dim(), a.len())?;
    if let Some(&bad) = a.iter().find(|v| v.is_nan() || v.abs() >= 1.0) {
        return Err(Error::ActionDomain { value: bad });
    }
    let u: Vec<f64> = a.iter().map(|v| v.atanh()).collect();
    Ok(p.log_prob_pre_squash(&u))
}

/// Inverts the squash for a stored buffer action, clamping to `|a| <= ACTION_EDGE`.
pub fn unsquash_stored(a: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|v| v.clamp(-ACTION_EDGE, ACTION_EDGE).atanh())
        .collect()
}

/// Log-density of a stored buffer action (closed interval, clamped inversion).
pub fn log_prob_stored(p: &GaussParams, a: &[f64]) -> Result<f64> {
    check_dim("action", p.dim(), a.len())?;
    Ok(p.log_prob_pre_squash(&unsquash_stored(a)))
}

/// Gradient of the Gaussian log-density at fixed `u` with respect to
/// `(mean, log_std)`. The tanh correction does not depend on the parameters.
pub fn log_prob_grad(p: &GaussParams, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(p.dim());
    let mut d_log_std = Vec::with_capacity(p.dim());
    for ((&m, &ls), &ui) in p.mean.iter().zip(&p.log_std).zip(u) {
        let inv_var = (-2.0 * ls).exp();
        let diff = ui - m;
        d_mean.push(diff * inv_var);
        d_log_std.push(diff * diff * inv_var - 1.0);
    }
    (d_mean, d_log_std)
}

/// Differential entropy of the pre-squash Gaussian.
pub fn entropy(p: &GaussParams) -> f64 {
    p.log_std
        .iter()
        .map(|ls| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + ls)
        .sum()
}

/// Mean part of the decomposed KL: `½ (μ-μ_old)ᵀ Σ_old⁻¹ (μ-μ_old)`.
pub fn kl_mean_part(p: &GaussParams, p_old: &GaussParams) -> f64 {
    0.5 * p
        .mean
        .iter()
        .zip(&p_old.mean)
        .zip(&p_old.log_std)
        .map(|((&m, &mo), &lso)| {
            let d = m - mo;
            d * d * (-2.0 * lso).exp()
        })
        .sum::<f64>()
}

/// Covariance part of the decomposed KL:
/// `½ (tr(Σ_old⁻¹ Σ) - k + ln det Σ_old - ln det Σ)`.
pub fn kl_cov_part(p: &GaussParams, p_old: &GaussParams) -> f64 {
    0.5 * p
        .log_std
        .iter()
        .zip(&p_old.log_std)
        .map(|(&ls, &lso)| {
            let log_ratio = 2.0 * (ls - lso);
            // r - 1 - ln r with r = σ²/σ_old²; expm1 keeps it accurate near r = 1
            log_ratio.exp_m1() - log_ratio
        })
        .sum::<f64>()
}

/// `(d_mean, d_cov)`, summing to `KL(N(μ,Σ) ‖ N(μ_old,Σ_old))`.
pub fn kl_decomposed(p: &GaussParams, p_old: &GaussParams) -> (f64, f64) {
    (kl_mean_part(p, p_old), kl_cov_part(p, p_old))
}
