//! Per-state KL trust-region projection of a diagonal Gaussian.
//!
//! Mean and covariance are projected independently against the old policy:
//! the mean in closed form along the segment towards `μ_old`, the covariance
//! by convex interpolation `Σ̃ = (1-η)Σ + ηΣ_old` with `η` found by bisection.
//! The backward pass differentiates the mean map exactly and treats `η` as a
//! constant.

use crate::gaussian::{kl_cov_part, kl_mean_part, GaussParams};

const BISECTION_ITERS: usize = 50;
const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionBounds {
    pub eps_mu: f64,
    pub eps_sigma: f64,
}

impl TrustRegionBounds {
    pub fn new(eps_mu: f64, eps_sigma: f64) -> crate::Result<Self> {
        if !(eps_mu > 0.0 && eps_sigma > 0.0 && eps_mu.is_finite() && eps_sigma.is_finite()) {
            return Err(crate::Error::Config(format!(
                "trust region bounds must be positive, got eps_mu={eps_mu}, eps_sigma={eps_sigma}"
            )));
        }
        Ok(Self { eps_mu, eps_sigma })
    }
}

impl Default for TrustRegionBounds {
    fn default() -> Self {
        Self {
            eps_mu: 0.1,
            eps_sigma: 0.0005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGauss {
    pub params: GaussParams,
    pub was_mean_projected: bool,
    pub was_cov_projected: bool,
    /// Interpolation weight towards `Σ_old`; zero when the covariance was kept.
    pub eta_cov: f64,
}

impl ProjectedGauss {
    pub fn is_identity(&self) -> bool {
        !self.was_mean_projected && !self.was_cov_projected
    }
}

pub fn project(p: &GaussParams, p_old: &GaussParams, bounds: TrustRegionBounds) -> ProjectedGauss {
    let d_mean = kl_mean_part(p, p_old);
    let (mean, was_mean_projected) = if d_mean <= bounds.eps_mu {
        (p.mean().to_vec(), false)
    } else {
        (project_mean(p, p_old, d_mean, bounds.eps_mu), true)
    };

    let d_cov = kl_cov_part(p, p_old);
    let (log_std, eta_cov, was_cov_projected) = if d_cov <= bounds.eps_sigma {
        (p.log_std().to_vec(), 0.0, false)
    } else {
        let eta = solve_cov_eta(p, p_old, bounds.eps_sigma);
        (interpolate_log_std(p, p_old, eta), eta, true)
    };

    let params = if was_mean_projected || was_cov_projected {
        GaussParams::new(mean, log_std).expect("projection keeps parameters finite")
    } else {
        p.clone()
    };
    ProjectedGauss {
        params,
        was_mean_projected,
        was_cov_projected,
        eta_cov,
    }
}

fn project_mean(p: &GaussParams, p_old: &GaussParams, d_mean: f64, eps_mu: f64) -> Vec<f64> {
    let scale = (eps_mu / d_mean).sqrt();
    p.mean()
        .iter()
        .zip(p_old.mean())
        .map(|(&m, &mo)| mo + (m - mo) * scale)
        .collect()
}

/// Covariance part of the KL between the interpolated and the old covariance.
fn interpolated_cov_kl(var_ratio: &[f64], eta: f64) -> f64 {
    0.5 * var_ratio
        .iter()
        .map(|&q| {
            // r = (1-η) q + η, so r - 1 = (1-η)(q - 1)
            let rm1 = (1.0 - eta) * (q - 1.0);
            rm1 - rm1.ln_1p()
        })
        .sum::<f64>()
}

fn solve_cov_eta(p: &GaussParams, p_old: &GaussParams, eps_sigma: f64) -> f64 {
    let var_ratio: Vec<f64> = p
        .log_std()
        .iter()
        .zip(p_old.log_std())
        .map(|(&ls, &lso)| (2.0 * (ls - lso)).exp())
        .collect();
    let g = |eta: f64| interpolated_cov_kl(&var_ratio, eta) - eps_sigma;
    debug_assert!(
        g(0.0) > 0.0 && g(1.0) < 0.0,
        "covariance bisection not bracketed"
    );

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm <= 0.0 {
            // stay on the feasible side so a second projection is the identity
            if gm > -BISECTION_TOL {
                return mid;
            }
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn interpolate_log_std(p: &GaussParams, p_old: &GaussParams, eta: f64) -> Vec<f64> {
    (0..p.dim())
        .map(|i| 0.5 * ((1.0 - eta) * p.var(i) + eta * p_old.var(i)).ln())
        .collect()
}

/// Applies the projection with the branch decisions and `η` of `reference`
/// held fixed. This is the map whose derivative [`project_backward`] returns.
pub fn project_frozen(
    p: &GaussParams,
    p_old: &GaussParams,
    bounds: TrustRegionBounds,
    reference: &ProjectedGauss,
) -> GaussParams {
    let mean = if reference.was_mean_projected {
        project_mean(p, p_old, kl_mean_part(p, p_old), bounds.eps_mu)
    } else {
        p.mean().to_vec()
    };
    let log_std = if reference.was_cov_projected {
        interpolate_log_std(p, p_old, reference.eta_cov)
    } else {
        p.log_std().to_vec()
    };
    GaussParams::new(mean, log_std).expect("projection keeps parameters finite")
}

/// Pulls a gradient with respect to the projected `(μ̃, log σ̃)` back to the
/// unprojected `(μ, log σ)`.
pub fn project_backward(
    p: &GaussParams,
    p_old: &GaussParams,
    bounds: TrustRegionBounds,
    projected: &ProjectedGauss,
    upstream_mu: &[f64],
    upstream_log_std: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let grad_mu = if projected.was_mean_projected {
        let d = kl_mean_part(p, p_old);
        let c = (bounds.eps_mu / d).sqrt();
        let delta: Vec<f64> = p
            .mean()
            .iter()
            .zip(p_old.mean())
            .map(|(m, mo)| m - mo)
            .collect();
        let g_dot_delta: f64 = upstream_mu.iter().zip(&delta).map(|(g, d)| g * d).sum();
        let k = c / (2.0 * d) * g_dot_delta;
        (0..p.dim())
            .map(|j| c * upstream_mu[j] - k * delta[j] / p_old.var(j))
            .collect()
    } else {
        upstream_mu.to_vec()
    };

    let grad_log_std = if projected.was_cov_projected {
        let eta = projected.eta_cov;
        (0..p.dim())
            .map(|i| upstream_log_std[i] * (1.0 - eta) * p.var(i) / projected.params.var(i))
            .collect()
    } else {
        upstream_log_std.to_vec()
    };
    (grad_mu, grad_log_std)
}

/// `d(π, π̃) = d_mean(μ, μ̃ | Σ̃) + d_cov(Σ, Σ̃)`; zero when nothing was projected.
pub fn trust_region_penalty(p: &GaussParams, projected: &ProjectedGauss) -> f64 {
    if projected.is_identity() {
        return 0.0;
    }
    kl_mean_part(p, &projected.params) + kl_cov_part(p, &projected.params)
}

/// Gradient of [`trust_region_penalty`] with respect to `(μ, log σ)`, with the
/// projected distribution held fixed.
pub fn trust_region_penalty_grad(
    p: &GaussParams,
    projected: &ProjectedGauss,
) -> (Vec<f64>, Vec<f64>) {
    let k = p.dim();
    if projected.is_identity() {
        return (vec![0.0; k], vec![0.0; k]);
    }
    let q = &projected.params;
    let grad_mu = (0..k)
        .map(|i| (p.mean()[i] - q.mean()[i]) / q.var(i))
        .collect();
    let grad_ls = (0..k)
        .map(|i| (2.0 * (p.log_std()[i] - q.log_std()[i])).exp_m1())
        .collect();
    (grad_mu, grad_ls)
}
