//! Per-sample loss curves of the WIS and 1-step V-trace critic losses for a
//! single transition whose Bellman target is 4 while the target critic
//! predicts -6.

use std::fmt::Write as _;

use crate::critic::{vtrace_term, wis_term};

pub const BELLMAN_TARGET: f64 = 4.0;
pub const TARGET_CRITIC_VALUE: f64 = -6.0;
pub const RHOS: [f64; 7] = [1.0, 0.99, 0.9, 0.5, 0.1, 0.01, 0.0];
pub const V_MIN: f64 = -10.0;
pub const V_MAX: f64 = 10.0;
pub const GRID_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub rho: f64,
    pub v: f64,
    pub wis: f64,
    pub vtrace: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimizer {
    pub rho: f64,
    /// `None` when the WIS loss is identically zero (`ρ = 0`).
    pub wis: Option<f64>,
    pub vtrace: f64,
    pub wis_curvature: f64,
    pub vtrace_curvature: f64,
}

pub fn grid() -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|i| V_MIN + (V_MAX - V_MIN) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

pub fn curves() -> Vec<CurvePoint> {
    let vs = grid();
    RHOS.iter()
        .flat_map(|&rho| {
            vs.iter().map(move |&v| CurvePoint {
                rho,
                v,
                wis: wis_term(v, BELLMAN_TARGET, rho).0,
                vtrace: vtrace_term(v, TARGET_CRITIC_VALUE, BELLMAN_TARGET, rho).0,
            })
        })
        .collect()
}

/// Closed-form minimizers and second derivatives of both per-sample losses.
pub fn minimizers() -> Vec<Minimizer> {
    RHOS.iter()
        .map(|&rho| Minimizer {
            rho,
            wis: (rho > 0.0).then_some(BELLMAN_TARGET),
            vtrace: (1.0 - rho) * TARGET_CRITIC_VALUE + rho * BELLMAN_TARGET,
            wis_curvature: 2.0 * rho,
            vtrace_curvature: 2.0,
        })
        .collect()
}

pub fn curves_csv() -> String {
    let mut out = String::from("rho,v,wis,vtrace\n");
    for p in curves() {
        let _ = writeln!(out, "{},{},{},{}", p.rho, p.v, p.wis, p.vtrace);
    }
    out
}

pub fn minimizers_csv() -> String {
    let mut out = String::from("rho,wis_argmin,vtrace_argmin,wis_curvature,vtrace_curvature\n");
    for m in minimizers() {
        let wis = m.wis.map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.rho, wis, m.vtrace, m.wis_curvature, m.vtrace_curvature
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_policy_curves_coincide() {
        for p in curves().iter().filter(|p| p.rho == 1.0) {
            assert_eq!(p.wis, p.vtrace);
        }
    }

    #[test]
    fn half_ratio_vtrace_minimizer() {
        let m = minimizers().into_iter().find(|m| m.rho == 0.5).unwrap();
        assert_eq!(m.vtrace, -1.0);
        assert_eq!(m.wis, Some(4.0));
    }

    #[test]
    fn small_ratio_wis_is_scaled() {
        for p in curves().iter().filter(|p| p.rho == 0.1) {
            assert!((p.wis - 0.1 * (p.v - 4.0).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_endpoints() {
        let g = grid();
        assert_eq!(g[0], -10.0);
        assert_eq!(g[GRID_POINTS - 1], 10.0);
    }
}
