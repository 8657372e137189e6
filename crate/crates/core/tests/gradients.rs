mod common;

use common::*;
use vlearn::critic::CriticLossKind;

const TOL: f64 = 1e-5;

#[test]
fn critic_losses_match_finite_differences() {
    for kind in [
        CriticLossKind::Wis,
        CriticLossKind::Vtrace,
        CriticLossKind::Base,
        CriticLossKind::NoIs,
    ] {
        for (seed, ln) in [(1, false), (2, true)] {
            let e = critic_grad_error(kind, seed, 20, ln);
            assert!(e < TOL, "{kind:?} layer_norm={ln}: {e:e}");
        }
    }
}

#[test]
fn trpl_matches_finite_differences_with_active_projections() {
    let mut saw_mean = false;
    let mut saw_cov = false;
    for seed in 0..5 {
        let (e, m, c) = trpl_grad_error(seed, 20);
        assert!(e < TOL, "seed {seed}: {e:e}");
        saw_mean |= m > 0;
        saw_cov |= c > 0;
    }
    assert!(saw_mean && saw_cov, "projections never active");
}

#[test]
fn ppo_clip_matches_finite_differences() {
    for seed in 0..5 {
        let e = ppo_grad_error(seed, 20);
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}
