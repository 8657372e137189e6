mod common;

use common::tabular::{gradient_descent, Mdp, S};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn weighted_loss_bounds_exact_loss_from_above() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let mdp = Mdp::random(seed);
        for _ in 0..100 {
            let v = Mdp::random_v(&mut rng);
            let (wis, _) = mdp.wis_loss(&v);
            let (base, _) = mdp.base_exact_loss(&v);
            assert!(wis >= base - 1e-12, "{wis} < {base}");
        }
    }
}

#[test]
fn losses_differ_by_a_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mdp = Mdp::random(11);
    let gaps: Vec<f64> = (0..50)
        .map(|_| {
            let v = Mdp::random_v(&mut rng);
            mdp.wis_loss(&v).0 - mdp.base_exact_loss(&v).0
        })
        .collect();
    let spread = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-10, "{spread}");
    assert!(gaps[0] > 0.0);
}

#[test]
fn gradients_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mdp = Mdp::random(12);
    let v = Mdp::random_v(&mut rng);
    let (_, g1) = mdp.wis_loss(&v);
    let (_, g2) = mdp.base_exact_loss(&v);
    for s in 0..S {
        assert!((g1[s] - g2[s]).abs() < 1e-10);
    }
}

#[test]
fn minimizers_agree() {
    let mdp = Mdp::random(13);
    let v0 = [0.0; S];
    let a = gradient_descent(v0, |v| mdp.wis_loss(v));
    let b = gradient_descent(v0, |v| mdp.base_exact_loss(v));
    for s in 0..S {
        assert!((a[s] - b[s]).abs() < 1e-6, "{a:?} {b:?}");
    }
}
