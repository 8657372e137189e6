#![allow(dead_code)]

pub mod tabular;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vlearn::gaussian::{log_prob_stored, GaussParams};
use vlearn::mlp::ParamVector;
use vlearn::replay::Transition;

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Transitions whose stored log-probabilities are those of `behavior` shifted by
/// noise, so ratios spread around one.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    k: usize,
    s_dim: usize,
    a_dim: usize,
    behavior: Option<&GaussParams>,
) -> Vec<Transition> {
    (0..k)
        .map(|_| {
            let a: Vec<f64> = (0..a_dim).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let logp_b = match behavior {
                Some(b) => log_prob_stored(b, &a).unwrap() + rng.gen_range(-0.5..0.5),
                None => rng.gen_range(-2.0..0.5),
            };
            Transition {
                s: normals(rng, s_dim),
                a,
                r: rng.gen_range(-1.0..1.0),
                s_next: normals(rng, s_dim),
                done: rng.gen_bool(0.2),
                logp_b,
            }
        })
        .collect()
}

pub fn perturbed(p: &ParamVector, dir: &[f64], h: f64) -> ParamVector {
    ParamVector::from_vec(
        p.as_slice()
            .iter()
            .zip(dir)
            .map(|(x, d)| x + h * d)
            .collect(),
    )
    .unwrap()
}

pub fn add_noise(p: &mut ParamVector, rng: &mut ChaCha8Rng, scale: f64) {
    for x in p.as_mut_slice() {
        *x += scale * rng.sample::<f64, _>(StandardNormal);
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error between `grad · d` and the central difference of `f`
/// along `probes` random directions.
pub fn directional_check(
    rng: &mut ChaCha8Rng,
    grad: &[f64],
    probes: usize,
    h: f64,
    mut f: impl FnMut(&[f64], f64) -> f64,
) -> f64 {
    assert!(
        grad.iter().any(|g| *g != 0.0),
        "gradient is identically zero"
    );
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let d = normals(rng, grad.len());
        let fd = (f(&d, h) - f(&d, -h)) / (2.0 * h);
        worst = worst.max(rel_err(dot(grad, &d), fd));
    }
    worst
}

use rand::SeedableRng;
use vlearn::critic::{critic_loss_and_grad, CriticHyper, CriticLossKind, CriticPair};
use vlearn::mlp::{Activation, MlpSpec};
use vlearn::policy::{
    ppo_clip_loss_and_grad, ppo_clip_loss_at, trpl_policy_loss_and_grad, trpl_policy_loss_frozen,
    PolicyHyper, PolicyNet,
};
use vlearn::projection::TrustRegionBounds;

pub const FD_STEP: f64 = 1e-5;

/// Worst directional-derivative error of a critic loss over both critics of a
/// tiny twin pair with a perturbed target network.
pub fn critic_grad_error(kind: CriticLossKind, seed: u64, probes: usize, layer_norm: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(3, vec![5, 4], 1, Activation::Tanh, layer_norm).unwrap();
    let mut pair = CriticPair::new(spec, seed, true).unwrap();
    for i in 0..2 {
        add_noise(pair.target_mut(i), &mut rng, 0.2);
    }
    let batch = random_batch(&mut rng, 6, 3, 2, None);
    let ratios: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let hyper = CriticHyper::default();
    let out = critic_loss_and_grad(kind, &pair, &batch, &ratios, &hyper).unwrap();
    let mut worst = 0.0f64;
    for i in 0..2 {
        let e = directional_check(
            &mut rng,
            out.grads[i].as_slice(),
            probes.div_ceil(2),
            FD_STEP,
            |d, h| {
                let mut p = pair.clone();
                *p.online_mut(i) = perturbed(pair.online(i), d, h);
                critic_loss_and_grad(kind, &p, &batch, &ratios, &hyper)
                    .unwrap()
                    .per_critic[i]
            },
        );
        worst = worst.max(e);
    }
    worst
}

fn tiny_policy(rng: &mut ChaCha8Rng, seed: u64) -> PolicyNet {
    let spec = MlpSpec::new(3, vec![6], 4, Activation::Tanh, false).unwrap();
    let net = PolicyNet::new(spec.clone(), seed).unwrap();
    let mut phi = net.phi.clone();
    add_noise(&mut phi, rng, 0.3);
    PolicyNet::from_parts(spec, phi, net.phi.clone()).unwrap()
}

/// Worst error of the trust-region surrogate plus penalty against the loss
/// with projection branches frozen. Also returns how many samples had an
/// active mean and covariance projection.
pub fn trpl_grad_error(seed: u64, probes: usize) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = tiny_policy(&mut rng, seed);
    let batch = random_batch(&mut rng, 8, 3, 2, None);
    let adv = normals(&mut rng, batch.len());
    let bounds = TrustRegionBounds::new(0.01, 0.002).unwrap();
    let hyper = PolicyHyper {
        eps_rho: 2.0,
        ..PolicyHyper::default()
    };
    let out = trpl_policy_loss_and_grad(&net, &batch, &adv, bounds, &hyper).unwrap();
    let at_phi = trpl_policy_loss_frozen(
        &net,
        &net.phi,
        &batch,
        &adv,
        bounds,
        &hyper,
        &out.projections,
    )
    .unwrap();
    assert!(
        rel_err(at_phi, out.loss) < 1e-12,
        "{at_phi} vs {}",
        out.loss
    );
    let mean_active = out
        .projections
        .iter()
        .filter(|p| p.was_mean_projected)
        .count();
    let cov_active = out
        .projections
        .iter()
        .filter(|p| p.was_cov_projected)
        .count();
    let worst = directional_check(&mut rng, out.grad.as_slice(), probes, FD_STEP, |d, h| {
        let phi = perturbed(&net.phi, d, h);
        trpl_policy_loss_frozen(&net, &phi, &batch, &adv, bounds, &hyper, &out.projections).unwrap()
    });
    (worst, mean_active, cov_active)
}

pub fn ppo_grad_error(seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = tiny_policy(&mut rng, seed);
    let batch = random_batch(&mut rng, 8, 3, 2, None);
    let adv = normals(&mut rng, batch.len());
    let hyper = PolicyHyper::default();
    let out = ppo_clip_loss_and_grad(&net, &batch, &adv, &hyper).unwrap();
    directional_check(&mut rng, out.grad.as_slice(), probes, FD_STEP, |d, h| {
        ppo_clip_loss_at(&net, &perturbed(&net.phi, d, h), &batch, &adv, &hyper).unwrap()
    })
}
