use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use vlearn::envs::{Env, EnvId, EnvSpec};

fn clip(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Proportional-derivative control of double integrators, state `[p; v]`.
fn pd(state: &[f64], kp: f64, kd: f64) -> Vec<f64> {
    let d = state.len() / 2;
    (0..d)
        .map(|i| clip(-kp * state[i] - kd * state[d + i]))
        .collect()
}

/// Energy pumping away from the top, PD control near it. Angle zero is upright.
fn swing_up(state: &[f64]) -> Vec<f64> {
    let theta = state[1].atan2(state[0]);
    let omega = state[2];
    if theta.abs() < 0.6 {
        return vec![clip(-(10.0 * theta + 2.0 * omega))];
    }
    let energy = 0.5 * omega * omega + 15.0 * theta.cos();
    let dir = if omega == 0.0 { 1.0 } else { omega.signum() };
    vec![if energy < 15.0 { dir } else { -dir }]
}

fn controller(id: EnvId) -> fn(&[f64]) -> Vec<f64> {
    match id {
        EnvId::PointMass2d => |s| pd(s, 8.0, 4.0),
        EnvId::Pendulum => swing_up,
        EnvId::NdIntegrator(_) => |s| pd(s, 2.0, 2.0),
    }
}

fn controller_return(id: EnvId, episodes: usize, seed: u64) -> f64 {
    let spec = EnvSpec::new(id).unwrap();
    let policy = controller(id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(spec);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        loop {
            let step = env.step(&policy(&s)).unwrap();
            total += step.reward;
            s = step.s_next;
            if step.truncated {
                break;
            }
        }
    }
    total / episodes as f64
}

#[derive(Deserialize)]
struct Fixture {
    episodes: usize,
    seed: u64,
    point_mass_2d: f64,
    pendulum: f64,
    nd_integrator16: f64,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/controller_returns.json")).unwrap()
}

#[test]
fn controller_returns_match_fixture_and_clear_thresholds() {
    let f = fixture();
    for (id, recorded) in [
        (EnvId::PointMass2d, f.point_mass_2d),
        (EnvId::Pendulum, f.pendulum),
        (EnvId::NdIntegrator(16), f.nd_integrator16),
    ] {
        let got = controller_return(id, f.episodes, f.seed);
        println!(
            "{}: controller {got:?}, threshold {}",
            id.name(),
            EnvSpec::new(id).unwrap().optimal_return_bound()
        );
        assert!(
            (got - recorded).abs() < 1e-9,
            "{}: {got} vs fixture {recorded}",
            id.name()
        );
        assert!(got > EnvSpec::new(id).unwrap().optimal_return_bound());
    }
}

#[test]
fn resets_respect_initial_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pm = EnvSpec::new(EnvId::PointMass2d).unwrap();
    let pend = EnvSpec::new(EnvId::Pendulum).unwrap();
    let nd = EnvSpec::new(EnvId::NdIntegrator(5)).unwrap();
    for _ in 0..10_000 {
        let s = pm.initial_state(&mut rng);
        assert!(s[..2].iter().all(|p| p.abs() <= 1.0));
        assert_eq!(&s[2..], &[0.0, 0.0]);
        let s = pend.initial_state(&mut rng);
        assert!(((s[0] * s[0] + s[1] * s[1]) - 1.0).abs() < 1e-12);
        assert!(s[2].abs() <= 1.0);
        let s = nd.initial_state(&mut rng);
        assert!(s[..5].iter().all(|p| p.abs() <= 1.0));
        assert!(s[5..].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn rewards_are_non_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for id in [EnvId::PointMass2d, EnvId::Pendulum, EnvId::NdIntegrator(3)] {
        let mut env = Env::new(EnvSpec::new(id).unwrap());
        env.reset(&mut rng);
        for _ in 0..5_000 {
            let a: Vec<f64> = (0..env.spec().action_dim)
                .map(|_| rng.gen_range(-1.0..=1.0))
                .collect();
            let st = env.step(&a).unwrap();
            assert!(st.reward <= 0.0);
            assert!(!st.done);
            if st.truncated {
                env.reset(&mut rng);
            }
        }
    }
}

#[test]
fn same_seed_and_actions_give_identical_trajectories() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut env = Env::new(EnvSpec::new(EnvId::Pendulum).unwrap());
        let mut trace = env.reset(&mut rng);
        for i in 0..150 {
            let st = env.step(&[((i as f64) * 0.37).sin()]).unwrap();
            trace.extend(st.s_next);
            trace.push(st.reward);
        }
        trace
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn unforced_pendulum_energy_drift_is_small() {
    let spec = EnvSpec::new(EnvId::Pendulum).unwrap();
    let energy = |s: &[f64]| 0.5 * s[2] * s[2] + 15.0 * s[0];
    let theta0: f64 = 2.0;
    let mut s = vec![theta0.cos(), theta0.sin(), 0.0];
    let e0 = energy(&s);
    let steps = 2_000;
    for _ in 0..steps {
        s = spec.dynamics(&s, &[0.0]).0;
        assert!(s[2].abs() < 8.0);
    }
    let drift = (energy(&s) - e0).abs() / steps as f64;
    assert!(drift < 1e-2, "{drift}");
}

#[test]
fn out_of_range_actions_are_clamped_and_counted() {
    let mut env = Env::new(EnvSpec::new(EnvId::NdIntegrator(2)).unwrap());
    let a = env.step(&[3.0, 0.0]).unwrap();
    let mut fresh = Env::new(EnvSpec::new(EnvId::NdIntegrator(2)).unwrap());
    let b = fresh.step(&[1.0, 0.0]).unwrap();
    assert_eq!(a, b);
    assert_eq!(env.clamped_actions(), 1);
    assert!(env.step(&[f64::NAN, 0.0]).is_err());
    assert!(env.step(&[0.0]).is_err());
}
