use vlearn::checkpoint;
use vlearn::critic::CriticLossKind;
use vlearn::envs::EnvId;
use vlearn::policy::PolicyLossKind;
use vlearn::trainer::{train, JsonlSink, NetConfig, RunMetrics, TrainConfig, Trainer};

fn small(env: EnvId) -> TrainConfig {
    let net = NetConfig {
        hidden: vec![16, 16],
        ..NetConfig::default()
    };
    TrainConfig {
        env,
        total_steps: 300,
        batch_size: 16,
        eval_every: 100,
        eval_episodes: 2,
        old_policy_interval: 20,
        critic_net: net.clone(),
        policy_net: net,
        ..TrainConfig::default()
    }
}

fn metrics_bytes(cfg: &TrainConfig) -> Vec<u8> {
    let mut sink = JsonlSink::new(Vec::new());
    train(cfg.clone(), &mut sink).unwrap();
    sink.into_inner()
}

#[test]
fn identical_seeds_give_identical_metrics() {
    for env in [EnvId::PointMass2d, EnvId::Pendulum, EnvId::NdIntegrator(3)] {
        let cfg = small(env);
        let a = metrics_bytes(&cfg);
        assert!(!a.is_empty());
        assert_eq!(a, metrics_bytes(&cfg));
        let other = TrainConfig { seed: 1, ..cfg };
        assert_ne!(a, metrics_bytes(&other));
    }
}

#[test]
fn every_variant_runs_deterministically() {
    let base = small(EnvId::NdIntegrator(2));
    let variants = [
        TrainConfig {
            critic_loss: CriticLossKind::NoIs,
            ..base.clone()
        },
        TrainConfig {
            critic_loss: CriticLossKind::Vtrace,
            ..base.clone()
        },
        TrainConfig {
            critic_loss: CriticLossKind::Base,
            ..base.clone()
        },
        TrainConfig {
            policy_loss: PolicyLossKind::PpoClip,
            ..base.clone()
        },
        TrainConfig {
            twin: false,
            ..base.clone()
        },
    ];
    for cfg in variants {
        assert_eq!(metrics_bytes(&cfg), metrics_bytes(&cfg));
    }
}

#[test]
fn metrics_are_emitted_on_schedule() {
    let mut cfg = small(EnvId::PointMass2d);
    cfg.total_steps = 250;
    let mut sink: Vec<RunMetrics> = Vec::new();
    let report = train(cfg, &mut sink).unwrap();
    let steps: Vec<u64> = sink.iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![100, 200, 250]);
    assert!(sink.iter().all(|m| m.wall_ms == 0));
    assert_eq!(report.steps, 250);
    assert_eq!(
        report.final_return_mean,
        sink.last().unwrap().episode_return_mean
    );
    assert_eq!(report.critic_updates, 250);
    assert_eq!(report.policy_updates, 125);
    assert_eq!(report.polyak_updates, 250);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut tr = Trainer::new(small(EnvId::Pendulum)).unwrap();
    tr.run_until(137, &mut Vec::<RunMetrics>::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    checkpoint::save(&tr, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded), std::fs::read(&path).unwrap());
    assert_eq!(loaded.steps_done(), 137);
}

#[test]
fn resume_continues_the_identical_trajectory() {
    let cfg = small(EnvId::NdIntegrator(3));
    let mut full = Trainer::new(cfg.clone()).unwrap();
    let mut full_metrics: Vec<RunMetrics> = Vec::new();
    full.run(&mut full_metrics).unwrap();

    let mut first = Trainer::new(cfg).unwrap();
    let mut split_metrics: Vec<RunMetrics> = Vec::new();
    first.run_until(151, &mut split_metrics).unwrap();
    let mut resumed = checkpoint::from_bytes(&checkpoint::to_bytes(&first)).unwrap();
    drop(first);
    resumed.run(&mut split_metrics).unwrap();

    assert_eq!(full_metrics, split_metrics);
    assert_eq!(checkpoint::to_bytes(&full), checkpoint::to_bytes(&resumed));
}
