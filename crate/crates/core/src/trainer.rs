//! Training loop: collect one transition per step from the projected policy,
//! then interleave critic updates, delayed policy updates, polyak averaging
//! and trust-region reference refreshes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::ess;
use crate::critic::{
    critic_loss_and_grad, stack, truncated_ratio_clamped, CriticHyper, CriticLossKind, CriticPair,
};
use crate::envs::{Env, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::gaussian::{log_prob_stored, sample, unsquash_stored, GaussParams};
use crate::mlp::{Activation, BatchTape, MlpSpec, ParamVector, Tape};
use crate::optim::Adam;
use crate::policy::{
    advantage, normalize_advantages, ppo_clip_loss_and_grad, trpl_policy_loss_and_grad,
    PolicyHyper, PolicyLossKind, PolicyNet,
};
use crate::projection::{project, TrustRegionBounds};
use crate::replay::{BufferConfig, ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            layer_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub policy_update_interval: u64,
    /// Counted in policy updates.
    pub old_policy_interval: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    /// When false `wall_ms` is always zero so metric streams are reproducible.
    pub record_wall_time: bool,
    pub critic_loss: CriticLossKind,
    pub policy_loss: PolicyLossKind,
    /// `eps_rho` here is shared with the policy objective.
    pub critic: CriticHyper,
    pub policy: PolicyHyper,
    pub bounds: TrustRegionBounds,
    pub buffer: BufferConfig,
    pub env: EnvId,
    pub critic_net: NetConfig,
    pub policy_net: NetConfig,
    pub twin: bool,
    pub critic_lr: f64,
    pub policy_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            warmup_steps: 0,
            batch_size: 64,
            updates_per_step: 1,
            policy_update_interval: 2,
            old_policy_interval: 1,
            eval_every: 5_000,
            eval_episodes: 10,
            seed: 0,
            record_wall_time: false,
            critic_loss: CriticLossKind::Wis,
            policy_loss: PolicyLossKind::Trpl,
            critic: CriticHyper::default(),
            policy: PolicyHyper::default(),
            bounds: TrustRegionBounds::default(),
            buffer: BufferConfig::default(),
            env: EnvId::PointMass2d,
            critic_net: NetConfig::default(),
            policy_net: NetConfig::default(),
            twin: true,
            critic_lr: 5e-4,
            policy_lr: 5e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.batch_size", self.batch_size as u64),
            ("train.updates_per_step", self.updates_per_step as u64),
            ("train.policy_update_interval", self.policy_update_interval),
            ("train.old_policy_interval", self.old_policy_interval),
            ("train.eval_every", self.eval_every),
            ("train.eval_episodes", self.eval_episodes as u64),
            ("buffer.capacity", self.buffer.capacity as u64),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be >= 1")));
            }
        }
        if self.batch_size > self.buffer.capacity {
            return Err(Error::Config(format!(
                "train.batch_size {} exceeds buffer.capacity {}",
                self.batch_size, self.buffer.capacity
            )));
        }
        self.critic.validate()?;
        self.policy.validate()?;
        if self.policy.eps_rho != self.critic.eps_rho {
            return Err(Error::Config(
                "policy and critic truncation levels differ".into(),
            ));
        }
        TrustRegionBounds::new(self.bounds.eps_mu, self.bounds.eps_sigma)?;
        for (key, lr) in [("critic.lr", self.critic_lr), ("policy.lr", self.policy_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        EnvSpec::new(self.env)?;
        self.policy_spec()?;
        self.critic_spec()?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::new(self.env)
    }

    pub fn policy_spec(&self) -> Result<MlpSpec> {
        let env = self.env_spec()?;
        let n = &self.policy_net;
        MlpSpec::new(
            env.state_dim,
            n.hidden.clone(),
            2 * env.action_dim,
            n.activation,
            n.layer_norm,
        )
    }

    pub fn critic_spec(&self) -> Result<MlpSpec> {
        let env = self.env_spec()?;
        let n = &self.critic_net;
        MlpSpec::new(
            env.state_dim,
            n.hidden.clone(),
            1,
            n.activation,
            n.layer_norm,
        )
    }

    fn uses_projection(&self) -> bool {
        self.policy_loss == PolicyLossKind::Trpl
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_POLICY_INIT: u64 = 1;
const STREAM_CRITIC_INIT: u64 = 2;
const STREAM_ENV: u64 = 3;
const STREAM_ACTION: u64 = 4;
const STREAM_BUFFER: u64 = 5;
const STREAM_EVAL: u64 = 6;

/// Seed of the evaluation rollouts belonging to a run seed.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_EVAL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub step: u64,
    pub episode_return_mean: f64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub mean_d_mean: f64,
    pub mean_d_cov: f64,
    pub mean_ratio: f64,
    pub frac_clamped: f64,
    pub batch_ess: f64,
    pub wall_ms: u64,
}

pub trait MetricsSink {
    fn emit(&mut self, m: &RunMetrics) -> Result<()>;
}

impl MetricsSink for Vec<RunMetrics> {
    fn emit(&mut self, m: &RunMetrics) -> Result<()> {
        self.push(m.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn emit(&mut self, _: &RunMetrics) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line.
pub struct JsonlSink<W: std::io::Write> {
    writer: W,
}

impl<W: std::io::Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: std::io::Write> MetricsSink for JsonlSink<W> {
    fn emit(&mut self, m: &RunMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.writer, m)?;
        self.writer
            .write_all(b"\n")
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::io("<metrics>", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub steps: u64,
    pub final_return_mean: f64,
    pub final_returns: Vec<f64>,
    pub critic_updates: u64,
    pub policy_updates: u64,
    pub polyak_updates: u64,
    pub old_policy_refreshes: u64,
    pub episodes_completed: u64,
    pub clamped_actions: u64,
}

/// Running sums between two metric emissions.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct MetricWindow {
    pub critic_loss: f64,
    pub critic_count: u64,
    pub policy_loss: f64,
    pub d_mean: f64,
    pub d_cov: f64,
    pub policy_count: u64,
    pub ratio: f64,
    pub clamped: f64,
    pub ess: f64,
}

impl MetricWindow {
    fn finish(&self, step: u64, episode_return_mean: f64, wall_ms: u64) -> RunMetrics {
        let mean = |sum: f64, n: u64| if n == 0 { 0.0 } else { sum / n as f64 };
        RunMetrics {
            step,
            episode_return_mean,
            critic_loss: mean(self.critic_loss, self.critic_count),
            policy_loss: mean(self.policy_loss, self.policy_count),
            mean_d_mean: mean(self.d_mean, self.policy_count),
            mean_d_cov: mean(self.d_cov, self.policy_count),
            mean_ratio: mean(self.ratio, self.critic_count),
            frac_clamped: mean(self.clamped, self.critic_count),
            batch_ess: mean(self.ess, self.critic_count),
            wall_ms,
        }
    }
}

/// Rolls out the deterministic `tanh(mean)` action of the current policy.
pub fn evaluate(
    policy: &PolicyNet,
    env: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::default();
    let spec = policy.spec();
    let k = policy.action_dim();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut e = Env::new(*env);
        e.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let head = spec.forward_tape(policy.phi.as_slice(), e.state(), &mut tape)?;
            let action: Vec<f64> = head[..k].iter().map(|m| m.tanh()).collect();
            let step = e.step(&action)?;
            total += step.reward;
            if step.done || step.truncated {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    Ok((mean, returns))
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) env: Env,
    pub(crate) policy: PolicyNet,
    pub(crate) critics: CriticPair,
    pub(crate) buffer: ReplayBuffer,
    pub(crate) policy_opt: Adam,
    pub(crate) critic_opts: Vec<Adam>,
    pub(crate) env_rng: ChaCha8Rng,
    pub(crate) act_rng: ChaCha8Rng,
    pub(crate) buf_rng: ChaCha8Rng,
    pub(crate) step: u64,
    pub(crate) critic_updates: u64,
    pub(crate) policy_updates: u64,
    pub(crate) polyak_updates: u64,
    pub(crate) old_refreshes: u64,
    pub(crate) episodes_completed: u64,
    pub(crate) episode_return: f64,
    pub(crate) window: MetricWindow,
    scratch: BatchTape,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env_spec = cfg.env_spec()?;
        let policy = PolicyNet::new(
            cfg.policy_spec()?,
            derive_seed(cfg.seed, STREAM_POLICY_INIT),
        )?;
        let critics = CriticPair::new(
            cfg.critic_spec()?,
            derive_seed(cfg.seed, STREAM_CRITIC_INIT),
            cfg.twin,
        )?;
        let policy_opt = Adam::new(policy.spec().param_count(), cfg.policy_lr);
        let critic_opts = (0..critics.len())
            .map(|_| Adam::new(critics.spec().param_count(), cfg.critic_lr))
            .collect();
        let mut env_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_ENV));
        let mut env = Env::new(env_spec);
        env.reset(&mut env_rng);
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer.capacity)?,
            act_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_ACTION)),
            buf_rng: ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed ^ cfg.buffer.seed,
                STREAM_BUFFER,
            )),
            env_rng,
            env,
            policy,
            critics,
            policy_opt,
            critic_opts,
            step: 0,
            critic_updates: 0,
            policy_updates: 0,
            polyak_updates: 0,
            old_refreshes: 0,
            episodes_completed: 0,
            episode_return: 0.0,
            window: MetricWindow::default(),
            scratch: BatchTape::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Runs until `total_steps`.
    pub fn run(&mut self, sink: &mut dyn MetricsSink) -> Result<FinalReport> {
        self.run_until(self.cfg.total_steps, sink)?;
        self.final_report()
    }

    /// Runs until `min(limit, total_steps)` loop iterations have completed.
    pub fn run_until(&mut self, limit: u64, sink: &mut dyn MetricsSink) -> Result<()> {
        let limit = limit.min(self.cfg.total_steps);
        let started = Instant::now();
        while self.step < limit {
            self.iterate()?;
            if self.step.is_multiple_of(self.cfg.eval_every) || self.step == self.cfg.total_steps {
                let (ret, _) = self.evaluate()?;
                let wall = if self.cfg.record_wall_time {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                };
                let m = self.window.finish(self.step, ret, wall);
                log::info!(
                    "step {} return {:.3} critic {:.4} policy {:.4}",
                    m.step,
                    m.episode_return_mean,
                    m.critic_loss,
                    m.policy_loss
                );
                sink.emit(&m)?;
                self.window = MetricWindow::default();
            }
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<(f64, Vec<f64>)> {
        evaluate(
            &self.policy,
            self.env.spec(),
            self.cfg.eval_episodes,
            eval_seed(self.cfg.seed),
        )
    }

    pub fn final_report(&self) -> Result<FinalReport> {
        let (mean, returns) = self.evaluate()?;
        Ok(FinalReport {
            steps: self.step,
            final_return_mean: mean,
            final_returns: returns,
            critic_updates: self.critic_updates,
            policy_updates: self.policy_updates,
            polyak_updates: self.polyak_updates,
            old_policy_refreshes: self.old_refreshes,
            episodes_completed: self.episodes_completed,
            clamped_actions: self.env.clamped_actions(),
        })
    }

    /// Distribution that acts and that the importance ratios refer to.
    fn acting_dist(&self, p: GaussParams, p_old: &GaussParams) -> GaussParams {
        if self.cfg.uses_projection() {
            project(&p, p_old, self.cfg.bounds).params
        } else {
            p
        }
    }

    /// One loop iteration: collect a transition, then run the scheduled updates.
    pub fn iterate(&mut self) -> Result<()> {
        let s = self.env.state().to_vec();
        let dist = self.acting_dist(self.policy.dist(&s)?, &self.policy.old_dist(&s)?);
        let action = sample(&dist, &mut self.act_rng).a;
        let logp_b = log_prob_stored(&dist, &action)?;
        let out = self.env.step(&action)?;
        self.episode_return += out.reward;
        self.buffer.push(Transition {
            s,
            a: action,
            r: out.reward,
            s_next: out.s_next,
            done: out.done,
            logp_b,
        })?;
        if out.done || out.truncated {
            self.episodes_completed += 1;
            log::debug!(
                "episode {} return {:.3}",
                self.episodes_completed,
                self.episode_return
            );
            self.episode_return = 0.0;
            self.env.reset(&mut self.env_rng);
        }
        self.step += 1;

        if self.step > self.cfg.warmup_steps {
            for _ in 0..self.cfg.updates_per_step {
                self.update()?;
            }
        }
        Ok(())
    }

    fn diverged(&self, what: &'static str, batch: Vec<Transition>) -> Error {
        Error::Diverged {
            step: self.step,
            what,
            dump: batch,
        }
    }

    fn update(&mut self) -> Result<()> {
        let mut batch = self
            .buffer
            .sample_batch(self.cfg.batch_size, &mut self.buf_rng)?;
        let eps_rho = self.cfg.critic.eps_rho;
        let mut ratios = Vec::with_capacity(batch.len());
        let mut logp_now = Vec::with_capacity(batch.len());
        let mut clamped = 0usize;
        let rows = batch.len();
        let width = 2 * self.policy.action_dim();
        let states = stack(&batch, |t| &t.s);
        let spec = self.policy.spec();
        let old_heads = spec
            .forward_batch(
                self.policy.old_phi().as_slice(),
                &states,
                rows,
                &mut self.scratch,
            )?
            .to_vec();
        let heads = spec
            .forward_batch(self.policy.phi.as_slice(), &states, rows, &mut self.scratch)?
            .to_vec();
        for (r, t) in batch.iter().enumerate() {
            let p = GaussParams::from_head(&heads[r * width..(r + 1) * width])?;
            let p_old = GaussParams::from_head(&old_heads[r * width..(r + 1) * width])?;
            let dist = self.acting_dist(p, &p_old);
            let logp = dist.log_prob_pre_squash(&unsquash_stored(&t.a));
            let (rho, c) = truncated_ratio_clamped(logp, t.logp_b, eps_rho);
            ratios.push(rho);
            logp_now.push(logp);
            clamped += usize::from(c);
        }
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(self.diverged("importance ratio", batch));
        }

        let critic_out = match critic_loss_and_grad(
            self.cfg.critic_loss,
            &self.critics,
            &batch,
            &ratios,
            &self.cfg.critic,
        ) {
            Ok(out) if out.loss.is_finite() => out,
            Ok(_) | Err(Error::NonFinite(_)) => return Err(self.diverged("critic loss", batch)),
            Err(e) => return Err(e),
        };
        for (i, g) in critic_out.grads.iter().enumerate() {
            self.critic_opts[i].step(self.critics.online_mut(i).as_mut_slice(), g.as_slice());
            if !self.critics.online(i).is_finite() {
                return Err(self.diverged("critic parameters", batch));
            }
        }
        self.critic_updates += 1;
        let w = &mut self.window;
        w.critic_loss += critic_out.loss;
        w.critic_count += 1;
        w.ratio += ratios.iter().sum::<f64>() / ratios.len() as f64;
        w.clamped += clamped as f64 / ratios.len() as f64;
        w.ess += ess(&ratios, false).unwrap_or(0.0);

        if self
            .critic_updates
            .is_multiple_of(self.cfg.policy_update_interval)
        {
            let raw = advantage(&batch, &self.critics, self.cfg.critic.gamma)?;
            let adv = if self.cfg.policy.normalize_adv {
                normalize_advantages(&raw)
            } else {
                raw
            };
            if self.cfg.critic_loss == CriticLossKind::NoIs {
                // behavior log-probabilities replaced by the current ones: unit ratios
                for (t, &lp) in batch.iter_mut().zip(&logp_now) {
                    t.logp_b = lp;
                }
            }
            let out = match self.cfg.policy_loss {
                PolicyLossKind::Trpl => trpl_policy_loss_and_grad(
                    &self.policy,
                    &batch,
                    &adv,
                    self.cfg.bounds,
                    &self.cfg.policy,
                ),
                PolicyLossKind::PpoClip => {
                    ppo_clip_loss_and_grad(&self.policy, &batch, &adv, &self.cfg.policy)
                }
            };
            let out = match out {
                Ok(out) => out,
                Err(Error::NonFinite(_)) => return Err(self.diverged("policy loss", batch)),
                Err(e) => return Err(e),
            };
            self.policy_opt
                .step(self.policy.phi.as_mut_slice(), out.grad.as_slice());
            if !self.policy.phi.is_finite() {
                return Err(self.diverged("policy parameters", batch));
            }
            self.policy_updates += 1;
            let w = &mut self.window;
            w.policy_loss += out.loss;
            w.d_mean += out.stats.mean_d_mean;
            w.d_cov += out.stats.mean_d_cov;
            w.policy_count += 1;
        }

        self.critics.polyak_update(self.cfg.critic.tau);
        self.polyak_updates += 1;

        if self
            .critic_updates
            .is_multiple_of(self.cfg.policy_update_interval)
            && self
                .policy_updates
                .is_multiple_of(self.cfg.old_policy_interval)
        {
            self.policy.snapshot_old_policy();
            self.old_refreshes += 1;
        }
        Ok(())
    }

    pub fn policy_params(&self) -> &ParamVector {
        &self.policy.phi
    }
}

/// Runs a full training job.
pub fn train(cfg: TrainConfig, sink: &mut dyn MetricsSink) -> Result<FinalReport> {
    Trainer::new(cfg)?.run(sink)
}
