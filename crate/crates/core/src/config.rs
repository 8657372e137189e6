//! Flat `key=value` experiment files with dotted namespaces.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to its default; unknown keys are rejected as a group.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::bandit::RewardFn;
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::mlp::Activation;
use crate::trainer::{NetConfig, TrainConfig};

pub const TRAIN_KEYS: &[&str] = &[
    "train.total_steps",
    "train.warmup_steps",
    "train.batch_size",
    "train.updates_per_step",
    "train.policy_update_interval",
    "train.old_policy_interval",
    "train.eval_every",
    "train.eval_episodes",
    "train.seed",
    "train.record_wall_time",
    "critic.loss",
    "critic.gamma",
    "critic.eps_rho",
    "critic.tau",
    "critic.lr",
    "critic.hidden",
    "critic.activation",
    "critic.layer_norm",
    "critic.twin",
    "policy.loss",
    "policy.alpha",
    "policy.clip",
    "policy.normalize_adv",
    "policy.lr",
    "policy.hidden",
    "policy.activation",
    "policy.layer_norm",
    "trust_region.eps_mu",
    "trust_region.eps_sigma",
    "buffer.capacity",
    "buffer.seed",
    "env.id",
    "env.dim",
];

pub const BANDIT_KEYS: &[&str] = &[
    "bandit.n",
    "bandit.trials",
    "bandit.seed",
    "bandit.divergences",
    "bandit.reward",
    "bandit.slope",
    "bandit.optimum",
    "bandit.scale",
];

/// Parsed `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<String> = self
            .0
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownKeys(unknown))
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| Error::Config(format!("{key}={raw:?}: {e}"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(raw) => Err(Error::Config(format!(
                "{key}={raw:?}: expected true or false"
            ))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("{key}={raw:?}: {e}")))
                })
                .collect(),
        }
    }
}

fn net_config(kv: &KeyValues, ns: &str, default: &NetConfig) -> Result<NetConfig> {
    let activation = match kv.get(&format!("{ns}.activation")) {
        None => default.activation,
        Some(raw) => raw.parse::<Activation>()?,
    };
    Ok(NetConfig {
        hidden: kv.list(&format!("{ns}.hidden"), default.hidden.clone())?,
        activation,
        layer_norm: kv.flag(&format!("{ns}.layer_norm"), default.layer_norm)?,
    })
}

pub fn train_config_from_kv(kv: &KeyValues) -> Result<TrainConfig> {
    kv.reject_unknown(TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        total_steps: kv.value("train.total_steps", d.total_steps)?,
        warmup_steps: kv.value("train.warmup_steps", d.warmup_steps)?,
        batch_size: kv.value("train.batch_size", d.batch_size)?,
        updates_per_step: kv.value("train.updates_per_step", d.updates_per_step)?,
        policy_update_interval: kv
            .value("train.policy_update_interval", d.policy_update_interval)?,
        old_policy_interval: kv.value("train.old_policy_interval", d.old_policy_interval)?,
        eval_every: kv.value("train.eval_every", d.eval_every)?,
        eval_episodes: kv.value("train.eval_episodes", d.eval_episodes)?,
        seed: kv.value("train.seed", d.seed)?,
        record_wall_time: kv.flag("train.record_wall_time", d.record_wall_time)?,
        critic_loss: kv.value("critic.loss", d.critic_loss)?,
        policy_loss: kv.value("policy.loss", d.policy_loss)?,
        critic_net: net_config(kv, "critic", &d.critic_net)?,
        policy_net: net_config(kv, "policy", &d.policy_net)?,
        twin: kv.flag("critic.twin", d.twin)?,
        critic_lr: kv.value("critic.lr", d.critic_lr)?,
        policy_lr: kv.value("policy.lr", d.policy_lr)?,
        ..d.clone()
    };
    cfg.critic.gamma = kv.value("critic.gamma", d.critic.gamma)?;
    cfg.critic.eps_rho = kv.value("critic.eps_rho", d.critic.eps_rho)?;
    cfg.critic.tau = kv.value("critic.tau", d.critic.tau)?;
    cfg.policy.alpha = kv.value("policy.alpha", d.policy.alpha)?;
    cfg.policy.clip = kv.value("policy.clip", d.policy.clip)?;
    cfg.policy.normalize_adv = kv.flag("policy.normalize_adv", d.policy.normalize_adv)?;
    cfg.policy.eps_rho = cfg.critic.eps_rho;
    cfg.bounds.eps_mu = kv.value("trust_region.eps_mu", d.bounds.eps_mu)?;
    cfg.bounds.eps_sigma = kv.value("trust_region.eps_sigma", d.bounds.eps_sigma)?;
    cfg.buffer.capacity = kv.value("buffer.capacity", d.buffer.capacity)?;
    cfg.buffer.seed = kv.value("buffer.seed", d.buffer.seed)?;
    let id = kv.get("env.id").unwrap_or(d.env.config_id());
    cfg.env = EnvId::parse(id, kv.value("env.dim", 0usize)?)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    train_config_from_kv(&KeyValues::parse(text)?)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    train_config_from_kv(&KeyValues::read(path)?)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every key of the resolved configuration, in [`TRAIN_KEYS`] order.
pub fn to_kv(cfg: &TrainConfig) -> KeyValues {
    let mut kv = KeyValues::default();
    let env_dim = match cfg.env {
        EnvId::NdIntegrator(d) => d,
        _ => 0,
    };
    let entries: Vec<(&str, String)> = vec![
        ("train.total_steps", cfg.total_steps.to_string()),
        ("train.warmup_steps", cfg.warmup_steps.to_string()),
        ("train.batch_size", cfg.batch_size.to_string()),
        ("train.updates_per_step", cfg.updates_per_step.to_string()),
        (
            "train.policy_update_interval",
            cfg.policy_update_interval.to_string(),
        ),
        (
            "train.old_policy_interval",
            cfg.old_policy_interval.to_string(),
        ),
        ("train.eval_every", cfg.eval_every.to_string()),
        ("train.eval_episodes", cfg.eval_episodes.to_string()),
        ("train.seed", cfg.seed.to_string()),
        ("train.record_wall_time", cfg.record_wall_time.to_string()),
        ("critic.loss", cfg.critic_loss.name().to_string()),
        ("critic.gamma", cfg.critic.gamma.to_string()),
        ("critic.eps_rho", cfg.critic.eps_rho.to_string()),
        ("critic.tau", cfg.critic.tau.to_string()),
        ("critic.lr", cfg.critic_lr.to_string()),
        ("critic.hidden", join(&cfg.critic_net.hidden)),
        (
            "critic.activation",
            cfg.critic_net.activation.name().to_string(),
        ),
        ("critic.layer_norm", cfg.critic_net.layer_norm.to_string()),
        ("critic.twin", cfg.twin.to_string()),
        ("policy.loss", cfg.policy_loss.name().to_string()),
        ("policy.alpha", cfg.policy.alpha.to_string()),
        ("policy.clip", cfg.policy.clip.to_string()),
        ("policy.normalize_adv", cfg.policy.normalize_adv.to_string()),
        ("policy.lr", cfg.policy_lr.to_string()),
        ("policy.hidden", join(&cfg.policy_net.hidden)),
        (
            "policy.activation",
            cfg.policy_net.activation.name().to_string(),
        ),
        ("policy.layer_norm", cfg.policy_net.layer_norm.to_string()),
        ("trust_region.eps_mu", cfg.bounds.eps_mu.to_string()),
        ("trust_region.eps_sigma", cfg.bounds.eps_sigma.to_string()),
        ("buffer.capacity", cfg.buffer.capacity.to_string()),
        ("buffer.seed", cfg.buffer.seed.to_string()),
        ("env.id", cfg.env.config_id().to_string()),
        ("env.dim", env_dim.to_string()),
    ];
    for (k, v) in entries {
        kv.set(k, v);
    }
    kv
}

/// Resolved configuration as text; parsing it yields `cfg` again.
pub fn echo(cfg: &TrainConfig) -> String {
    let kv = to_kv(cfg);
    let mut out = String::new();
    for key in TRAIN_KEYS {
        out.push_str(&format!("{key}={}\n", kv.get(key).unwrap_or_default()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditLabConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub divergences: Vec<f64>,
    pub reward: RewardFn,
}

impl Default for BanditLabConfig {
    fn default() -> Self {
        Self {
            n: 32,
            trials: 100_000,
            seed: 0,
            divergences: vec![0.0, 0.125, 0.5, 2.0],
            reward: RewardFn::Linear { slope: 1.0 },
        }
    }
}

pub fn bandit_config_from_kv(kv: &KeyValues) -> Result<BanditLabConfig> {
    kv.reject_unknown(BANDIT_KEYS)?;
    let d = BanditLabConfig::default();
    let reward = match kv.get("bandit.reward").unwrap_or("linear") {
        "linear" => RewardFn::Linear {
            slope: kv.value("bandit.slope", 1.0)?,
        },
        "quadratic" => RewardFn::Quadratic {
            optimum: kv.value("bandit.optimum", 0.0)?,
            scale: kv.value("bandit.scale", 1.0)?,
        },
        other => {
            return Err(Error::Config(format!(
                "bandit.reward={other:?}: expected linear or quadratic"
            )))
        }
    };
    let cfg = BanditLabConfig {
        n: kv.value("bandit.n", d.n)?,
        trials: kv.value("bandit.trials", d.trials)?,
        seed: kv.value("bandit.seed", d.seed)?,
        divergences: kv.list("bandit.divergences", d.divergences)?,
        reward,
    };
    if cfg.n == 0 || cfg.trials == 0 || cfg.divergences.is_empty() {
        return Err(Error::Config(
            "bandit.n and bandit.trials must be >= 1 and bandit.divergences non-empty".into(),
        ));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_train_config("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_train_config(
            "# desk run\nenv.id = nd_integrator\nenv.dim=16\ncritic.hidden=32,32\ncritic.tau=0.005\npolicy.lr=3e-4\n",
        )
        .unwrap();
        assert_eq!(cfg.env, EnvId::NdIntegrator(16));
        assert_eq!(parse_train_config(&echo(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_listed() {
        match parse_train_config("critic.gama=0.9\nfoo=1\n") {
            Err(Error::UnknownKeys(keys)) => assert_eq!(keys, vec!["critic.gama", "foo"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_train_config("critic.gamma\n").is_err());
        assert!(parse_train_config("critic.gamma=1.5\n").is_err());
        assert!(parse_train_config("critic.gamma=0.9\ncritic.gamma=0.8\n").is_err());
        assert!(parse_train_config("critic.twin=maybe\n").is_err());
        assert!(parse_train_config("train.batch_size=10\nbuffer.capacity=5\n").is_err());
    }

    #[test]
    fn bandit_keys() {
        let kv =
            KeyValues::parse("bandit.divergences=0.5,2\nbandit.reward=quadratic\nbandit.scale=2\n")
                .unwrap();
        let cfg = bandit_config_from_kv(&kv).unwrap();
        assert_eq!(cfg.divergences, vec![0.5, 2.0]);
        assert_eq!(
            cfg.reward,
            RewardFn::Quadratic {
                optimum: 0.0,
                scale: 2.0
            }
        );
    }
}
