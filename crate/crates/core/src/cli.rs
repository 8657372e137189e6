//! Command implementations behind the `vlearn` binary. Each returns a value
//! instead of exiting, so the commands are testable in-process.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{run_variance_study, BanditStudyConfig, StudyReport};
use crate::checkpoint;
use crate::config::{bandit_config_from_kv, echo, load_train_config, KeyValues};
use crate::critic::CriticLossKind;
use crate::error::{Error, Result};
use crate::policy::PolicyLossKind;
use crate::replay::write_transitions_jsonl;
use crate::trainer::{
    derive_seed, eval_seed, evaluate, FinalReport, JsonlSink, TrainConfig, Trainer,
};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_ECHO_FILE: &str = "config.resolved";
pub const REPORT_FILE: &str = "final_report.json";
pub const NAN_DUMP_FILE: &str = "nan_batch.jsonl";

/// Single-switch modifications of a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    NoIs,
    PpoLoss,
    NoTwin,
    EpsRho20,
    Vtrace,
    Base,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NoIs,
        Variant::PpoLoss,
        Variant::NoTwin,
        Variant::EpsRho20,
        Variant::Vtrace,
        Variant::Base,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoIs => "no_is",
            Variant::PpoLoss => "ppo_loss",
            Variant::NoTwin => "no_twin",
            Variant::EpsRho20 => "eps_rho_20",
            Variant::Vtrace => "vtrace",
            Variant::Base => "base",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Variant::NoIs => cfg.critic_loss = CriticLossKind::NoIs,
            Variant::PpoLoss => cfg.policy_loss = PolicyLossKind::PpoClip,
            Variant::NoTwin => cfg.twin = false,
            Variant::EpsRho20 => {
                cfg.critic.eps_rho = 20.0;
                cfg.policy.eps_rho = 20.0;
            }
            Variant::Vtrace => cfg.critic_loss = CriticLossKind::Vtrace,
            Variant::Base => cfg.critic_loss = CriticLossKind::Base,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs `trainer` to completion, writing metrics, checkpoint, config echo and
/// the final report into `out`. Metrics are appended when `append` is set.
fn run_to_completion(mut trainer: Trainer, out: &Path, append: bool) -> Result<FinalReport> {
    create_dir(out)?;
    write_file(
        &out.join(CONFIG_ECHO_FILE),
        echo(trainer.config()).as_bytes(),
    )?;
    let metrics_path = out.join(METRICS_FILE);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut sink = JsonlSink::new(BufWriter::new(file));
    let total = trainer.config().total_steps;
    match trainer.run_until(total, &mut sink) {
        Ok(()) => {}
        Err(Error::Diverged { step, what, dump }) => {
            let path = out.join(NAN_DUMP_FILE);
            write_transitions_jsonl(&path, &dump)?;
            log::error!(
                "diverged at step {step} ({what}); batch written to {}",
                path.display()
            );
            return Err(Error::Diverged { step, what, dump });
        }
        Err(e) => return Err(e),
    }
    sink.into_inner()
        .flush()
        .map_err(|e| Error::io(&metrics_path, e))?;
    checkpoint::save(&trainer, &out.join(CHECKPOINT_FILE))?;
    let report = trainer.final_report()?;
    write_file(
        &out.join(REPORT_FILE),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}

pub fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<FinalReport> {
    let mut cfg = load_train_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_to_completion(Trainer::new(cfg)?, out, false)
}

pub fn cmd_ablate(
    config: &Path,
    variant: &str,
    seed: Option<u64>,
    out: &Path,
) -> Result<FinalReport> {
    let variant: Variant = variant.parse()?;
    let mut cfg = load_train_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    variant.apply(&mut cfg);
    cfg.validate()?;
    run_to_completion(Trainer::new(cfg)?, out, false)
}

/// Continues a saved run, appending metrics. `total_steps` extends (or
/// shortens) the configured run length.
pub fn cmd_resume(ckpt: &Path, total_steps: Option<u64>, out: &Path) -> Result<FinalReport> {
    let mut trainer = checkpoint::load(ckpt)?;
    if let Some(n) = total_steps {
        if n < trainer.steps_done() {
            return Err(Error::Config(format!(
                "--total-steps {n} is below the {} steps already taken",
                trainer.steps_done()
            )));
        }
        trainer.cfg.total_steps = n;
    }
    run_to_completion(trainer, out, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRow {
    pub divergence: f64,
    pub estimator: String,
    pub mean: f64,
    pub variance: f64,
    pub bias: f64,
    pub ess_mean: f64,
    pub ess_rho: f64,
    pub ess_rho2: f64,
}

pub const BANDIT_CSV: &str = "bandit_lab.csv";
pub const BANDIT_JSON: &str = "bandit_lab.json";

pub fn bandit_rows(reports: &[(f64, StudyReport)]) -> Vec<BanditRow> {
    reports
        .iter()
        .flat_map(|(div, rep)| {
            rep.estimators.iter().map(move |e| BanditRow {
                divergence: *div,
                estimator: e.estimator.clone(),
                mean: e.mean,
                variance: e.variance,
                bias: e.bias,
                ess_mean: e.ess_mean,
                ess_rho: rep.ess_rho_mean,
                ess_rho2: rep.ess_rho2_mean,
            })
        })
        .collect()
}

pub fn cmd_bandit_lab(config: &Path, out: &Path) -> Result<Vec<BanditRow>> {
    let cfg = bandit_config_from_kv(&KeyValues::read(config)?)?;
    create_dir(out)?;
    let mut reports = Vec::with_capacity(cfg.divergences.len());
    for (i, &kl) in cfg.divergences.iter().enumerate() {
        let study = BanditStudyConfig::mean_shift(
            kl,
            cfg.n,
            cfg.trials,
            cfg.reward,
            derive_seed(cfg.seed, i as u64),
        )?;
        log::info!("bandit study kl={kl}");
        reports.push((kl, run_variance_study(&study)?));
    }
    let rows = bandit_rows(&reports);
    let mut csv =
        String::from("divergence,estimator,mean,variance,bias,ess_mean,ess_rho,ess_rho2\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.divergence,
            r.estimator,
            r.mean,
            r.variance,
            r.bias,
            r.ess_mean,
            r.ess_rho,
            r.ess_rho2
        ));
    }
    write_file(&out.join(BANDIT_CSV), csv.as_bytes())?;
    let json: Vec<&StudyReport> = reports.iter().map(|(_, r)| r).collect();
    write_file(
        &out.join(BANDIT_JSON),
        serde_json::to_string_pretty(&json)?.as_bytes(),
    )?;
    Ok(rows)
}

pub const FIG1_CURVES: &str = "fig1_curves.csv";
pub const FIG1_MINIMIZERS: &str = "fig1_minimizers.csv";

pub fn cmd_fig1(out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let curves = out.join(FIG1_CURVES);
    let minimizers = out.join(FIG1_MINIMIZERS);
    write_file(&curves, crate::fig1::curves_csv().as_bytes())?;
    write_file(&minimizers, crate::fig1::minimizers_csv().as_bytes())?;
    Ok(vec![curves, minimizers])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// Evaluates a checkpoint's policy. `seed` is a run seed; the rollouts use the
/// evaluation stream derived from it, as training does.
pub fn cmd_eval(ckpt: &Path, episodes: usize, seed: Option<u64>) -> Result<EvalOutput> {
    if episodes == 0 {
        return Err(Error::Config("--episodes must be >= 1".into()));
    }
    let trainer = checkpoint::load(ckpt)?;
    let seed = seed.unwrap_or(trainer.config().seed);
    let env = trainer.config().env_spec()?;
    let (mean_return, returns) = evaluate(trainer.policy(), &env, episodes, eval_seed(seed))?;
    Ok(EvalOutput {
        mean_return,
        returns,
    })
}

/// Reads every metrics line of a run directory.
pub fn read_metrics(out: &Path) -> Result<Vec<crate::trainer::RunMetrics>> {
    let path = out.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Opens a file for buffered writing, naming the path on failure.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}
