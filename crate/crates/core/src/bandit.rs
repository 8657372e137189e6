//! Stateless (bandit) comparison of the naive, self-normalized and squared
//! self-normalized importance-sampling value estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub rho: f64,
    pub reward: f64,
}

fn check_samples(samples: &[WeightedSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if samples
        .iter()
        .any(|s| !(s.rho >= 0.0 && s.rho.is_finite()) || !s.reward.is_finite())
    {
        return Err(Error::DegenerateWeights(
            "weights must be finite and non-negative",
        ));
    }
    Ok(())
}

/// `Σ ρ r / N`.
pub fn estimate_base(samples: &[WeightedSample]) -> Result<f64> {
    check_samples(samples)?;
    let num: f64 = samples.iter().map(|s| s.rho * s.reward).sum();
    Ok(num / samples.len() as f64)
}

/// Weights divided by their maximum. Both self-normalized estimators are scale
/// free, and this makes equal weights exactly one.
fn relative_weights(samples: &[WeightedSample]) -> Option<Vec<f64>> {
    let max = samples.iter().map(|s| s.rho).fold(0.0, f64::max);
    (max > 0.0).then(|| samples.iter().map(|s| s.rho / max).collect())
}

/// `Σ ρ r / Σ ρ`.
pub fn estimate_wis(samples: &[WeightedSample]) -> Result<f64> {
    check_samples(samples)?;
    let w = relative_weights(samples).ok_or(Error::DegenerateWeights("sum of weights is zero"))?;
    let num: f64 = w.iter().zip(samples).map(|(w, s)| w * s.reward).sum();
    Ok(num / w.iter().sum::<f64>())
}

/// `Σ ρ² r / Σ ρ²`.
pub fn estimate_vtrace(samples: &[WeightedSample]) -> Result<f64> {
    check_samples(samples)?;
    let w = relative_weights(samples)
        .ok_or(Error::DegenerateWeights("sum of squared weights is zero"))?;
    let num: f64 = w.iter().zip(samples).map(|(w, s)| w * w * s.reward).sum();
    Ok(num / w.iter().map(|w| w * w).sum::<f64>())
}

/// `(Σρ)²/Σρ²`, or `(Σρ²)²/Σρ⁴` when `squared`.
pub fn ess(rhos: &[f64], squared: bool) -> Result<f64> {
    if rhos.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(Error::DegenerateWeights(
            "weights must be finite and non-negative",
        ));
    }
    let max = rhos.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateWeights("all weights are zero"));
    }
    // the ratio is scale free; rescaling keeps the fourth powers representable
    let (mut s1, mut s2) = (0.0, 0.0);
    for &r in rhos {
        let w = r / max;
        let w = if squared { w * w } else { w };
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardFn {
    /// `-scale · Σ (a_i - optimum)²`
    Quadratic { optimum: f64, scale: f64 },
    /// `slope · Σ a_i`
    Linear { slope: f64 },
}

impl RewardFn {
    pub fn eval(&self, a: &[f64]) -> f64 {
        match *self {
            RewardFn::Quadratic { optimum, scale } => {
                -scale * a.iter().map(|x| (x - optimum) * (x - optimum)).sum::<f64>()
            }
            RewardFn::Linear { slope } => slope * a.iter().sum::<f64>(),
        }
    }

    /// `E_{a ~ N(μ, diag σ²)}[r(a)]`.
    pub fn expectation(&self, p: &GaussParams) -> f64 {
        match *self {
            RewardFn::Quadratic { optimum, scale } => {
                -scale
                    * (0..p.dim())
                        .map(|i| {
                            let d = p.mean()[i] - optimum;
                            d * d + p.var(i)
                        })
                        .sum::<f64>()
            }
            RewardFn::Linear { slope } => slope * p.mean().iter().sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditStudyConfig {
    pub n: usize,
    pub trials: usize,
    pub behavior: GaussParams,
    pub target: GaussParams,
    pub reward: RewardFn,
    pub seed: u64,
}

impl BanditStudyConfig {
    /// One-dimensional study with behavior `N(0, 1)` and target `N(√(2·kl), 1)`,
    /// so that `KL(target ‖ behavior) = kl`.
    pub fn mean_shift(
        kl: f64,
        n: usize,
        trials: usize,
        reward: RewardFn,
        seed: u64,
    ) -> Result<Self> {
        if !(kl >= 0.0 && kl.is_finite()) {
            return Err(Error::Config(format!("divergence must be >= 0, got {kl}")));
        }
        Ok(Self {
            n,
            trials,
            behavior: GaussParams::new(vec![0.0], vec![0.0])?,
            target: GaussParams::new(vec![(2.0 * kl).sqrt()], vec![0.0])?,
            reward,
            seed,
        })
    }
}

/// Welford one-pass mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub estimator: String,
    pub mean: f64,
    pub variance: f64,
    pub bias: f64,
    /// Mean effective sample size matching the estimator's weighting.
    pub ess_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n: usize,
    pub trials: usize,
    pub kl: f64,
    pub true_value: f64,
    pub estimators: Vec<EstimatorStats>,
    pub ess_rho_mean: f64,
    pub ess_rho2_mean: f64,
}

impl StudyReport {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorStats> {
        self.estimators.iter().find(|e| e.estimator == estimator)
    }

    pub fn csv_header() -> &'static str {
        "estimator,mean,variance,bias,ess_mean"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for e in &self.estimators {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.estimator, e.mean, e.variance, e.bias, e.ess_mean
            ));
        }
        out
    }
}

pub fn run_variance_study(cfg: &BanditStudyConfig) -> Result<StudyReport> {
    if cfg.n == 0 || cfg.trials == 0 {
        return Err(Error::Config(
            "bandit study needs n >= 1 and trials >= 1".into(),
        ));
    }
    crate::error::check_dim("target dimension", cfg.behavior.dim(), cfg.target.dim())?;
    let dim = cfg.behavior.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = vec![
        WeightedSample {
            rho: 0.0,
            reward: 0.0
        };
        cfg.n
    ];
    let mut rhos = vec![0.0; cfg.n];
    let mut a = vec![0.0; dim];
    let mut stats = [RunningStats::default(); 3];
    let (mut ess1, mut ess2) = (RunningStats::default(), RunningStats::default());

    for _ in 0..cfg.trials {
        for (i, slot) in samples.iter_mut().enumerate() {
            for (j, aj) in a.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *aj = cfg.behavior.mean()[j] + cfg.behavior.std(j) * z;
            }
            let rho =
                (cfg.target.gaussian_log_density(&a) - cfg.behavior.gaussian_log_density(&a)).exp();
            *slot = WeightedSample {
                rho,
                reward: cfg.reward.eval(&a),
            };
            rhos[i] = rho;
        }
        stats[0].push(estimate_base(&samples)?);
        stats[1].push(estimate_wis(&samples)?);
        stats[2].push(estimate_vtrace(&samples)?);
        ess1.push(ess(&rhos, false)?);
        ess2.push(ess(&rhos, true)?);
    }

    let true_value = cfg.reward.expectation(&cfg.target);
    let (kl_mean, kl_cov) = crate::gaussian::kl_decomposed(&cfg.target, &cfg.behavior);
    let names = ["base", "wis", "vtrace"];
    let ess_of = [ess1.mean(), ess1.mean(), ess2.mean()];
    let estimators = (0..3)
        .map(|i| EstimatorStats {
            estimator: names[i].to_string(),
            mean: stats[i].mean(),
            variance: stats[i].variance(),
            bias: stats[i].mean() - true_value,
            ess_mean: ess_of[i],
        })
        .collect();
    Ok(StudyReport {
        n: cfg.n,
        trials: cfg.trials,
        kl: kl_mean + kl_cov,
        true_value,
        estimators,
        ess_rho_mean: ess1.mean(),
        ess_rho2_mean: ess2.mean(),
    })
}
