//! State-value critics with target networks and the three off-policy
//! Bellman losses (weighted importance sampling, 1-step V-trace, naive IS).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{BatchTape, MlpSpec, ParamVector, Tape};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticLossKind {
    Wis,
    Vtrace,
    Base,
    /// WIS loss with every ratio forced to 1.
    NoIs,
}

impl CriticLossKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticLossKind::Wis => "wis",
            CriticLossKind::Vtrace => "vtrace",
            CriticLossKind::Base => "base",
            CriticLossKind::NoIs => "no_is",
        }
    }
}

impl std::str::FromStr for CriticLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wis" => Ok(CriticLossKind::Wis),
            "vtrace" => Ok(CriticLossKind::Vtrace),
            "base" => Ok(CriticLossKind::Base),
            "no_is" => Ok(CriticLossKind::NoIs),
            _ => Err(Error::Config(format!(
                "unknown critic loss {s:?} (expected wis, vtrace, base or no_is)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticHyper {
    pub gamma: f64,
    pub eps_rho: f64,
    pub tau: f64,
}

impl Default for CriticHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eps_rho: 1.0,
            tau: 5e-3,
        }
    }
}

impl CriticHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.eps_rho > 0.0 && self.eps_rho.is_finite()) {
            return Err(Error::Config(format!(
                "eps_rho must be positive, got {}",
                self.eps_rho
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `min(exp(logp_pi - logp_b), eps_rho)` together with whether the clamp is active.
pub fn truncated_ratio_clamped(logp_pi: f64, logp_b: f64, eps_rho: f64) -> (f64, bool) {
    let diff = logp_pi - logp_b;
    if diff > eps_rho.ln() {
        (eps_rho, true)
    } else {
        (diff.exp().min(eps_rho), false)
    }
}

pub fn truncated_ratio(logp_pi: f64, logp_b: f64, eps_rho: f64) -> f64 {
    truncated_ratio_clamped(logp_pi, logp_b, eps_rho).0
}

/// `ρ (v - v̄)²` and its derivative in `v`.
pub fn wis_term(v: f64, v_bar: f64, rho: f64) -> (f64, f64) {
    let e = v - v_bar;
    (rho * e * e, 2.0 * rho * e)
}

/// `(v - [(1-ρ) v_target_s + ρ v̄])²` and its derivative in `v`.
pub fn vtrace_term(v: f64, v_target_s: f64, v_bar: f64, rho: f64) -> (f64, f64) {
    let e = v - ((1.0 - rho) * v_target_s + rho * v_bar);
    (e * e, 2.0 * e)
}

/// `(v - ρ v̄)²` and its derivative in `v`.
pub fn base_term(v: f64, v_bar: f64, rho: f64) -> (f64, f64) {
    let e = v - rho * v_bar;
    (e * e, 2.0 * e)
}

/// One or two online critics, each with its own target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    spec: MlpSpec,
    online: Vec<ParamVector>,
    target: Vec<ParamVector>,
}

impl CriticPair {
    /// `twin = false` keeps a single critic; every minimum then degenerates to it.
    pub fn new(spec: MlpSpec, seed: u64, twin: bool) -> Result<Self> {
        if spec.output_dim() != 1 {
            return Err(Error::InvalidSpec(format!(
                "critic output dimension must be 1, got {}",
                spec.output_dim()
            )));
        }
        let n = if twin { 2 } else { 1 };
        let online: Vec<ParamVector> = (0..n)
            .map(|i| spec.init_params(seed.wrapping_add(i as u64)))
            .collect();
        let target = online.clone();
        Ok(Self {
            spec,
            online,
            target,
        })
    }

    pub fn from_parts(
        spec: MlpSpec,
        online: Vec<ParamVector>,
        target: Vec<ParamVector>,
    ) -> Result<Self> {
        if online.is_empty() || online.len() > 2 || online.len() != target.len() {
            return Err(Error::InvalidSpec(
                "critic pair needs one or two online/target sets".into(),
            ));
        }
        for p in online.iter().chain(&target) {
            crate::error::check_dim("critic parameters", spec.param_count(), p.len())?;
        }
        Ok(Self {
            spec,
            online,
            target,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    pub fn is_twin(&self) -> bool {
        self.online.len() == 2
    }

    pub fn online(&self, i: usize) -> &ParamVector {
        &self.online[i]
    }

    pub fn online_mut(&mut self, i: usize) -> &mut ParamVector {
        &mut self.online[i]
    }

    pub fn target(&self, i: usize) -> &ParamVector {
        &self.target[i]
    }

    pub fn target_mut(&mut self, i: usize) -> &mut ParamVector {
        &mut self.target[i]
    }

    pub fn value(&self, i: usize, s: &[f64]) -> Result<f64> {
        Ok(self.spec.forward(&self.online[i], s)?[0])
    }

    pub fn target_value(&self, i: usize, s: &[f64]) -> Result<f64> {
        Ok(self.spec.forward(&self.target[i], s)?[0])
    }

    /// Minimum over the online critics.
    pub fn value_min(&self, s: &[f64]) -> Result<f64> {
        let mut tape = Tape::default();
        self.value_min_with(s, &mut tape)
    }

    pub(crate) fn value_min_with(&self, s: &[f64], tape: &mut Tape) -> Result<f64> {
        let mut best = f64::INFINITY;
        for p in &self.online {
            let v = self.spec.forward_tape(p.as_slice(), s, tape)?[0];
            best = best.min(v);
        }
        Ok(best)
    }

    /// Minimum over the online critics for every row of a row-major state matrix.
    pub fn value_min_batch(&self, states: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = BatchTape::default();
        let mut best = vec![f64::INFINITY; rows];
        for p in &self.online {
            let v = self
                .spec
                .forward_batch(p.as_slice(), states, rows, &mut tape)?;
            for (b, &x) in best.iter_mut().zip(v) {
                *b = b.min(x);
            }
        }
        Ok(best)
    }

    /// `θ̄ ← τθ + (1-τ)θ̄` for every target.
    pub fn polyak_update(&mut self, tau: f64) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            for (tb, &th) in t.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *tb = tau * th + (1.0 - tau) * *tb;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLossOutput {
    /// Sum of the per-critic losses.
    pub loss: f64,
    pub per_critic: Vec<f64>,
    pub grads: Vec<ParamVector>,
}

/// Row-major stack of one vector field of every transition.
pub(crate) fn stack(batch: &[Transition], field: impl Fn(&Transition) -> &[f64]) -> Vec<f64> {
    batch
        .iter()
        .flat_map(|t| field(t).iter().copied())
        .collect()
}

pub fn critic_loss_and_grad(
    kind: CriticLossKind,
    pair: &CriticPair,
    batch: &[Transition],
    ratios: &[f64],
    hyper: &CriticHyper,
) -> Result<CriticLossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    crate::error::check_dim("importance ratios", batch.len(), ratios.len())?;
    let spec = &pair.spec;
    let rows = batch.len();
    let inv_k = 1.0 / rows as f64;
    let states = stack(batch, |t| &t.s);
    let next_states = stack(batch, |t| &t.s_next);
    let mut tape = BatchTape::default();
    let mut scratch = BatchTape::default();
    let mut upstream = vec![0.0; rows];
    let mut per_critic = Vec::with_capacity(pair.len());
    let mut grads = Vec::with_capacity(pair.len());

    for i in 0..pair.len() {
        let online = pair.online[i].as_slice();
        let target = pair.target[i].as_slice();
        let bootstrap = spec
            .forward_batch(target, &next_states, rows, &mut scratch)?
            .to_vec();
        let target_s = if kind == CriticLossKind::Vtrace {
            spec.forward_batch(target, &states, rows, &mut scratch)?
                .to_vec()
        } else {
            Vec::new()
        };
        let values = spec.forward_batch(online, &states, rows, &mut tape)?;
        let mut loss = 0.0;
        for (r, (t, &rho)) in batch.iter().zip(ratios).enumerate() {
            let next = if t.done { 0.0 } else { bootstrap[r] };
            let v_bar = t.r + hyper.gamma * next;
            let v = values[r];
            let (l, dl) = match kind {
                CriticLossKind::Wis => wis_term(v, v_bar, rho),
                CriticLossKind::NoIs => wis_term(v, v_bar, 1.0),
                CriticLossKind::Vtrace => vtrace_term(v, target_s[r], v_bar, rho),
                CriticLossKind::Base => base_term(v, v_bar, rho),
            };
            loss += l * inv_k;
            upstream[r] = dl * inv_k;
        }
        let mut grad = vec![0.0; spec.param_count()];
        spec.backward_batch(online, &mut tape, &upstream, Some(&mut grad), None)?;
        per_critic.push(loss);
        grads.push(ParamVector::from_vec(grad).map_err(|_| Error::NonFinite("critic gradient"))?);
    }
    Ok(CriticLossOutput {
        loss: per_critic.iter().sum(),
        per_critic,
        grads,
    })
}

pub fn wis_loss_and_grad(
    pair: &CriticPair,
    batch: &[Transition],
    ratios: &[f64],
    hyper: &CriticHyper,
) -> Result<CriticLossOutput> {
    critic_loss_and_grad(CriticLossKind::Wis, pair, batch, ratios, hyper)
}

pub fn vtrace1_loss_and_grad(
    pair: &CriticPair,
    batch: &[Transition],
    ratios: &[f64],
    hyper: &CriticHyper,
) -> Result<CriticLossOutput> {
    critic_loss_and_grad(CriticLossKind::Vtrace, pair, batch, ratios, hyper)
}

pub fn base_loss_and_grad(
    pair: &CriticPair,
    batch: &[Transition],
    ratios: &[f64],
    hyper: &CriticHyper,
) -> Result<CriticLossOutput> {
    critic_loss_and_grad(CriticLossKind::Base, pair, batch, ratios, hyper)
}
