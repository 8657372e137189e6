//! Policy network, one-step advantages and the two policy objectives:
//! the truncated importance-weighted surrogate with a trust-region penalty,
//! and the PPO clipped surrogate used as an ablation.

use serde::{Deserialize, Serialize};

use crate::critic::{stack, truncated_ratio_clamped, CriticPair};
use crate::error::{Error, Result};
use crate::gaussian::{kl_cov_part, kl_mean_part, log_prob_grad, unsquash_stored, GaussParams};
use crate::mlp::{BatchTape, MlpSpec, ParamVector};
use crate::projection::{
    project, project_backward, project_frozen, trust_region_penalty, trust_region_penalty_grad,
    ProjectedGauss, TrustRegionBounds,
};
use crate::replay::Transition;

/// Output-layer weights are shrunk by this factor at initialization so the
/// initial policy is close to state independent.
const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLossKind {
    Trpl,
    PpoClip,
}

impl PolicyLossKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyLossKind::Trpl => "trpl",
            PolicyLossKind::PpoClip => "ppo_clip",
        }
    }
}

impl std::str::FromStr for PolicyLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trpl" => Ok(PolicyLossKind::Trpl),
            "ppo_clip" => Ok(PolicyLossKind::PpoClip),
            _ => Err(Error::Config(format!(
                "unknown policy loss {s:?} (expected trpl or ppo_clip)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyHyper {
    pub alpha: f64,
    pub clip: f64,
    pub eps_rho: f64,
    pub normalize_adv: bool,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            clip: 0.2,
            eps_rho: 1.0,
            normalize_adv: true,
        }
    }
}

impl PolicyHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!(
                "clip must lie in (0, 1), got {}",
                self.clip
            )));
        }
        if !(self.eps_rho > 0.0 && self.eps_rho.is_finite()) {
            return Err(Error::Config(format!(
                "eps_rho must be positive, got {}",
                self.eps_rho
            )));
        }
        Ok(())
    }
}

/// Gaussian policy network with a `[mean; log_std]` head and the trust-region
/// reference snapshot `old_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    spec: MlpSpec,
    pub phi: ParamVector,
    old_phi: ParamVector,
}

impl PolicyNet {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        if !spec.output_dim().is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "policy output dimension must be even, got {}",
                spec.output_dim()
            )));
        }
        let mut phi = spec.init_params(seed);
        for w in &mut phi.as_mut_slice()[spec.output_weight_range()] {
            *w *= OUTPUT_INIT_SCALE;
        }
        let old_phi = phi.clone();
        Ok(Self { spec, phi, old_phi })
    }

    pub fn from_parts(spec: MlpSpec, phi: ParamVector, old_phi: ParamVector) -> Result<Self> {
        if !spec.output_dim().is_multiple_of(2) {
            return Err(Error::InvalidSpec(
                "policy output dimension must be even".into(),
            ));
        }
        crate::error::check_dim("policy parameters", spec.param_count(), phi.len())?;
        crate::error::check_dim("old policy parameters", spec.param_count(), old_phi.len())?;
        Ok(Self { spec, phi, old_phi })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn action_dim(&self) -> usize {
        self.spec.output_dim() / 2
    }

    pub fn old_phi(&self) -> &ParamVector {
        &self.old_phi
    }

    pub fn dist(&self, s: &[f64]) -> Result<GaussParams> {
        GaussParams::from_head(&self.spec.forward(&self.phi, s)?)
    }

    pub fn old_dist(&self, s: &[f64]) -> Result<GaussParams> {
        GaussParams::from_head(&self.spec.forward(&self.old_phi, s)?)
    }

    /// `π̃(·|s)`: the current distribution projected against `π_old`.
    pub fn projected_dist(&self, s: &[f64], bounds: TrustRegionBounds) -> Result<ProjectedGauss> {
        Ok(project(&self.dist(s)?, &self.old_dist(s)?, bounds))
    }

    /// `π_old ← π_φ`.
    pub fn snapshot_old_policy(&mut self) {
        self.old_phi = self.phi.clone();
    }
}

pub fn snapshot_old_policy(net: &mut PolicyNet) {
    net.snapshot_old_policy();
}

/// `Â = r + γ (1-done) min_i V_i(s') - min_i V_i(s)`.
pub fn advantage(batch: &[Transition], pair: &CriticPair, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let rows = batch.len();
    let v_next = pair.value_min_batch(&stack(batch, |t| &t.s_next), rows)?;
    let v = pair.value_min_batch(&stack(batch, |t| &t.s), rows)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let next = if t.done { 0.0 } else { v_next[r] };
            t.r + gamma * next - v[r]
        })
        .collect())
}

/// `(Â - mean) / (std + 1e-8)` with population std; shorter than 2 passes through.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    adv.iter().map(|a| (a - mean) / denom).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyStats {
    /// Mean over the batch of the unprojected mean/covariance KL parts against `π_old`.
    pub mean_d_mean: f64,
    pub mean_d_cov: f64,
    pub mean_ratio: f64,
    pub frac_clamped: f64,
    pub mean_penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLossOutput {
    pub loss: f64,
    pub grad: ParamVector,
    pub stats: PolicyStats,
    /// Per-sample projections (empty for the clipped surrogate).
    pub projections: Vec<ProjectedGauss>,
}

fn check_batch(batch: &[Transition], adv: &[f64]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    crate::error::check_dim("advantages", batch.len(), adv.len())
}

/// Current and old heads for every batch state, as row-major matrices.
struct BatchHeads {
    tape: BatchTape,
    old: Vec<f64>,
}

impl BatchHeads {
    fn compute(net: &PolicyNet, batch: &[Transition]) -> Result<Self> {
        let rows = batch.len();
        let states = stack(batch, |t| &t.s);
        let mut tape = BatchTape::default();
        let old = net
            .spec
            .forward_batch(net.old_phi.as_slice(), &states, rows, &mut tape)?
            .to_vec();
        net.spec
            .forward_batch(net.phi.as_slice(), &states, rows, &mut tape)?;
        Ok(Self { tape, old })
    }

    fn head(&self, r: usize, width: usize) -> &[f64] {
        &self.tape.output()[r * width..(r + 1) * width]
    }

    fn old_head(&self, r: usize, width: usize) -> &[f64] {
        &self.old[r * width..(r + 1) * width]
    }
}

/// Negated `(1/K) Σ min(π̃(a|s)/π_b(a|s), ε_ρ) Â - α (1/K) Σ d(π_φ, π̃)` and its
/// gradient in `φ`. The projected distribution in the penalty is held fixed.
pub fn trpl_policy_loss_and_grad(
    net: &PolicyNet,
    batch: &[Transition],
    adv: &[f64],
    bounds: TrustRegionBounds,
    hyper: &PolicyHyper,
) -> Result<PolicyLossOutput> {
    check_batch(batch, adv)?;
    let spec = &net.spec;
    let k = net.action_dim();
    let width = 2 * k;
    let inv_n = 1.0 / batch.len() as f64;
    let mut heads = BatchHeads::compute(net, batch)?;
    let mut upstream = vec![0.0; batch.len() * width];
    let mut loss = 0.0;
    let mut stats = PolicyStats::default();
    let mut projections = Vec::with_capacity(batch.len());

    for (r, (t, &a_hat)) in batch.iter().zip(adv).enumerate() {
        let old = GaussParams::from_head(heads.old_head(r, width))?;
        let head = heads.head(r, width);
        let mask = GaussParams::log_std_unclamped(head);
        let p = GaussParams::from_head(head)?;
        let proj = project(&p, &old, bounds);

        let u = unsquash_stored(&t.a);
        let logp = proj.params.log_prob_pre_squash(&u);
        let (rho, clamped) = truncated_ratio_clamped(logp, t.logp_b, hyper.eps_rho);
        let penalty = trust_region_penalty(&p, &proj);
        loss -= inv_n * (rho * a_hat - hyper.alpha * penalty);

        let (mut g_mu, mut g_ls) = if clamped || a_hat == 0.0 {
            (vec![0.0; k], vec![0.0; k])
        } else {
            let (dm, dl) = log_prob_grad(&proj.params, &u);
            let w = -inv_n * rho * a_hat;
            let up_mu: Vec<f64> = dm.iter().map(|x| w * x).collect();
            let up_ls: Vec<f64> = dl.iter().map(|x| w * x).collect();
            project_backward(&p, &old, bounds, &proj, &up_mu, &up_ls)
        };
        if hyper.alpha != 0.0 && !proj.is_identity() {
            let (pm, pl) = trust_region_penalty_grad(&p, &proj);
            let w = inv_n * hyper.alpha;
            for j in 0..k {
                g_mu[j] += w * pm[j];
                g_ls[j] += w * pl[j];
            }
        }
        let up = &mut upstream[r * width..(r + 1) * width];
        up[..k].copy_from_slice(&g_mu);
        for j in 0..k {
            up[k + j] = if mask[j] { g_ls[j] } else { 0.0 };
        }

        stats.mean_d_mean += inv_n * kl_mean_part(&p, &old);
        stats.mean_d_cov += inv_n * kl_cov_part(&p, &old);
        stats.mean_ratio += inv_n * rho;
        stats.frac_clamped += inv_n * f64::from(u8::from(clamped));
        stats.mean_penalty += inv_n * penalty;
        projections.push(proj);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("policy loss"));
    }
    let mut grad = vec![0.0; spec.param_count()];
    spec.backward_batch(
        net.phi.as_slice(),
        &mut heads.tape,
        &upstream,
        Some(&mut grad),
        None,
    )?;
    Ok(PolicyLossOutput {
        loss,
        grad: ParamVector::from_vec(grad).map_err(|_| Error::NonFinite("policy gradient"))?,
        stats,
        projections,
    })
}

/// The TRPL loss evaluated at `phi` with branch decisions, `η` and penalty
/// references taken from `frozen`. This is the map whose exact derivative
/// [`trpl_policy_loss_and_grad`] returns; it exists for gradient checks.
pub fn trpl_policy_loss_frozen(
    net: &PolicyNet,
    phi: &ParamVector,
    batch: &[Transition],
    adv: &[f64],
    bounds: TrustRegionBounds,
    hyper: &PolicyHyper,
    frozen: &[ProjectedGauss],
) -> Result<f64> {
    check_batch(batch, adv)?;
    crate::error::check_dim("frozen projections", batch.len(), frozen.len())?;
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ((t, &a_hat), reference) in batch.iter().zip(adv).zip(frozen) {
        let old = net.old_dist(&t.s)?;
        let p = GaussParams::from_head(&net.spec.forward(phi, &t.s)?)?;
        let projected = project_frozen(&p, &old, bounds, reference);
        let u = unsquash_stored(&t.a);
        let logp = projected.log_prob_pre_squash(&u);
        let (rho, _) = truncated_ratio_clamped(logp, t.logp_b, hyper.eps_rho);
        let penalty = trust_region_penalty(&p, reference);
        loss -= inv_n * (rho * a_hat - hyper.alpha * penalty);
    }
    Ok(loss)
}

/// `-(1/K) Σ min(ρ Â, clip(ρ, 1-ε, 1+ε) Â)` with `ρ = π_φ(a|s)/π_b(a|s)`.
pub fn ppo_clip_loss_and_grad(
    net: &PolicyNet,
    batch: &[Transition],
    adv: &[f64],
    hyper: &PolicyHyper,
) -> Result<PolicyLossOutput> {
    check_batch(batch, adv)?;
    let spec = &net.spec;
    let k = net.action_dim();
    let width = 2 * k;
    let inv_n = 1.0 / batch.len() as f64;
    let (lo, hi) = (1.0 - hyper.clip, 1.0 + hyper.clip);
    let mut heads = BatchHeads::compute(net, batch)?;
    let mut upstream = vec![0.0; batch.len() * width];
    let mut loss = 0.0;
    let mut stats = PolicyStats::default();

    for (r, (t, &a_hat)) in batch.iter().zip(adv).enumerate() {
        let old = GaussParams::from_head(heads.old_head(r, width))?;
        let head = heads.head(r, width);
        let mask = GaussParams::log_std_unclamped(head);
        let p = GaussParams::from_head(head)?;
        let u = unsquash_stored(&t.a);
        let rho = (p.log_prob_pre_squash(&u) - t.logp_b).exp();
        let term = (rho * a_hat).min(rho.clamp(lo, hi) * a_hat);
        loss -= inv_n * term;

        let active = (a_hat > 0.0 && rho <= hi) || (a_hat < 0.0 && rho >= lo);
        if active {
            let (dm, dl) = log_prob_grad(&p, &u);
            let w = -inv_n * rho * a_hat;
            let up = &mut upstream[r * width..(r + 1) * width];
            for j in 0..k {
                up[j] = w * dm[j];
                up[k + j] = if mask[j] { w * dl[j] } else { 0.0 };
            }
        }

        stats.mean_d_mean += inv_n * kl_mean_part(&p, &old);
        stats.mean_d_cov += inv_n * kl_cov_part(&p, &old);
        stats.mean_ratio += inv_n * rho;
        stats.frac_clamped += inv_n * f64::from(u8::from(rho < lo || rho > hi));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("policy loss"));
    }
    let mut grad = vec![0.0; spec.param_count()];
    spec.backward_batch(
        net.phi.as_slice(),
        &mut heads.tape,
        &upstream,
        Some(&mut grad),
        None,
    )?;
    Ok(PolicyLossOutput {
        loss,
        grad: ParamVector::from_vec(grad).map_err(|_| Error::NonFinite("policy gradient"))?,
        stats,
        projections: Vec::new(),
    })
}

/// Value of the clipped surrogate loss at `phi`; used by gradient checks.
pub fn ppo_clip_loss_at(
    net: &PolicyNet,
    phi: &ParamVector,
    batch: &[Transition],
    adv: &[f64],
    hyper: &PolicyHyper,
) -> Result<f64> {
    check_batch(batch, adv)?;
    let inv_n = 1.0 / batch.len() as f64;
    let (lo, hi) = (1.0 - hyper.clip, 1.0 + hyper.clip);
    let mut loss = 0.0;
    for (t, &a_hat) in batch.iter().zip(adv) {
        let p = GaussParams::from_head(&net.spec.forward(phi, &t.s)?)?;
        let rho = (p.log_prob_pre_squash(&unsquash_stored(&t.a)) - t.logp_b).exp();
        loss -= inv_n * (rho * a_hat).min(rho.clamp(lo, hi) * a_hat);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::log_prob_stored;
    use crate::mlp::Activation;

    fn net() -> PolicyNet {
        let spec = MlpSpec::new(2, vec![5], 2, Activation::Tanh, false).unwrap();
        PolicyNet::new(spec, 3).unwrap()
    }

    fn on_policy_batch(net: &PolicyNet) -> Vec<Transition> {
        [[0.2, -0.1], [0.5, 0.3], [-0.4, 0.9]]
            .iter()
            .zip([0.3, -0.6, 0.1])
            .map(|(s, a)| {
                let p = net.dist(s).unwrap();
                Transition {
                    s: s.to_vec(),
                    a: vec![a],
                    r: 0.0,
                    s_next: s.to_vec(),
                    done: false,
                    logp_b: log_prob_stored(&p, &[a]).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn rejects_odd_head() {
        let spec = MlpSpec::new(2, vec![3], 3, Activation::Tanh, false).unwrap();
        assert!(PolicyNet::new(spec, 0).is_err());
    }

    #[test]
    fn initial_std_is_near_one() {
        let n = net();
        let p = n.dist(&[0.3, -0.7]).unwrap();
        assert!(p.log_std()[0].abs() < 0.05);
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(normalize_advantages(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
        let n = normalize_advantages(&[1.0, -1.0]);
        assert!((n[0] - 1.0).abs() < 1e-7 && (n[1] + 1.0).abs() < 1e-7);
        assert_eq!(normalize_advantages(&[5.0]), vec![5.0]);
    }

    #[test]
    fn zero_advantage_on_policy_has_zero_gradient() {
        let n = net();
        let b = on_policy_batch(&n);
        let out = trpl_policy_loss_and_grad(
            &n,
            &b,
            &[0.0; 3],
            TrustRegionBounds::default(),
            &PolicyHyper::default(),
        )
        .unwrap();
        assert!(out.grad.as_slice().iter().all(|&g| g == 0.0));
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn clamped_ratios_kill_surrogate_gradient() {
        let n = net();
        let mut b = on_policy_batch(&n);
        for t in &mut b {
            t.logp_b -= 3.0;
        }
        let out = trpl_policy_loss_and_grad(
            &n,
            &b,
            &[1.0, -2.0, 0.5],
            TrustRegionBounds::default(),
            &PolicyHyper::default(),
        )
        .unwrap();
        assert!(out.grad.as_slice().iter().all(|&g| g == 0.0));
        assert_eq!(out.stats.frac_clamped, 1.0);
    }

    #[test]
    fn ppo_clip_arithmetic() {
        let n = net();
        let b = on_policy_batch(&n);
        let h = PolicyHyper::default();
        let adv = [1.0, -2.0, 0.5];
        let out = ppo_clip_loss_and_grad(&n, &b, &adv, &h).unwrap();
        assert!((out.loss + adv.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        let mut one = vec![b[0].clone()];
        let p = n.dist(&one[0].s).unwrap();
        one[0].logp_b = log_prob_stored(&p, &one[0].a).unwrap() - 2f64.ln();
        let l = ppo_clip_loss_and_grad(&n, &one, &[1.0], &h).unwrap();
        assert!((l.loss + 1.2).abs() < 1e-12);
        one[0].logp_b += 2f64.ln() + 2f64.ln();
        let l = ppo_clip_loss_and_grad(&n, &one, &[-1.0], &h).unwrap();
        assert!((l.loss - 0.8).abs() < 1e-12);
    }

    #[test]
    fn snapshot_copies_and_decouples() {
        let mut n = net();
        n.phi.as_mut_slice()[0] += 0.5;
        n.snapshot_old_policy();
        let s = [0.1, 0.2];
        let (dm, dc) =
            crate::gaussian::kl_decomposed(&n.dist(&s).unwrap(), &n.old_dist(&s).unwrap());
        assert_eq!(dm + dc, 0.0);
        n.phi.as_mut_slice()[0] += 0.5;
        assert_ne!(n.old_phi().as_slice()[0], n.phi.as_slice()[0]);
    }
}
