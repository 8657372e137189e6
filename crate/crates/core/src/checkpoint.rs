//! Single-file binary snapshot of a training run.
//!
//! Layout: magic `VLEARNCK`, `u32` format version, then length-prefixed
//! sections in a fixed order, all little-endian, followed by a SHA-256 digest
//! of every preceding byte. The resolved configuration travels as text so a
//! file is self-describing. The replay buffer is included, which makes a
//! resumed run continue exactly where the saved one stopped.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{echo, parse_train_config};
use crate::critic::CriticPair;
use crate::error::{Error, Result};
use crate::mlp::ParamVector;
use crate::optim::Adam;
use crate::policy::PolicyNet;
use crate::replay::Transition;
use crate::trainer::{MetricWindow, Trainer};

pub const MAGIC: &[u8; 8] = b"VLEARNCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for &x in xs {
            self.f64(x);
        }
    }

    fn params(&mut self, hash: u64, p: &ParamVector) {
        p.write_le(hash, &mut self.buf);
    }

    fn adam(&mut self, hash: u64, opt: &Adam) {
        self.u64(opt.t);
        self.params(hash, &ParamVector::from_raw(opt.m.clone()));
        self.params(hash, &ParamVector::from_raw(opt.v.clone()));
    }

    fn rng(&mut self, rng: &ChaCha8Rng) {
        self.buf.extend_from_slice(&rng.get_seed());
        self.u64(rng.get_stream());
        self.u128(rng.get_word_pos());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n} for {what}")))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.len(what)?;
        self.take(n, what)
    }

    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.len(what)?;
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn params(&mut self, hash: u64) -> Result<ParamVector> {
        let (p, used) = ParamVector::read_le(&self.bytes[self.pos..], hash)?;
        self.pos += used;
        Ok(p)
    }

    fn adam(&mut self, hash: u64, len: usize, lr: f64) -> Result<Adam> {
        let mut opt = Adam::new(len, lr);
        opt.t = self.u64("optimizer step")?;
        let m = self.params(hash)?.into_vec();
        let v = self.params(hash)?.into_vec();
        if m.len() != len || v.len() != len {
            return Err(Error::Checkpoint("optimizer state length mismatch".into()));
        }
        opt.m = m;
        opt.v = v;
        Ok(opt)
    }

    fn rng(&mut self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self.array("rng seed")?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.u64("rng stream")?);
        rng.set_word_pos(self.u128("rng position")?);
        Ok(rng)
    }
}

pub fn to_bytes(tr: &Trainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.bytes(echo(&tr.cfg).as_bytes());

    let p_hash = tr.policy.spec().hash();
    let c_hash = tr.critics.spec().hash();
    w.params(p_hash, &tr.policy.phi);
    w.params(p_hash, tr.policy.old_phi());
    w.u8(tr.critics.len() as u8);
    for i in 0..tr.critics.len() {
        w.params(c_hash, tr.critics.online(i));
        w.params(c_hash, tr.critics.target(i));
    }
    w.adam(p_hash, &tr.policy_opt);
    for opt in &tr.critic_opts {
        w.adam(c_hash, opt);
    }

    w.rng(&tr.env_rng);
    w.rng(&tr.act_rng);
    w.rng(&tr.buf_rng);

    for c in [
        tr.step,
        tr.critic_updates,
        tr.policy_updates,
        tr.polyak_updates,
        tr.old_refreshes,
        tr.episodes_completed,
    ] {
        w.u64(c);
    }
    w.f64(tr.episode_return);

    w.f64s(tr.env.state());
    w.u64(tr.env.elapsed() as u64);
    w.u64(tr.env.clamped_actions());

    let win = &tr.window;
    w.u64(win.critic_count);
    w.u64(win.policy_count);
    for v in [
        win.critic_loss,
        win.policy_loss,
        win.d_mean,
        win.d_cov,
        win.ratio,
        win.clamped,
        win.ess,
    ] {
        w.f64(v);
    }

    w.u64(tr.buffer.len() as u64);
    for t in tr.buffer.iter() {
        w.f64s(&t.s);
        w.f64s(&t.a);
        w.f64(t.r);
        w.f64s(&t.s_next);
        w.u8(u8::from(t.done));
        w.f64(t.logp_b);
    }

    let digest = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&digest);
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }

    let mut r = Reader {
        bytes: body,
        pos: 12,
    };
    let text = std::str::from_utf8(r.bytes("config")?)
        .map_err(|_| Error::Checkpoint("config section is not UTF-8".into()))?;
    let cfg = parse_train_config(text)?;
    let mut tr = Trainer::new(cfg)?;

    let p_spec = tr.policy.spec().clone();
    let c_spec = tr.critics.spec().clone();
    let (p_hash, c_hash) = (p_spec.hash(), c_spec.hash());
    let phi = r.params(p_hash)?;
    let old_phi = r.params(p_hash)?;
    tr.policy = PolicyNet::from_parts(p_spec.clone(), phi, old_phi)?;
    let n_critics = r.u8("critic count")? as usize;
    let mut online = Vec::with_capacity(n_critics);
    let mut target = Vec::with_capacity(n_critics);
    for _ in 0..n_critics {
        online.push(r.params(c_hash)?);
        target.push(r.params(c_hash)?);
    }
    if n_critics != tr.critics.len() {
        return Err(Error::Checkpoint(
            "critic count disagrees with config".into(),
        ));
    }
    tr.critics = CriticPair::from_parts(c_spec.clone(), online, target)?;
    tr.policy_opt = r.adam(p_hash, p_spec.param_count(), tr.cfg.policy_lr)?;
    for i in 0..n_critics {
        tr.critic_opts[i] = r.adam(c_hash, c_spec.param_count(), tr.cfg.critic_lr)?;
    }

    tr.env_rng = r.rng()?;
    tr.act_rng = r.rng()?;
    tr.buf_rng = r.rng()?;

    tr.step = r.u64("counters")?;
    tr.critic_updates = r.u64("counters")?;
    tr.policy_updates = r.u64("counters")?;
    tr.polyak_updates = r.u64("counters")?;
    tr.old_refreshes = r.u64("counters")?;
    tr.episodes_completed = r.u64("counters")?;
    tr.episode_return = r.f64("episode return")?;

    let state = r.f64s("environment state")?;
    let t = r.u64("environment time")? as usize;
    let clamped = r.u64("environment clamp counter")?;
    tr.env.restore(state, t, clamped)?;

    let critic_count = r.u64("metric window")?;
    let policy_count = r.u64("metric window")?;
    let mut vals = [0.0; 7];
    for v in &mut vals {
        *v = r.f64("metric window")?;
    }
    tr.window = MetricWindow {
        critic_loss: vals[0],
        critic_count,
        policy_loss: vals[1],
        d_mean: vals[2],
        d_cov: vals[3],
        policy_count,
        ratio: vals[4],
        clamped: vals[5],
        ess: vals[6],
    };

    let n = r.len("buffer length")?;
    for _ in 0..n {
        let s = r.f64s("transition")?;
        let a = r.f64s("transition")?;
        let reward = r.f64("transition")?;
        let s_next = r.f64s("transition")?;
        let done = match r.u8("transition")? {
            0 => false,
            1 => true,
            other => return Err(Error::Checkpoint(format!("invalid done flag {other}"))),
        };
        let logp_b = r.f64("transition")?;
        tr.buffer.push(Transition {
            s,
            a,
            r: reward,
            s_next,
            done,
            logp_b,
        })?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(tr)
}

pub fn save(tr: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(tr)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
