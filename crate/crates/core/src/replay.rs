//! Fixed-capacity FIFO replay buffer that keeps the behavior log-probability
//! recorded when each action was taken.

use std::collections::VecDeque;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Environment termination. Time-limit truncation is not termination.
    pub done: bool,
    /// `log π_b(a|s)` of the policy that produced `a`.
    pub logp_b: f64,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .s
            .iter()
            .chain(&self.a)
            .chain(&self.s_next)
            .chain([&self.r, &self.logp_b])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidTransition("non-finite field".into()));
        }
        if self.a.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::InvalidTransition("action outside [-1, 1]".into()));
        }
        if self.s.len() != self.s_next.len() {
            return Err(Error::InvalidTransition(format!(
                "state length {} differs from next-state length {}",
                self.s.len(),
                self.s_next.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferConfig {
    pub capacity: usize,
    pub seed: u64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: 500_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if let Some(first) = self.items.front() {
            if first.s.len() != t.s.len() || first.a.len() != t.a.len() {
                return Err(Error::InvalidTransition(
                    "state or action dimension differs from stored transitions".into(),
                ));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform indices, drawn with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() || k == 0 {
            return Err(Error::BufferUnderflow {
                requested: k,
                size: self.items.len(),
            });
        }
        let n = self.items.len();
        Ok((0..k).map(|_| rng.gen_range(0..n)).collect())
    }

    pub fn sample_refs<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self.sample_refs(k, rng)?.into_iter().cloned().collect())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_transitions_jsonl(path, self.items.iter())
    }

    pub fn read_jsonl(path: &Path, capacity: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buffer = Self::new(capacity)?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            buffer.push(serde_json::from_str(&line)?)?;
        }
        Ok(buffer)
    }
}

pub fn write_transitions_jsonl<'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a Transition>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in items {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            s: vec![r, 0.0],
            a: vec![0.5],
            r,
            s_next: vec![r + 1.0, 0.0],
            done: false,
            logp_b: -0.3,
        }
    }

    #[test]
    fn push_grows_until_capacity_then_evicts_oldest() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(tr(1.0)).unwrap();
        assert_eq!(b.len(), 1);
        b.push(tr(2.0)).unwrap();
        b.push(tr(3.0)).unwrap();
        assert_eq!(b.len(), 2);
        let rs: Vec<f64> = b.iter().map(|t| t.r).collect();
        assert_eq!(rs, vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_invalid_transitions() {
        let mut b = ReplayBuffer::new(4).unwrap();
        assert!(b.push(tr(f64::NAN)).is_err());
        let mut t = tr(0.0);
        t.a = vec![1.5];
        assert!(b.push(t).is_err());
        let mut t = tr(0.0);
        t.logp_b = f64::INFINITY;
        assert!(b.push(t).is_err());
        assert!(b.is_empty());
        b.push(tr(0.0)).unwrap();
        let mut t = tr(0.0);
        t.a = vec![0.1, 0.2];
        assert!(b.push(t).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn single_element_sampled_with_replacement() {
        let mut b = ReplayBuffer::new(8).unwrap();
        b.push(tr(4.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = b.sample_batch(3, &mut rng).unwrap();
        assert_eq!(batch, vec![tr(4.0), tr(4.0), tr(4.0)]);
    }

    #[test]
    fn empty_buffer_underflows() {
        let b = ReplayBuffer::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            b.sample_batch(1, &mut rng),
            Err(Error::BufferUnderflow { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..50 {
            b.push(tr(i as f64)).unwrap();
        }
        let x = b
            .sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let y = b
            .sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sampling_frequencies_are_uniform() {
        let n = 10;
        let mut b = ReplayBuffer::new(n).unwrap();
        for i in 0..n {
            b.push(tr(i as f64)).unwrap();
        }
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for i in b
            .sample_indices(draws, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap()
        {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 4.0 * sigma, "{c}");
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.jsonl");
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..3 {
            b.push(tr(i as f64 * 0.1)).unwrap();
        }
        b.write_jsonl(&path).unwrap();
        let c = ReplayBuffer::read_jsonl(&path, 5).unwrap();
        assert_eq!(b, c);
    }
}
