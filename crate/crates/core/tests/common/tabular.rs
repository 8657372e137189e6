//! A 4-state, 3-action MDP with every expectation enumerated exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlearn::critic::{truncated_ratio, wis_term};

pub const S: usize = 4;
pub const A: usize = 3;
pub const GAMMA: f64 = 0.9;

pub struct Mdp {
    pub d: [f64; S],
    pub p: [[[f64; S]; A]; S],
    pub r: [[f64; A]; S],
    pub pi: [[f64; A]; S],
    pub pi_b: [[f64; A]; S],
    /// Frozen target critic.
    pub v_target: [f64; S],
}

fn simplex<const N: usize>(rng: &mut ChaCha8Rng) -> [f64; N] {
    let mut x = [0.0; N];
    for v in &mut x {
        *v = rng.gen_range(0.05..1.0);
    }
    let total: f64 = x.iter().sum();
    x.map(|v| v / total)
}

impl Mdp {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mdp {
            d: simplex(&mut rng),
            p: [[[0.0; S]; A]; S],
            r: [[0.0; A]; S],
            pi: [[0.0; A]; S],
            pi_b: [[0.0; A]; S],
            v_target: [0.0; S],
        };
        for s in 0..S {
            for a in 0..A {
                m.p[s][a] = simplex(&mut rng);
                m.r[s][a] = rng.gen_range(-1.0..1.0);
            }
            m.pi[s] = simplex(&mut rng);
            m.pi_b[s] = simplex(&mut rng);
            m.v_target[s] = rng.gen_range(-5.0..5.0);
        }
        m
    }

    fn bellman_target(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.r[s][a] + GAMMA * self.v_target[s2]
    }

    fn rho(&self, s: usize, a: usize) -> f64 {
        truncated_ratio(self.pi[s][a].ln(), self.pi_b[s][a].ln(), 1e9)
    }

    /// Behavior-sampled importance-weighted loss, enumerated over `(s, a, s')`
    /// with the library's per-sample term. Returns the loss and its gradient.
    pub fn wis_loss(&self, v: &[f64; S]) -> (f64, [f64; S]) {
        let mut loss = 0.0;
        let mut grad = [0.0; S];
        for s in 0..S {
            for a in 0..A {
                for s2 in 0..S {
                    let w = self.d[s] * self.pi_b[s][a] * self.p[s][a][s2];
                    let (l, dl) = wis_term(v[s], self.bellman_target(s, a, s2), self.rho(s, a));
                    loss += w * l;
                    grad[s] += w * dl;
                }
            }
        }
        (loss, grad)
    }

    /// `E_s[(V(s) - E_{a~π, s'}[r + γ V̄(s')])²]`, the loss whose expectation is
    /// taken inside the square.
    pub fn base_exact_loss(&self, v: &[f64; S]) -> (f64, [f64; S]) {
        let mut loss = 0.0;
        let mut grad = [0.0; S];
        for s in 0..S {
            let mut target = 0.0;
            for a in 0..A {
                for s2 in 0..S {
                    target += self.pi[s][a] * self.p[s][a][s2] * self.bellman_target(s, a, s2);
                }
            }
            let e = v[s] - target;
            loss += self.d[s] * e * e;
            grad[s] += 2.0 * self.d[s] * e;
        }
        (loss, grad)
    }

    pub fn random_v(rng: &mut ChaCha8Rng) -> [f64; S] {
        let mut v = [0.0; S];
        for x in &mut v {
            *x = rng.gen_range(-10.0..10.0);
        }
        v
    }
}

pub fn gradient_descent(mut v: [f64; S], f: impl Fn(&[f64; S]) -> (f64, [f64; S])) -> [f64; S] {
    let lr = 0.2;
    for _ in 0..200_000 {
        let (_, g) = f(&v);
        let mut step = 0.0f64;
        for s in 0..S {
            v[s] -= lr * g[s];
            step = step.max((lr * g[s]).abs());
        }
        if step < 1e-15 {
            break;
        }
    }
    v
}
