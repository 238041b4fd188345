//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use selftune::keystore::KeyStore;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `-mean_{i in pos} log(exp(s_i) / sum_j exp(s_j))`, summed without any
/// shifting. Logits stay small enough in the tests for that to be exact.
pub fn brute_group_contrast(q: &[f64], pos: &[Vec<f64>], neg: &[Vec<f64>], tau: f64) -> f64 {
    let mut denom = 0.0;
    for k in pos.iter().chain(neg) {
        denom += (dot(q, k) / tau).exp();
    }
    let mut total = 0.0;
    for k in pos {
        total += -((dot(q, k) / tau).exp() / denom).ln();
    }
    total / pos.len() as f64
}

/// Plain softmax over `logits` without shifting.
pub fn brute_softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn brute_ce_logits(z: &[f64], y: usize) -> f64 {
    -brute_softmax(z)[y].ln()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A random contrast instance: `d + 1` positives, `d * (c - 1)` negatives.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub q: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    pub tau: f64,
}

impl RandomInstance {
    pub fn draw(rng: &mut ChaCha8Rng, dim: usize, d: usize, c: usize, tau: f64) -> Self {
        Self {
            q: gaussian(rng, dim),
            pos: (0..=d).map(|_| gaussian(rng, dim)).collect(),
            neg: (0..d * (c - 1)).map(|_| gaussian(rng, dim)).collect(),
            tau,
        }
    }

    pub fn instance(&self) -> selftune::losses::ContrastInstance<'_> {
        selftune::losses::ContrastInstance::new(
            &self.q,
            self.pos.iter().map(Vec::as_slice).collect(),
            self.neg.iter().map(Vec::as_slice).collect(),
            self.tau,
        )
        .unwrap()
    }

    /// All parameters flattened as `[q, pos..., neg...]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        for k in self.pos.iter().chain(&self.neg) {
            v.extend_from_slice(k);
        }
        v
    }

    pub fn unflat(&self, v: &[f64]) -> Self {
        let dim = self.q.len();
        let mut chunks = v.chunks(dim).map(<[f64]>::to_vec);
        let q = chunks.next().unwrap();
        let pos = chunks.by_ref().take(self.pos.len()).collect();
        let neg = chunks.collect();
        Self {
            q,
            pos,
            neg,
            tau: self.tau,
        }
    }

    pub fn oracle(&self) -> f64 {
        brute_group_contrast(&self.q, &self.pos, &self.neg, self.tau)
    }
}

/// A unit key with `q . k = s` exactly up to rounding, for unit `q`.
pub fn key_with_dot(rng: &mut ChaCha8Rng, q: &[f64], s: f64) -> Vec<f64> {
    let mut u = gaussian(rng, q.len());
    let proj = dot(&u, q);
    for (ui, qi) in u.iter_mut().zip(q) {
        *ui -= proj * qi;
    }
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = (1.0 - s * s).max(0.0).sqrt();
    q.iter()
        .zip(&u)
        .map(|(qi, ui)| s * qi + r * ui / n)
        .collect()
}

/// Positive group with a true subset of dots `>= m1` and corrupted keys of
/// dots `<= m2`, where `(m1 - m2) / tau >= ln(D + 1)`.
#[derive(Debug, Clone)]
pub struct CorruptedGroup {
    pub q: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    pub is_true: Vec<bool>,
    pub tau: f64,
    pub margin: f64,
}

impl CorruptedGroup {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let dim = rng.gen_range(4..=16);
        let d = rng.gen_range(1..=8usize);
        let c = rng.gen_range(2..=6usize);
        let tau = [0.05, 0.07, 0.1, 0.2, 0.5][rng.gen_range(0..5)];
        let q = unit(rng, dim);
        let need = tau * ((d + 1) as f64).ln();
        // m1 - m2 >= need, both inside [-1, 1]
        // need <= 0.5 * ln 9 < 2, so the margin always fits
        let gap = rng.gen_range(need..=(2.0 * need).min(2.0));
        let m2 = rng.gen_range(-1.0..=(1.0 - gap));
        let m1 = m2 + gap;
        let n_true = rng.gen_range(1..=d + 1);
        let mut is_true = vec![false; d + 1];
        for t in is_true.iter_mut().take(n_true) {
            *t = true;
        }
        // the own key is always in the group; shuffle where the truths sit
        for i in (1..is_true.len()).rev() {
            let j = rng.gen_range(0..=i);
            is_true.swap(i, j);
        }
        let pos = is_true
            .iter()
            .map(|&t| {
                let s = if t {
                    rng.gen_range(m1..=1.0)
                } else {
                    rng.gen_range(-1.0..=m2)
                };
                key_with_dot(rng, &q, s)
            })
            .collect();
        let neg = (0..d * (c - 1)).map(|_| unit(rng, dim)).collect();
        Self {
            q,
            pos,
            neg,
            is_true,
            tau,
            margin: gap / tau,
        }
    }

    pub fn dots(&self) -> Vec<f64> {
        self.pos.iter().map(|k| dot(&self.q, k)).collect()
    }

    /// Softmax mass of the true and corrupted positives, brute force.
    pub fn masses(&self) -> (f64, f64) {
        let logits: Vec<f64> = self
            .pos
            .iter()
            .chain(&self.neg)
            .map(|k| dot(&self.q, k) / self.tau)
            .collect();
        let p = brute_softmax(&logits);
        let (mut t, mut f) = (0.0, 0.0);
        for (i, &is_t) in self.is_true.iter().enumerate() {
            if is_t {
                t += p[i];
            } else {
                f += p[i];
            }
        }
        (t, f)
    }
}

/// Reference store: one bounded deque per category.
pub struct DequeOracle {
    pub queues: Vec<VecDeque<Vec<f64>>>,
    pub capacity: usize,
}

impl DequeOracle {
    /// Starts from the store's current contents, oldest first.
    pub fn mirror(store: &KeyStore) -> Self {
        let queues = (0..store.num_categories())
            .map(|c| {
                store
                    .category_keys(c)
                    .unwrap()
                    .iter()
                    .map(|k| k.to_vec())
                    .collect()
            })
            .collect();
        Self {
            queues,
            capacity: store.keys_per_category(),
        }
    }

    pub fn push(&mut self, c: usize, key: Vec<f64>) {
        let q = &mut self.queues[c];
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(key);
    }
}
