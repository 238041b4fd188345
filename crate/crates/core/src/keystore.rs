//! Class-partitioned FIFO queues of key embeddings.
//!
//! A [`KeyStore`] holds `D` keys for each of `C` categories. Keys produced from
//! labeled data are routed by their label and keys from unlabeled data by their
//! pseudo-label; both streams share one store. Within a category the oldest key
//! is overwritten first.
//!
//! [`KeyQueue`] is the class-agnostic variant used by the instance-contrast
//! baseline: a single FIFO of `D * C` keys, so both baselines hold the same
//! number of keys.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Norm below which a key cannot be normalized.
const MIN_NORM: f64 = 1e-12;

/// Fixed-capacity ring of equal-length vectors; overwrites the oldest entry.
#[derive(Debug, Clone, PartialEq)]
struct Ring {
    data: Vec<f64>,
    dim: usize,
    capacity: usize,
    cursor: usize,
}

impl Ring {
    fn slot(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, key: &[f64]) {
        let start = self.cursor * self.dim;
        self.data[start..start + self.dim].copy_from_slice(key);
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Slots ordered oldest first, newest last.
    fn iter_fifo(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.capacity).map(move |i| self.slot((self.cursor + i) % self.capacity))
    }
}

fn seeded_unit_vectors(count: usize, dim: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            if l2_norm(&v) > MIN_NORM {
                break v;
            }
        };
        let n = l2_norm(&v);
        data.extend(v.iter().map(|x| x / n));
    }
    data
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn prepare_key(key: &[f64], dim: usize, normalize: bool) -> Result<Vec<f64>> {
    if key.len() != dim {
        return Err(Error::Shape(format!(
            "key has dimension {}, store expects {dim}",
            key.len()
        )));
    }
    if key.iter().any(|x| !x.is_finite()) {
        return invalid("key contains non-finite entries");
    }
    if !normalize {
        return Ok(key.to_vec());
    }
    let n = l2_norm(key);
    if n <= MIN_NORM {
        return invalid("zero-norm key cannot be normalized");
    }
    Ok(key.iter().map(|x| x / n).collect())
}

/// The shared queue list: `C` categories of `D` keys, each of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyStore {
    rings: Vec<Ring>,
    key_dim: usize,
    normalize_keys: bool,
    enqueued: u64,
}

impl KeyStore {
    /// Builds a store filled with seeded random unit vectors, all cursors at 0.
    pub fn new(
        num_categories: usize,
        keys_per_category: usize,
        key_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_categories < 2 {
            return invalid(format!("num_categories must be >= 2, got {num_categories}"));
        }
        if keys_per_category == 0 || key_dim == 0 {
            return invalid("keys_per_category and key_dim must be positive");
        }
        let mut rng = rng::stream(seed, &[rng::tag::STORE_INIT]);
        let rings = (0..num_categories)
            .map(|_| Ring {
                data: seeded_unit_vectors(keys_per_category, key_dim, &mut rng),
                dim: key_dim,
                capacity: keys_per_category,
                cursor: 0,
            })
            .collect();
        Ok(Self {
            rings,
            key_dim,
            normalize_keys: true,
            enqueued: 0,
        })
    }

    /// Disables or enables L2 normalization of incoming keys (on by default).
    pub fn with_normalize_keys(mut self, normalize: bool) -> Self {
        self.normalize_keys = normalize;
        self
    }

    pub fn num_categories(&self) -> usize {
        self.rings.len()
    }

    pub fn keys_per_category(&self) -> usize {
        self.rings[0].capacity
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn capacity(&self) -> usize {
        self.num_categories() * self.keys_per_category()
    }

    pub fn normalize_keys(&self) -> bool {
        self.normalize_keys
    }

    /// Total number of successful enqueues since construction.
    pub fn enqueue_count(&self) -> u64 {
        self.enqueued
    }

    pub fn cursor(&self, category: usize) -> Result<usize> {
        self.check_category(category)?;
        Ok(self.rings[category].cursor)
    }

    fn check_category(&self, category: usize) -> Result<()> {
        if category >= self.num_categories() {
            return invalid(format!(
                "category {category} out of range for {} categories",
                self.num_categories()
            ));
        }
        Ok(())
    }

    /// Writes `key` (normalized when enabled) over the oldest slot of `category`.
    pub fn enqueue(&mut self, category: usize, key: &[f64]) -> Result<()> {
        self.check_category(category)?;
        let key = prepare_key(key, self.key_dim, self.normalize_keys)?;
        self.rings[category].push(&key);
        self.enqueued += 1;
        Ok(())
    }

    /// Borrowed view of a category's keys, oldest first.
    pub fn category_keys(&self, category: usize) -> Result<Vec<&[f64]>> {
        self.check_category(category)?;
        Ok(self.rings[category].iter_fifo().collect())
    }

    /// Borrowed view of every key outside `category`, in category order.
    pub fn other_keys(&self, category: usize) -> Result<Vec<&[f64]>> {
        self.check_category(category)?;
        Ok(self
            .rings
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != category)
            .flat_map(|(_, r)| r.iter_fifo())
            .collect())
    }

    /// Copies of the `D` keys of `category`, newest last.
    pub fn positives(&self, category: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .category_keys(category)?
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Copies of the `D * (C - 1)` keys belonging to every other category.
    pub fn negatives(&self, category: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .other_keys(category)?
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// All stored keys, category-major, each category oldest first.
    pub fn all_keys(&self) -> Vec<Vec<f64>> {
        self.rings
            .iter()
            .flat_map(|r| r.iter_fifo().map(<[f64]>::to_vec))
            .collect()
    }

    /// Serializes to the flat checkpoint blob: `C, D, L` as little-endian
    /// `u32`, then `C * D * L` `f32` values in category-major, slot-major
    /// order, then `C` cursors as `u32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, d, l) = (
            self.num_categories(),
            self.keys_per_category(),
            self.key_dim,
        );
        let mut out = Vec::with_capacity(12 + 4 * (c * d * l + c));
        for v in [c, d, l] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for ring in &self.rings {
            for x in &ring.data {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        for ring in &self.rings {
            out.extend_from_slice(&(ring.cursor as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 4]> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| [b[0], b[1], b[2], b[3]])
                .ok_or_else(|| Error::Format("key store blob is truncated".into()))
        };
        let c = u32::from_le_bytes(word(0)?) as usize;
        let d = u32::from_le_bytes(word(1)?) as usize;
        let l = u32::from_le_bytes(word(2)?) as usize;
        if c < 2 || d == 0 || l == 0 {
            return Err(Error::Format(format!(
                "invalid store header ({c}, {d}, {l})"
            )));
        }
        let expected = 4 * (3 + c * d * l + c);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "key store blob has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut rings = Vec::with_capacity(c);
        for cat in 0..c {
            let base = 3 + cat * d * l;
            let data = (0..d * l)
                .map(|i| word(base + i).map(|w| f32::from_le_bytes(w) as f64))
                .collect::<Result<Vec<_>>>()?;
            let cursor = u32::from_le_bytes(word(3 + c * d * l + cat)?) as usize;
            if cursor >= d {
                return Err(Error::Format(format!(
                    "cursor {cursor} out of range for D={d}"
                )));
            }
            rings.push(Ring {
                data,
                dim: l,
                capacity: d,
                cursor,
            });
        }
        Ok(Self {
            rings,
            key_dim: l,
            normalize_keys: true,
            enqueued: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A single class-agnostic FIFO of keys.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue {
    ring: Ring,
    normalize_keys: bool,
    enqueued: u64,
}

impl KeyQueue {
    pub fn new(capacity: usize, key_dim: usize, seed: u64) -> Result<Self> {
        if capacity == 0 || key_dim == 0 {
            return invalid("queue capacity and key_dim must be positive");
        }
        let mut rng = rng::stream(seed, &[rng::tag::STORE_INIT]);
        Ok(Self {
            ring: Ring {
                data: seeded_unit_vectors(capacity, key_dim, &mut rng),
                dim: key_dim,
                capacity,
                cursor: 0,
            },
            normalize_keys: true,
            enqueued: 0,
        })
    }

    pub fn with_normalize_keys(mut self, normalize: bool) -> Self {
        self.normalize_keys = normalize;
        self
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity
    }

    pub fn key_dim(&self) -> usize {
        self.ring.dim
    }

    pub fn enqueue_count(&self) -> u64 {
        self.enqueued
    }

    pub fn enqueue(&mut self, key: &[f64]) -> Result<()> {
        let key = prepare_key(key, self.ring.dim, self.normalize_keys)?;
        self.ring.push(&key);
        self.enqueued += 1;
        Ok(())
    }

    /// Borrowed keys, oldest first.
    pub fn keys(&self) -> Vec<&[f64]> {
        self.ring.iter_fifo().collect()
    }
}
