//! Classification and contrastive losses.
//!
//! All functions are pure. Contrastive losses take dot-product logits scaled by
//! a temperature and are evaluated with max-subtracted log-sum-exp, since unit
//! vectors at `tau = 0.07` already produce logits near 14.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::keystore::KeyStore;

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_EPS: f64 = 1e-12;

const PROB_SUM_TOL: f64 = 1e-6;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A per-example categorical prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("probability vector is empty");
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("probabilities must be finite and non-negative");
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return invalid(format!("probabilities sum to {sum}, expected 1"));
        }
        Ok(Self(values))
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return invalid("logits must be non-empty and finite");
        }
        Ok(Self(softmax(logits)))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_categories(&self) -> usize {
        self.0.len()
    }
}

fn check_label(label: usize, num_categories: usize) -> Result<()> {
    if label >= num_categories {
        return invalid(format!(
            "label {label} out of range for {num_categories} categories"
        ));
    }
    Ok(())
}

/// `-ln p[label]`, with the probability floored at [`PROB_EPS`].
pub fn cross_entropy(prob: &ProbVector, label: usize) -> Result<f64> {
    check_label(label, prob.num_categories())?;
    Ok(-prob.0[label].max(PROB_EPS).ln())
}

/// Cross-entropy and its gradient with respect to the probability vector.
pub fn cross_entropy_prob_grad(prob: &ProbVector, label: usize) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy(prob, label)?;
    let mut grad = vec![0.0; prob.num_categories()];
    let p = prob.0[label];
    if p > PROB_EPS {
        grad[label] = -1.0 / p;
    }
    Ok((loss, grad))
}

/// Cross-entropy on raw logits and its gradient `softmax - onehot`.
pub fn cross_entropy_with_logits(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_label(label, logits.len())?;
    let lse = log_sum_exp(logits);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Outcome of the thresholded self-training loss on one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoCe {
    pub loss: f64,
    pub category: usize,
    pub confidence: f64,
    /// Whether `confidence > threshold`; failing examples contribute no loss.
    pub passed: bool,
}

/// Self-training loss: `-ln z` when the top probability `z` strictly exceeds
/// `threshold`, else 0.
pub fn pseudo_ce(prob: &ProbVector, threshold: f64) -> Result<PseudoCe> {
    if !(0.0..=1.0).contains(&threshold) {
        return invalid(format!("threshold {threshold} outside [0, 1]"));
    }
    let category = argmax(&prob.0);
    let confidence = prob.0[category];
    let passed = confidence > threshold;
    let loss = if passed {
        -confidence.max(PROB_EPS).ln()
    } else {
        0.0
    };
    Ok(PseudoCe {
        loss,
        category,
        confidence,
        passed,
    })
}

/// One query contrasted against a positive group and a negative set.
///
/// For the group loss the positive group is the query's own key followed by
/// the `D` queued keys of its (pseudo-)category, and the negative set is the
/// `D * (C - 1)` keys of every other category.
#[derive(Debug, Clone)]
pub struct ContrastInstance<'a> {
    pub query: &'a [f64],
    pub positive_group: Vec<&'a [f64]>,
    pub negative_set: Vec<&'a [f64]>,
    pub temperature: f64,
}

impl<'a> ContrastInstance<'a> {
    pub fn new(
        query: &'a [f64],
        positive_group: Vec<&'a [f64]>,
        negative_set: Vec<&'a [f64]>,
        temperature: f64,
    ) -> Result<Self> {
        let inst = Self {
            query,
            positive_group,
            negative_set,
            temperature,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Positive group `[own_key, queue keys of category]`, negatives from all
    /// other categories of `store`.
    pub fn from_store(
        query: &'a [f64],
        own_key: &'a [f64],
        store: &'a KeyStore,
        category: usize,
        temperature: f64,
    ) -> Result<Self> {
        let mut positive_group = Vec::with_capacity(store.keys_per_category() + 1);
        positive_group.push(own_key);
        positive_group.extend(store.category_keys(category)?);
        Self::new(
            query,
            positive_group,
            store.other_keys(category)?,
            temperature,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.positive_group.is_empty() {
            return invalid("positive group is empty");
        }
        if self.negative_set.is_empty() {
            return invalid("negative set is empty; contrast is degenerate");
        }
        let dim = self.query.len();
        if dim == 0 {
            return invalid("query is empty");
        }
        for k in self.positive_group.iter().chain(&self.negative_set) {
            if k.len() != dim {
                return Err(Error::Shape(format!(
                    "key has dimension {}, query has {dim}",
                    k.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks the group sizes `D + 1` and `D * (C - 1)`.
    pub fn check_group_sizes(&self, num_categories: usize) -> Result<()> {
        let d = self.positive_group.len() - 1;
        let expected = d * num_categories.saturating_sub(1);
        if self.negative_set.len() != expected {
            return Err(Error::Shape(format!(
                "negative set has {} keys, expected D*(C-1) = {expected}",
                self.negative_set.len()
            )));
        }
        Ok(())
    }

    fn keys(&self) -> impl Iterator<Item = &&'a [f64]> {
        self.positive_group.iter().chain(&self.negative_set)
    }

    /// Temperature-scaled logits, positives first.
    pub fn logits(&self) -> Vec<f64> {
        self.keys()
            .map(|k| dot(self.query, k) / self.temperature)
            .collect()
    }

    /// Softmax over every logit, positives first.
    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.logits())
    }
}

/// Loss value with gradients with respect to the query and every key.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastGrad {
    pub loss: f64,
    pub query: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Returns the loss and `dL/dlogit` for every logit.
///
/// The loss is `lse(all) - mean(positive logits)`, which equals the average of
/// `-log softmax` over the positive group since the denominator is shared.
fn contrast_kernel(inst: &ContrastInstance<'_>) -> (f64, Vec<f64>) {
    let logits = inst.logits();
    let p = inst.positive_group.len();
    let lse = log_sum_exp(&logits);
    let mean_pos = logits[..p].iter().sum::<f64>() / p as f64;
    let mut coef = softmax(&logits);
    for c in &mut coef[..p] {
        *c -= 1.0 / p as f64;
    }
    (lse - mean_pos, coef)
}

fn query_grad(inst: &ContrastInstance<'_>, coef: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; inst.query.len()];
    for (c, k) in coef.iter().zip(inst.keys()) {
        let w = c / inst.temperature;
        for (gi, ki) in g.iter_mut().zip(k.iter()) {
            *gi += w * ki;
        }
    }
    g
}

/// Instance-contrast loss with one positive key.
pub fn info_nce(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> Result<f64> {
    pgc(&ContrastInstance::new(
        query,
        vec![positive],
        negatives.to_vec(),
        temperature,
    )?)
}

pub fn info_nce_with_grad(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> Result<ContrastGrad> {
    pgc_with_grad(&ContrastInstance::new(
        query,
        vec![positive],
        negatives.to_vec(),
        temperature,
    )?)
}

/// Group contrast loss: the mean of `-log softmax` over the positive group,
/// with the softmax taken over positives and negatives together.
pub fn pgc(inst: &ContrastInstance<'_>) -> Result<f64> {
    inst.validate()?;
    Ok(contrast_kernel(inst).0)
}

/// The labeled-data form of [`pgc`]; the positive category came from the
/// ground-truth label instead of a pseudo-label, the formula is the same.
pub fn pgc_labeled(inst: &ContrastInstance<'_>) -> Result<f64> {
    pgc(inst)
}

/// Loss and gradient with respect to the query only.
pub fn pgc_query_grad(inst: &ContrastInstance<'_>) -> Result<(f64, Vec<f64>)> {
    inst.validate()?;
    let (loss, coef) = contrast_kernel(inst);
    Ok((loss, query_grad(inst, &coef)))
}

pub fn pgc_with_grad(inst: &ContrastInstance<'_>) -> Result<ContrastGrad> {
    inst.validate()?;
    let (loss, coef) = contrast_kernel(inst);
    let p = inst.positive_group.len();
    let key_grad = |c: f64| -> Vec<f64> {
        inst.query
            .iter()
            .map(|q| c * q / inst.temperature)
            .collect()
    };
    Ok(ContrastGrad {
        loss,
        query: query_grad(inst, &coef),
        positives: coef[..p].iter().map(|&c| key_grad(c)).collect(),
        negatives: coef[p..].iter().map(|&c| key_grad(c)).collect(),
    })
}

/// Which group-contrast terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pgc_labeled: bool,
    pub pgc_unlabeled: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            pgc_labeled: true,
            pgc_unlabeled: true,
        }
    }
}

/// Unit-weight sum of the enabled terms.
pub fn total_objective(ce: f64, pgc_l: f64, pgc_u: f64, terms: LossTerms) -> f64 {
    let mut total = ce;
    if terms.pgc_labeled {
        total += pgc_l;
    }
    if terms.pgc_unlabeled {
        total += pgc_u;
    }
    total
}

/// Per-step loss values.
///
/// For baseline methods `pgc_labeled` and `pgc_unlabeled` carry the method's
/// own labeled and unlabeled auxiliary terms (instance contrast, thresholded
/// self-training), so `total` stays the sum of the three columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub pgc_labeled: f64,
    pub pgc_unlabeled: f64,
    pub total: f64,
    /// Fraction of the unlabeled batch that contributed a pseudo-labeled term.
    pub pseudo_coverage: f64,
}
