//! Training loops: the unified labeled/unlabeled objective, its baselines and
//! the ablation and sensitivity harnesses.
//!
//! One step of the unified method:
//!
//! 1. labeled queries get cross-entropy on their logits plus group contrast
//!    with the ground-truth class as the positive group;
//! 2. unlabeled queries get group contrast with the classifier's current
//!    prediction as the positive group, with no confidence threshold;
//! 3. one SGD step on the unit-weight sum;
//! 4. every key from both batches is written into the store under its label
//!    or pseudo-label, using keys computed before the step.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datagen::{two_views, AugmentKind, AugmentationPolicy, Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::keystore::{KeyQueue, KeyStore};
use crate::losses::{
    cross_entropy_with_logits, pgc_query_grad, pseudo_ce, total_objective, ContrastInstance,
    LossReport, LossTerms, ProbVector,
};
use crate::model::{Gradients, LoadScope, ModelBundle, ModelConfig, PseudoLabel, QueryPass};
use crate::optim::Sgd;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-entropy plus group contrast on labeled and unlabeled data.
    SelfTuning,
    /// Cross-entropy plus thresholded pseudo-label cross-entropy.
    PseudoLabelCe,
    /// Cross-entropy plus single-positive instance contrast.
    ContrastiveCl,
    /// Cross-entropy on labeled data only.
    FineTuneOnly,
}

impl Method {
    pub fn uses_unlabeled(self) -> bool {
        !matches!(self, Method::FineTuneOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Method::SelfTuning => "self_tuning",
            Method::PseudoLabelCe => "pseudo_label_ce",
            Method::ContrastiveCl => "contrastive_cl",
            Method::FineTuneOnly => "fine_tune_only",
        })
    }
}

/// Augmentation for one of the two views; its seed comes from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub kind: AugmentKind,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub temperature: f64,
    pub keys_per_category: usize,
    pub projector_dim: usize,
    pub projector_hidden: usize,
    pub encoder_widths: Vec<usize>,
    pub base_lr: f64,
    pub classifier_lr_multiplier: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// Key-encoder momentum; `None` shares the query encoder's parameters.
    pub key_momentum: Option<f64>,
    pub labeled_batch_size: usize,
    pub unlabeled_batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub disable_pgc_labeled: bool,
    pub disable_pgc_unlabeled: bool,
    pub separate_queues: bool,
    /// Confidence threshold of the pseudo-label baseline; unused otherwise.
    pub threshold: f64,
    pub normalize_keys: bool,
    pub freeze_encoder: bool,
    /// Query / pseudo-label view.
    pub weak_view: ViewSpec,
    /// Key view.
    pub strong_view: ViewSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::SelfTuning,
            temperature: 0.07,
            keys_per_category: 32,
            projector_dim: 64,
            projector_hidden: 64,
            encoder_widths: vec![64, 64],
            base_lr: 0.001,
            classifier_lr_multiplier: 10.0,
            sgd_momentum: 0.9,
            weight_decay: 0.0,
            key_momentum: Some(0.999),
            labeled_batch_size: 32,
            unlabeled_batch_size: 32,
            epochs: 50,
            seed: 0,
            disable_pgc_labeled: false,
            disable_pgc_unlabeled: false,
            separate_queues: false,
            threshold: 0.95,
            normalize_keys: true,
            freeze_encoder: false,
            weak_view: ViewSpec {
                kind: AugmentKind::GaussianNoise,
                strength: 0.1,
            },
            strong_view: ViewSpec {
                kind: AugmentKind::GaussianNoise,
                strength: 0.3,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(
                "temperature",
                format!("must be > 0, got {}", self.temperature),
            );
        }
        if self.keys_per_category == 0 {
            return bad("keys_per_category", "must be >= 1".into());
        }
        if self.projector_dim == 0 || self.projector_hidden == 0 {
            return bad("projector_dim", "projector sizes must be >= 1".into());
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return bad("encoder_widths", "must be non-empty and positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr", format!("must be > 0, got {}", self.base_lr));
        }
        if !(self.classifier_lr_multiplier > 0.0) {
            return bad("classifier_lr_multiplier", "must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("sgd_momentum", "must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be >= 0".into());
        }
        if let Some(m) = self.key_momentum {
            if !(0.0..1.0).contains(&m) {
                return bad("key_momentum", format!("must lie in [0, 1), got {m}"));
            }
        }
        if self.labeled_batch_size == 0 || self.unlabeled_batch_size == 0 {
            return bad("labeled_batch_size", "batch sizes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(
                "threshold",
                format!("must lie in [0, 1], got {}", self.threshold),
            );
        }
        for (name, v) in [
            ("weak_view", self.weak_view),
            ("strong_view", self.strong_view),
        ] {
            if !(v.strength >= 0.0 && v.strength.is_finite()) {
                return bad(name, "strength must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn loss_terms(&self) -> LossTerms {
        LossTerms {
            pgc_labeled: !self.disable_pgc_labeled,
            pgc_unlabeled: !self.disable_pgc_unlabeled,
        }
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            input: data.shape,
            num_categories: data.num_categories,
            encoder_widths: self.encoder_widths.clone(),
            projector_hidden: self.projector_hidden,
            projector_dim: self.projector_dim,
            normalize_keys: self.normalize_keys,
            key_momentum: self.key_momentum,
            freeze_encoder: self.freeze_encoder,
        }
    }

    fn policies(&self) -> (AugmentationPolicy, AugmentationPolicy) {
        (
            AugmentationPolicy::new(self.weak_view.kind, self.weak_view.strength, self.seed),
            AugmentationPolicy::new(self.strong_view.kind, self.strong_view.strength, self.seed),
        )
    }
}

/// Key storage for the active method.
#[derive(Debug, Clone, PartialEq)]
pub enum Queues {
    None,
    Unified(KeyStore),
    Separate {
        labeled: KeyStore,
        unlabeled: KeyStore,
    },
    Instance(KeyQueue),
}

impl Queues {
    pub fn for_config(config: &TrainConfig, num_categories: usize) -> Result<Self> {
        let (d, l, seed) = (config.keys_per_category, config.projector_dim, config.seed);
        let store = |salt: u64| -> Result<KeyStore> {
            Ok(
                KeyStore::new(num_categories, d, l, rng::derive_seed(seed, &[salt]))?
                    .with_normalize_keys(config.normalize_keys),
            )
        };
        Ok(match config.method {
            Method::SelfTuning if config.separate_queues => Queues::Separate {
                labeled: store(0)?,
                unlabeled: store(1)?,
            },
            Method::SelfTuning => Queues::Unified(store(0)?),
            // same number of keys as the class-partitioned store
            Method::ContrastiveCl => Queues::Instance(
                KeyQueue::new(d * num_categories, l, rng::derive_seed(seed, &[0]))?
                    .with_normalize_keys(config.normalize_keys),
            ),
            Method::PseudoLabelCe | Method::FineTuneOnly => Queues::None,
        })
    }

    /// Store used for labeled contrast and for labeled-origin keys.
    pub fn labeled_store(&self) -> Option<&KeyStore> {
        match self {
            Queues::Unified(s) => Some(s),
            Queues::Separate { labeled, .. } => Some(labeled),
            _ => None,
        }
    }

    pub fn unlabeled_store(&self) -> Option<&KeyStore> {
        match self {
            Queues::Unified(s) => Some(s),
            Queues::Separate { unlabeled, .. } => Some(unlabeled),
            _ => None,
        }
    }

    fn enqueue_labeled(&mut self, category: usize, key: &[f64]) -> Result<()> {
        match self {
            Queues::Unified(s) | Queues::Separate { labeled: s, .. } => s.enqueue(category, key),
            Queues::Instance(q) => q.enqueue(key),
            Queues::None => Ok(()),
        }
    }

    fn enqueue_unlabeled(&mut self, category: usize, key: &[f64]) -> Result<()> {
        match self {
            Queues::Unified(s) | Queues::Separate { unlabeled: s, .. } => s.enqueue(category, key),
            Queues::Instance(q) => q.enqueue(key),
            Queues::None => Ok(()),
        }
    }

    pub fn enqueue_count(&self) -> u64 {
        match self {
            Queues::None => 0,
            Queues::Unified(s) => s.enqueue_count(),
            Queues::Separate { labeled, unlabeled } => {
                labeled.enqueue_count() + unlabeled.enqueue_count()
            }
            Queues::Instance(q) => q.enqueue_count(),
        }
    }
}

/// Mutable training state: parameters, optimizer and key queues.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub optimizer: Sgd,
    pub queues: Queues,
    pub steps: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, model: ModelConfig) -> Result<Self> {
        config.validate()?;
        let num_categories = model.num_categories;
        let bundle = ModelBundle::new(model, config.seed)?;
        Self::from_bundle(config, bundle, num_categories)
    }

    pub fn from_bundle(
        config: &TrainConfig,
        bundle: ModelBundle,
        num_categories: usize,
    ) -> Result<Self> {
        let optimizer = Sgd::for_bundle(
            &bundle,
            config.base_lr,
            config.classifier_lr_multiplier,
            config.sgd_momentum,
            config.weight_decay,
        )?;
        Ok(Self {
            bundle,
            optimizer,
            queues: Queues::for_config(config, num_categories)?,
            steps: 0,
        })
    }
}

/// Two augmented views per example, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub view1: Array2<f64>,
    pub view2: Array2<f64>,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.view1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.view1.nrows() == 0
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            view1: Array2::zeros((0, dim)),
            view2: Array2::zeros((0, dim)),
        }
    }

    /// Views for `rows` of `data`. Randomness is keyed by
    /// `(epoch, step, stream, row)` so each example's draw is independent of
    /// batch composition.
    pub fn build(
        data: &Dataset,
        rows: &[usize],
        config: &TrainConfig,
        epoch: u64,
        step: u64,
        stream: u64,
    ) -> Self {
        let (weak, strong) = config.policies();
        let d = data.input_dim();
        let mut view1 = Array2::zeros((rows.len(), d));
        let mut view2 = Array2::zeros((rows.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            let x = data.row(r).to_vec();
            let (a, b) = two_views(
                &weak,
                &strong,
                &x,
                data.shape,
                &[epoch, step, stream, r as u64],
            );
            view1.row_mut(i).assign(&ndarray::ArrayView1::from(&a[..]));
            view2.row_mut(i).assign(&ndarray::ArrayView1::from(&b[..]));
        }
        Self { view1, view2 }
    }
}

fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    let n = a.ncols();
    &a.as_slice().expect("standard layout")[i * n..(i + 1) * n]
}

/// Mean cross-entropy over `pass` and `dL/dlogits` for that mean.
fn ce_term(pass: &QueryPass, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let b = labels.len() as f64;
    let mut grad = Array2::zeros(pass.logits.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (loss, g) = cross_entropy_with_logits(row(&pass.logits, i), y)?;
        total += loss;
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v / b;
        }
    }
    Ok((total / b, grad))
}

/// Mean group contrast of `queries` against `store`, positive group
/// `[own key, store keys of categories[i]]`.
fn group_contrast_term(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    categories: &[usize],
    store: &KeyStore,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    let b = categories.len() as f64;
    let mut grad = Array2::zeros(queries.raw_dim());
    let mut total = 0.0;
    for (i, &c) in categories.iter().enumerate() {
        let inst =
            ContrastInstance::from_store(row(queries, i), row(keys, i), store, c, temperature)?;
        let (loss, g) = pgc_query_grad(&inst)?;
        total += loss;
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v / b;
        }
    }
    Ok((total / b, grad))
}

/// Mean single-positive contrast against a class-agnostic queue.
fn instance_contrast_term(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    queue: &KeyQueue,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    let b = queries.nrows() as f64;
    let negatives = queue.keys();
    let mut grad = Array2::zeros(queries.raw_dim());
    let mut total = 0.0;
    for i in 0..queries.nrows() {
        let inst = ContrastInstance::new(
            row(queries, i),
            vec![row(keys, i)],
            negatives.clone(),
            temperature,
        )?;
        let (loss, g) = pgc_query_grad(&inst)?;
        total += loss;
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v / b;
        }
    }
    Ok((total / b, grad))
}

fn pseudo_labels_of(logits: &Array2<f64>) -> Vec<PseudoLabel> {
    (0..logits.nrows())
        .map(|i| PseudoLabel::from_logits(row(logits, i)))
        .collect()
}

/// Keys produced by a step, routed by origin and (pseudo-)label.
struct PendingKey {
    from_labeled: bool,
    category: usize,
    key: Vec<f64>,
}

struct StepOutcome {
    report: LossReport,
    grads: Gradients,
    keys: Vec<PendingKey>,
}

/// One optimizer step of `config.method`. Keys are enqueued after the update.
pub fn train_step(
    state: &mut TrainState,
    config: &TrainConfig,
    labeled: &ViewBatch,
    labels: &[usize],
    unlabeled: &ViewBatch,
) -> Result<LossReport> {
    let out = step_outcome(state, config, labeled, labels, unlabeled)?;
    state.optimizer.step(&mut state.bundle, &out.grads);
    state.bundle.update_momentum();
    for k in out.keys {
        if k.from_labeled {
            state.queues.enqueue_labeled(k.category, &k.key)?;
        } else {
            state.queues.enqueue_unlabeled(k.category, &k.key)?;
        }
    }
    state.steps += 1;
    Ok(out.report)
}

/// The step objective at the current parameters and queues, without updating
/// either.
pub fn evaluate_step(
    state: &TrainState,
    config: &TrainConfig,
    labeled: &ViewBatch,
    labels: &[usize],
    unlabeled: &ViewBatch,
) -> Result<LossReport> {
    Ok(step_outcome(state, config, labeled, labels, unlabeled)?.report)
}

fn step_outcome(
    state: &TrainState,
    config: &TrainConfig,
    labeled: &ViewBatch,
    labels: &[usize],
    unlabeled: &ViewBatch,
) -> Result<StepOutcome> {
    if labeled.is_empty() {
        return invalid("labeled batch is empty but cross-entropy is always enabled");
    }
    if labels.len() != labeled.len() {
        return Err(Error::Shape(format!(
            "{} labeled views but {} labels",
            labeled.len(),
            labels.len()
        )));
    }
    let terms = config.loss_terms();
    let tau = config.temperature;
    let bundle = &state.bundle;

    let pass_l = bundle.forward_query(labeled.view1.view())?;
    let (ce, dlogits_l) = ce_term(&pass_l, labels)?;
    let mut report = LossReport {
        ce,
        ..LossReport::default()
    };
    let mut dq_l = None;
    let mut grads: Gradients;
    let mut pending_keys = Vec::new();

    match config.method {
        Method::FineTuneOnly => {
            grads = bundle.backward_query(&pass_l, Some(&dlogits_l), None);
        }
        Method::SelfTuning => {
            let keys_l = bundle.encode_keys(labeled.view2.view())?;
            let store_l = state
                .queues
                .labeled_store()
                .expect("self-tuning has a store");
            if terms.pgc_labeled {
                let (loss, dq) =
                    group_contrast_term(&pass_l.queries, &keys_l, labels, store_l, tau)?;
                report.pgc_labeled = loss;
                dq_l = Some(dq);
            }
            grads = bundle.backward_query(&pass_l, Some(&dlogits_l), dq_l.as_ref());
            for (i, &y) in labels.iter().enumerate() {
                pending_keys.push(PendingKey {
                    from_labeled: true,
                    category: y,
                    key: keys_l.row(i).to_vec(),
                });
            }
            if !unlabeled.is_empty() {
                let keys_u = bundle.encode_keys(unlabeled.view2.view())?;
                let pass_u = bundle.forward_query(unlabeled.view1.view())?;
                let pseudo: Vec<usize> = pseudo_labels_of(&pass_u.logits)
                    .iter()
                    .map(|p| p.category)
                    .collect();
                if terms.pgc_unlabeled {
                    let store_u = state
                        .queues
                        .unlabeled_store()
                        .expect("self-tuning has a store");
                    let (loss, dq) =
                        group_contrast_term(&pass_u.queries, &keys_u, &pseudo, store_u, tau)?;
                    report.pgc_unlabeled = loss;
                    report.pseudo_coverage = 1.0;
                    grads.add_assign(&bundle.backward_query(&pass_u, None, Some(&dq)));
                }
                for (i, &c) in pseudo.iter().enumerate() {
                    pending_keys.push(PendingKey {
                        from_labeled: false,
                        category: c,
                        key: keys_u.row(i).to_vec(),
                    });
                }
            }
        }
        Method::ContrastiveCl => {
            let Queues::Instance(queue) = &state.queues else {
                unreachable!("contrastive baseline owns an instance queue")
            };
            let keys_l = bundle.encode_keys(labeled.view2.view())?;
            if terms.pgc_labeled {
                let (loss, dq) = instance_contrast_term(&pass_l.queries, &keys_l, queue, tau)?;
                report.pgc_labeled = loss;
                dq_l = Some(dq);
            }
            grads = bundle.backward_query(&pass_l, Some(&dlogits_l), dq_l.as_ref());
            for i in 0..keys_l.nrows() {
                pending_keys.push(PendingKey {
                    from_labeled: true,
                    category: 0,
                    key: keys_l.row(i).to_vec(),
                });
            }
            if !unlabeled.is_empty() {
                let keys_u = bundle.encode_keys(unlabeled.view2.view())?;
                if terms.pgc_unlabeled {
                    let pass_u = bundle.forward_query(unlabeled.view1.view())?;
                    let (loss, dq) = instance_contrast_term(&pass_u.queries, &keys_u, queue, tau)?;
                    report.pgc_unlabeled = loss;
                    grads.add_assign(&bundle.backward_query(&pass_u, None, Some(&dq)));
                }
                for i in 0..keys_u.nrows() {
                    pending_keys.push(PendingKey {
                        from_labeled: false,
                        category: 0,
                        key: keys_u.row(i).to_vec(),
                    });
                }
            }
        }
        Method::PseudoLabelCe => {
            grads = bundle.backward_query(&pass_l, Some(&dlogits_l), None);
            if !unlabeled.is_empty() && terms.pgc_unlabeled {
                // targets from the weak view, loss on the strong view
                let weak_logits = bundle.logits(unlabeled.view1.view())?;
                let pass_u = bundle.forward_query(unlabeled.view2.view())?;
                let b = unlabeled.len() as f64;
                let mut dlogits = Array2::zeros(pass_u.logits.raw_dim());
                let (mut total, mut passed) = (0.0, 0usize);
                for i in 0..unlabeled.len() {
                    let gate = pseudo_ce(
                        &ProbVector::from_logits(row(&weak_logits, i))?,
                        config.threshold,
                    )?;
                    if !gate.passed {
                        continue;
                    }
                    passed += 1;
                    let (loss, g) =
                        cross_entropy_with_logits(row(&pass_u.logits, i), gate.category)?;
                    total += loss;
                    for (dst, v) in dlogits.row_mut(i).iter_mut().zip(g) {
                        *dst = v / b;
                    }
                }
                report.pgc_unlabeled = total / b;
                report.pseudo_coverage = passed as f64 / b;
                if passed > 0 {
                    grads.add_assign(&bundle.backward_query(&pass_u, Some(&dlogits), None));
                }
            }
        }
    }

    report.total = total_objective(report.ce, report.pgc_labeled, report.pgc_unlabeled, terms);
    Ok(StepOutcome {
        report,
        grads,
        keys: pending_keys,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_pgc_labeled: f64,
    pub loss_pgc_unlabeled: f64,
    pub test_accuracy: f64,
    /// `None` when there is no unlabeled data.
    pub pseudo_label_accuracy: Option<f64>,
    pub pseudo_coverage: f64,
}

impl EpochRow {
    /// `test_accuracy - pseudo_label_accuracy`.
    pub fn gap(&self) -> Option<f64> {
        self.pseudo_label_accuracy.map(|p| self.test_accuracy - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "epoch",
    "loss_ce",
    "loss_pgc_labeled",
    "loss_pgc_unlabeled",
    "test_accuracy",
    "pseudo_label_accuracy",
    "pseudo_coverage",
];

impl TrainReport {
    pub fn final_test_accuracy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.test_accuracy)
    }

    pub fn final_pseudo_label_accuracy(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.pseudo_label_accuracy)
    }

    pub fn gap_curve(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(EpochRow::gap).collect()
    }

    /// Epoch-averaged tolerance gap; `None` without unlabeled data.
    pub fn mean_gap(&self) -> Option<f64> {
        let gaps: Option<Vec<f64>> = self.gap_curve().into_iter().collect();
        let gaps = gaps?;
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let pseudo = r
                .pseudo_label_accuracy
                .map(|p| p.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss_ce,
                r.loss_pgc_labeled,
                r.loss_pgc_unlabeled,
                r.test_accuracy,
                pseudo,
                r.pseudo_coverage
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().ne(REPORT_COLUMNS) {
            return Err(Error::Format(format!(
                "unexpected report columns {headers:?}"
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(EpochRow {
                epoch: rec[0]
                    .parse()
                    .map_err(|e| Error::Format(format!("bad epoch {:?}: {e}", &rec[0])))?,
                loss_ce: num(&rec[1])?,
                loss_pgc_labeled: num(&rec[2])?,
                loss_pgc_unlabeled: num(&rec[3])?,
                test_accuracy: num(&rec[4])?,
                pseudo_label_accuracy: if rec[5].is_empty() {
                    None
                } else {
                    Some(num(&rec[5])?)
                },
                pseudo_coverage: num(&rec[6])?,
            });
        }
        Ok(rows)
    }
}

pub fn accuracy(bundle: &ModelBundle, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("cannot measure accuracy on an empty dataset");
    }
    let pred = bundle.predict(data.inputs.view())?;
    let hits = pred
        .iter()
        .zip(data.retained_labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

fn check_datasets(config: &TrainConfig, split: &Split) -> Result<()> {
    let c = split.labeled.num_categories;
    for (name, d) in [("unlabeled", &split.unlabeled), ("test", &split.test)] {
        if d.num_categories != c || d.shape != split.labeled.shape {
            return invalid(format!(
                "{name} set disagrees with the labeled set on categories or shape"
            ));
        }
    }
    if split.labeled.is_empty() {
        return invalid("labeled set is empty");
    }
    if split.test.is_empty() {
        return invalid("test set is empty");
    }
    for v in [config.weak_view, config.strong_view] {
        AugmentationPolicy::new(v.kind, v.strength, 0).validate(split.labeled.shape)?;
    }
    Ok(())
}

fn permutation(n: usize, seed: u64, path: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, path));
    order
}

/// Builds the starting model: seeded init, then pretrained encoder weights.
pub fn initial_bundle(
    config: &TrainConfig,
    data: &Dataset,
    pretrained: Option<&Checkpoint>,
) -> Result<ModelBundle> {
    let mut bundle = ModelBundle::new(config.model_config(data), config.seed)?;
    if let Some(ck) = pretrained {
        bundle.load_checkpoint(ck, LoadScope::EncoderOnly)?;
    }
    Ok(bundle)
}

/// Full training run. An epoch is one pass over the unlabeled set while the
/// labeled set is cycled; without unlabeled data it is one pass over the
/// labeled set.
pub fn train(
    config: &TrainConfig,
    split: &Split,
    pretrained: Option<&Checkpoint>,
) -> Result<TrainReport> {
    Ok(train_with_state(config, split, pretrained)?.0)
}

pub fn train_with_state(
    config: &TrainConfig,
    split: &Split,
    pretrained: Option<&Checkpoint>,
) -> Result<(TrainReport, TrainState)> {
    config.validate()?;
    check_datasets(config, split)?;
    let bundle = initial_bundle(config, &split.labeled, pretrained)?;
    let mut state = TrainState::from_bundle(config, bundle, split.labeled.num_categories)?;
    let labels = split.labeled.labels().expect("labeled role exposes labels");
    let (n_l, n_u) = (split.labeled.len(), split.unlabeled.len());
    let use_u = config.method.uses_unlabeled() && n_u > 0;
    let b_l = config.labeled_batch_size.min(n_l);
    let b_u = config.unlabeled_batch_size;
    let steps = if use_u {
        n_u.div_ceil(b_u)
    } else {
        n_l.div_ceil(b_l)
    };
    let empty = ViewBatch::empty(split.labeled.input_dim());
    let mut rows = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let order_l = permutation(n_l, config.seed, &[rng::tag::SHUFFLE, e, 0]);
        let order_u = permutation(n_u, config.seed, &[rng::tag::SHUFFLE, e, 1]);
        let (mut ce, mut pl, mut pu) = (0.0, 0.0, 0.0);
        let (mut covered, mut seen_u) = (0.0, 0usize);
        for step in 0..steps {
            let s = step as u64;
            let rows_l: Vec<usize> = (0..b_l).map(|j| order_l[(step * b_l + j) % n_l]).collect();
            let batch_labels: Vec<usize> = rows_l.iter().map(|&r| labels[r]).collect();
            let lab = ViewBatch::build(&split.labeled, &rows_l, config, e, s, 0);
            let unl = if use_u {
                let rows_u = &order_u[step * b_u..((step + 1) * b_u).min(n_u)];
                ViewBatch::build(&split.unlabeled, rows_u, config, e, s, 1)
            } else {
                empty.clone()
            };
            let rep = train_step(&mut state, config, &lab, &batch_labels, &unl)?;
            ce += rep.ce;
            pl += rep.pgc_labeled;
            pu += rep.pgc_unlabeled;
            covered += rep.pseudo_coverage * unl.len() as f64;
            seen_u += unl.len();
        }
        let n_steps = steps as f64;
        let pseudo_label_accuracy = if n_u > 0 {
            Some(accuracy(&state.bundle, &split.unlabeled)?)
        } else {
            None
        };
        rows.push(EpochRow {
            epoch: epoch + 1,
            loss_ce: ce / n_steps,
            loss_pgc_labeled: pl / n_steps,
            loss_pgc_unlabeled: pu / n_steps,
            test_accuracy: accuracy(&state.bundle, &split.test)?,
            pseudo_label_accuracy,
            pseudo_coverage: if seen_u > 0 {
                covered / seen_u as f64
            } else {
                0.0
            },
        });
        log::debug!(
            "{} seed {} epoch {}: {:?}",
            config.method,
            config.seed,
            epoch + 1,
            rows.last()
        );
    }
    Ok((
        TrainReport {
            method: config.method,
            seed: config.seed,
            rows,
        },
        state,
    ))
}

/// Writes the run's parameters, momentum copies and seed-stream position.
pub fn checkpoint_of(state: &TrainState, config: &TrainConfig) -> Checkpoint {
    let mut ck = state.bundle.to_checkpoint();
    ck.push_u64("rng.state", &[config.seed, state.steps]);
    ck
}

/// Supervised pretraining of an encoder on a source task, standing in for a
/// model pretrained elsewhere. Returns a checkpoint whose `encoder.*` fields
/// can seed a target run.
pub fn pretrain_encoder(
    config: &TrainConfig,
    source: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Checkpoint> {
    let labels = source
        .labels()
        .ok_or_else(|| Error::InvalidArgument("source data must be labeled".into()))?;
    let pre = TrainConfig {
        method: Method::FineTuneOnly,
        base_lr: lr,
        classifier_lr_multiplier: 1.0,
        key_momentum: None,
        freeze_encoder: false,
        seed: rng::derive_seed(seed, &[rng::tag::PRETRAIN]),
        epochs,
        ..config.clone()
    };
    let mut state = TrainState::new(&pre, pre.model_config(source))?;
    let n = source.len();
    let b = pre.labeled_batch_size.min(n);
    let empty = ViewBatch::empty(source.input_dim());
    for epoch in 0..epochs as u64 {
        let order = permutation(n, pre.seed, &[rng::tag::SHUFFLE, epoch, 2]);
        for (s, chunk) in order.chunks(b).enumerate() {
            let ys: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
            let batch = ViewBatch::build(source, chunk, &pre, epoch, s as u64, 2);
            train_step(&mut state, &pre, &batch, &ys, &empty)?;
        }
    }
    Ok(state.bundle.to_checkpoint())
}

/// The seven loss-type and information-exploration variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithCe,
    WithCl,
    WithPgc,
    WithoutUnlabeledPgc,
    WithoutLabeledPgc,
    SeparateQueue,
    UnifiedExploration,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::WithCe,
        Variant::WithCl,
        Variant::WithPgc,
        Variant::WithoutUnlabeledPgc,
        Variant::WithoutLabeledPgc,
        Variant::SeparateQueue,
        Variant::UnifiedExploration,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::WithCe => "w/ CE loss",
            Variant::WithCl => "w/ CL loss",
            Variant::WithPgc => "w/ PGC loss",
            Variant::WithoutUnlabeledPgc => "w/o unlabeled PGC",
            Variant::WithoutLabeledPgc => "w/o labeled PGC",
            Variant::SeparateQueue => "separate queue",
            Variant::UnifiedExploration => "unified exploration",
        }
    }

    /// The variant's config derived from `base` (method and flags replaced).
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let unified = TrainConfig {
            method: Method::SelfTuning,
            disable_pgc_labeled: false,
            disable_pgc_unlabeled: false,
            separate_queues: false,
            ..base.clone()
        };
        match self {
            Variant::WithCe => TrainConfig {
                method: Method::PseudoLabelCe,
                ..unified
            },
            Variant::WithCl => TrainConfig {
                method: Method::ContrastiveCl,
                ..unified
            },
            Variant::WithPgc | Variant::UnifiedExploration => unified,
            Variant::WithoutUnlabeledPgc => TrainConfig {
                disable_pgc_unlabeled: true,
                ..unified
            },
            Variant::WithoutLabeledPgc => TrainConfig {
                disable_pgc_labeled: true,
                ..unified
            },
            Variant::SeparateQueue => TrainConfig {
                separate_queues: true,
                ..unified
            },
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub reports: Vec<TrainReport>,
}

impl AblationRow {
    pub fn accuracies(&self) -> Vec<f64> {
        self.reports
            .iter()
            .map(TrainReport::final_test_accuracy)
            .collect()
    }

    /// Mean and sample standard deviation of final test accuracy over seeds.
    pub fn accuracy_stats(&self) -> (f64, f64) {
        mean_std(&self.accuracies())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("every variant is present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mean_test_accuracy,std_test_accuracy");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            let (m, s) = r.accuracy_stats();
            out.push_str(&format!("{},{m},{s}", r.variant.label()));
            for a in r.accuracies() {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every variant for every seed, in parallel across runs.
pub fn run_ablation_suite(
    base: &TrainConfig,
    split: &Split,
    seeds: &[u64],
    pretrained: Option<&Checkpoint>,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return invalid("ablation needs at least one seed");
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(v, seed)| {
            train(
                &TrainConfig {
                    seed,
                    ..v.configure(base)
                },
                split,
                pretrained,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = Variant::ALL
        .iter()
        .enumerate()
        .map(|(i, &variant)| AblationRow {
            variant,
            reports: reports[i * seeds.len()..(i + 1) * seeds.len()].to_vec(),
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Final test accuracy over a grid of projector sizes and queue sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub projector_dims: Vec<usize>,
    pub keys_per_category: Vec<usize>,
    /// `accuracy[i][j]` for `projector_dims[i]`, `keys_per_category[j]`.
    pub accuracy: Vec<Vec<f64>>,
    pub reports: Vec<TrainReport>,
}

impl SweepResult {
    pub fn spread(&self) -> f64 {
        let all: Vec<f64> = self.accuracy.iter().flatten().copied().collect();
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("projector_dim");
        for d in &self.keys_per_category {
            out.push_str(&format!(",D={d}"));
        }
        out.push('\n');
        for (l, row) in self.projector_dims.iter().zip(&self.accuracy) {
            out.push_str(&l.to_string());
            for a in row {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn run_sensitivity_sweep(
    base: &TrainConfig,
    split: &Split,
    projector_dims: &[usize],
    keys_per_category: &[usize],
    pretrained: Option<&Checkpoint>,
) -> Result<SweepResult> {
    if projector_dims.is_empty() || keys_per_category.is_empty() {
        return invalid("sweep grid must be non-empty on both axes");
    }
    let cells: Vec<(usize, usize)> = projector_dims
        .iter()
        .flat_map(|&l| keys_per_category.iter().map(move |&d| (l, d)))
        .collect();
    let reports = cells
        .par_iter()
        .map(|&(l, d)| {
            let cfg = TrainConfig {
                projector_dim: l,
                keys_per_category: d,
                ..base.clone()
            };
            train(&cfg, split, pretrained)
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracy = reports
        .chunks(keys_per_category.len())
        .map(|c| c.iter().map(TrainReport::final_test_accuracy).collect())
        .collect();
    Ok(SweepResult {
        projector_dims: projector_dims.to_vec(),
        keys_per_category: keys_per_category.to_vec(),
        accuracy,
        reports,
    })
}
