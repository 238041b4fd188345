//! Encoder, classifier head and projector head.
//!
//! The query path is `h(f(view1))` and also feeds `g(f(view1))` for class
//! predictions. The key path is `h(f(view2))` evaluated either with the live
//! parameters or with slow momentum copies; it never produces gradients.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FieldData};
use crate::error::{invalid, Error, Result};
use crate::losses::{argmax, softmax};
use crate::nn::{ConvCache, ConvNet, Linear, Mlp, MlpCache, Tensor};
use crate::rng;

const NORM_FLOOR: f64 = 1e-12;

/// Shape of one input example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputShape {
    Vector {
        dim: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn flat_dim(&self) -> usize {
        match *self {
            InputShape::Vector { dim } => dim,
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input: InputShape,
    pub num_categories: usize,
    /// Hidden widths of the MLP encoder, or conv channels for images. The last
    /// entry is the feature dimension.
    pub encoder_widths: Vec<usize>,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub normalize_keys: bool,
    /// Momentum coefficient for the key encoder, `None` to share parameters.
    pub key_momentum: Option<f64>,
    pub freeze_encoder: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input.flat_dim() == 0 {
            return invalid("input dimension must be positive");
        }
        if self.num_categories < 2 {
            return invalid("num_categories must be >= 2");
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return invalid("encoder_widths must be non-empty and positive");
        }
        if self.projector_hidden == 0 || self.projector_dim == 0 {
            return invalid("projector sizes must be positive");
        }
        if let Some(m) = self.key_momentum {
            if !(0.0..1.0).contains(&m) {
                return invalid(format!("key momentum must lie in [0, 1), got {m}"));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Mlp(Mlp),
    Conv(ConvNet),
}

enum EncoderCache {
    Mlp(MlpCache),
    Conv(ConvCache),
}

impl Encoder {
    fn new(config: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        match config.input {
            InputShape::Vector { dim } => {
                let mut widths = vec![dim];
                widths.extend(&config.encoder_widths);
                Encoder::Mlp(Mlp::new(&widths, true, rng))
            }
            InputShape::Image {
                channels,
                height,
                width,
            } => Encoder::Conv(ConvNet::new(
                channels,
                height,
                width,
                &config.encoder_widths,
                rng,
            )),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Encoder::Mlp(m) => m.forward(x),
            Encoder::Conv(c) => c.forward(x),
        }
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, EncoderCache) {
        match self {
            Encoder::Mlp(m) => {
                let (y, c) = m.forward_cached(x);
                (y, EncoderCache::Mlp(c))
            }
            Encoder::Conv(n) => {
                let (y, c) = n.forward_cached(x);
                (y, EncoderCache::Conv(c))
            }
        }
    }

    fn backward(&self, cache: &EncoderCache, dy: Array2<f64>) -> Vec<Tensor> {
        match (self, cache) {
            (Encoder::Mlp(m), EncoderCache::Mlp(c)) => m.backward(c, dy).1,
            (Encoder::Conv(n), EncoderCache::Conv(c)) => n.backward(c, dy).1,
            _ => unreachable!("cache built by the same encoder"),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Encoder::Mlp(m) => m.params(),
            Encoder::Conv(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::Mlp(m) => m.params_mut(),
            Encoder::Conv(c) => c.params_mut(),
        }
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let n = self.params().len() / 2;
        (0..n)
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }
}

/// Slow copies of the encoder and projector used on the key path.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumCopies {
    pub coefficient: f64,
    pub encoder: Encoder,
    pub projector: Mlp,
}

/// The classifier's verdict on one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub category: usize,
    /// The largest softmax entry.
    pub confidence: f64,
}

impl PseudoLabel {
    /// Argmax of the softmaxed logits; ties go to the lowest index.
    pub fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        let category = argmax(&p);
        Self {
            category,
            confidence: p[category],
        }
    }
}

/// Forward state of the query path, kept for the backward pass.
pub struct QueryPass {
    pub logits: Array2<f64>,
    /// Projector outputs, L2-normalized when the model normalizes keys.
    pub queries: Array2<f64>,
    features: Array2<f64>,
    norms: Array1<f64>,
    encoder_cache: EncoderCache,
    projector_cache: MlpCache,
}

/// Gradients aligned with [`ModelBundle::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }
}

/// A named subset of parameters sharing one learning rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub names: Vec<String>,
    /// Positions in [`ModelBundle::params`].
    pub indices: Vec<usize>,
    pub scalar_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterGroups {
    /// Encoder parameters (empty when the encoder is frozen).
    pub pretrained: ParamGroup,
    /// Classifier and projector parameters.
    pub fresh: ParamGroup,
}

/// Which part of a checkpoint to restore.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadScope {
    All,
    /// Only `encoder.*`, also copied into the momentum encoder.
    EncoderOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: ModelConfig,
    pub encoder: Encoder,
    pub classifier: Linear,
    pub projector: Mlp,
    pub momentum: Option<MomentumCopies>,
}

fn normalize_rows(raw: &Array2<f64>, normalize: bool) -> (Array2<f64>, Array1<f64>) {
    let mut out = raw.clone();
    let mut norms = Array1::ones(raw.nrows());
    if normalize {
        for (mut row, n) in out.outer_iter_mut().zip(norms.iter_mut()) {
            *n = row.dot(&row).sqrt().max(NORM_FLOOR);
            row /= *n;
        }
    }
    (out, norms)
}

impl ModelBundle {
    /// Seeded construction. Encoder, classifier and projector draw from
    /// separate streams, so loading pretrained encoder weights leaves the
    /// heads' initialization unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tag = rng::tag::MODEL_INIT;
        let encoder = Encoder::new(&config, &mut rng::stream(seed, &[tag, 0]));
        let feature = config.feature_dim();
        let classifier = Linear::new(
            feature,
            config.num_categories,
            &mut rng::stream(seed, &[tag, 1]),
        );
        let projector = Mlp::new(
            &[feature, config.projector_hidden, config.projector_dim],
            false,
            &mut rng::stream(seed, &[tag, 2]),
        );
        let momentum = config.key_momentum.map(|coefficient| MomentumCopies {
            coefficient,
            encoder: encoder.clone(),
            projector: projector.clone(),
        });
        Ok(Self {
            config,
            encoder,
            classifier,
            projector,
            momentum,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        let d = self.config.input.flat_dim();
        if x.ncols() != d {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {d}",
                x.ncols()
            )));
        }
        Ok(())
    }

    /// All live parameters: encoder, then classifier, then projector.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.params();
        out.extend(self.classifier.params());
        out.extend(self.projector.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.classifier.params_mut());
        out.extend(self.projector.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.encoder.param_names("encoder");
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        for i in 0..self.projector.layers.len() {
            names.push(format!("projector.{i}.weight"));
            names.push(format!("projector.{i}.bias"));
        }
        names
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(
            self.params()
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        )
    }

    pub fn parameter_groups(&self) -> ParameterGroups {
        let names = self.param_names();
        let params = self.params();
        let n_encoder = self.encoder.params().len();
        let group = |range: std::ops::Range<usize>| ParamGroup {
            names: range.clone().map(|i| names[i].clone()).collect(),
            scalar_count: range.clone().map(|i| params[i].len()).sum(),
            indices: range.collect(),
        };
        let pretrained = if self.config.freeze_encoder {
            group(0..0)
        } else {
            group(0..n_encoder)
        };
        ParameterGroups {
            pretrained,
            fresh: group(n_encoder..params.len()),
        }
    }

    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.encoder.forward(x))
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.classifier.forward(self.features(x)?.view()))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(self
            .logits(x)?
            .outer_iter()
            .map(|row| argmax(row.as_slice().expect("standard layout")))
            .collect())
    }

    pub fn forward_query(&self, x: ArrayView2<'_, f64>) -> Result<QueryPass> {
        self.check_input(x)?;
        let (features, encoder_cache) = self.encoder.forward_cached(x);
        let logits = self.classifier.forward(features.view());
        let (raw, projector_cache) = self.projector.forward_cached(features.view());
        let (queries, norms) = normalize_rows(&raw, self.config.normalize_keys);
        Ok(QueryPass {
            logits,
            queries,
            features,
            norms,
            encoder_cache,
            projector_cache,
        })
    }

    /// Backpropagates `dL/dlogits` and `dL/dqueries` into every live parameter.
    /// Absent terms contribute nothing; a frozen encoder receives zeros.
    pub fn backward_query(
        &self,
        pass: &QueryPass,
        dlogits: Option<&Array2<f64>>,
        dqueries: Option<&Array2<f64>>,
    ) -> Gradients {
        let encoder_zeros = || -> Vec<Tensor> {
            self.encoder
                .params()
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect()
        };
        let mut dfeatures: Option<Array2<f64>> = None;

        let classifier_grads: Vec<Tensor> = match dlogits {
            Some(d) => {
                let (dx, grads) = self.classifier.backward(pass.features.view(), d.view());
                dfeatures = Some(dx);
                grads.into()
            }
            None => self
                .classifier
                .params()
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        };

        let projector_grads = match dqueries {
            Some(dq) => {
                let dz = if self.config.normalize_keys {
                    let mut dz = dq.clone();
                    for ((mut row, q), n) in dz
                        .outer_iter_mut()
                        .zip(pass.queries.outer_iter())
                        .zip(pass.norms.iter())
                    {
                        let proj = q.dot(&row);
                        row.scaled_add(-proj, &q);
                        row /= *n;
                    }
                    dz
                } else {
                    dq.clone()
                };
                let (dx, grads) = self.projector.backward(&pass.projector_cache, dz);
                dfeatures = Some(match dfeatures {
                    Some(d) => d + dx,
                    None => dx,
                });
                grads
            }
            None => self
                .projector
                .params()
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        };

        let encoder_grads = match dfeatures {
            Some(d) if !self.config.freeze_encoder => self.encoder.backward(&pass.encoder_cache, d),
            _ => encoder_zeros(),
        };

        let mut all = encoder_grads;
        all.extend(classifier_grads);
        all.extend(projector_grads);
        Gradients(all)
    }

    pub fn encode_queries(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let raw = self.projector.forward(self.features(x)?.view());
        Ok(normalize_rows(&raw, self.config.normalize_keys).0)
    }

    /// Query embedding of a single view.
    pub fn encode_query(&self, view: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, view.len()), view)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.encode_queries(x)?.row(0).to_vec())
    }

    /// Key embeddings. Detached by construction: no cache is kept, so nothing
    /// can be backpropagated through them.
    pub fn encode_keys(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let raw = match &self.momentum {
            Some(m) => m.projector.forward(m.encoder.forward(x).view()),
            None => self.projector.forward(self.encoder.forward(x).view()),
        };
        Ok(normalize_rows(&raw, self.config.normalize_keys).0)
    }

    pub fn encode_key(&self, view: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, view.len()), view)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.encode_keys(x)?.row(0).to_vec())
    }

    pub fn pseudo_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<PseudoLabel>> {
        Ok(self
            .logits(x)?
            .outer_iter()
            .map(|row| PseudoLabel::from_logits(row.as_slice().expect("standard layout")))
            .collect())
    }

    pub fn pseudo_label(&self, view: &[f64]) -> Result<PseudoLabel> {
        let x = ArrayView2::from_shape((1, view.len()), view)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.pseudo_labels(x)?[0])
    }

    /// `slow = m * slow + (1 - m) * fast`, elementwise. No-op without copies.
    pub fn update_momentum(&mut self) {
        let Some(m) = self.momentum.as_mut() else {
            return;
        };
        let c = m.coefficient;
        let fast = self
            .encoder
            .params()
            .into_iter()
            .chain(self.projector.params());
        let slow = m
            .encoder
            .params_mut()
            .into_iter()
            .chain(m.projector.params_mut());
        for (s, f) in slow.zip(fast) {
            for (sv, fv) in s.data.iter_mut().zip(&f.data) {
                *sv = c * *sv + (1.0 - c) * fv;
            }
        }
    }

    fn momentum_names(&self) -> Vec<String> {
        let mut names = self.encoder.param_names("key_encoder");
        for i in 0..self.projector.layers.len() {
            names.push(format!("key_projector.{i}.weight"));
            names.push(format!("key_projector.{i}.bias"));
        }
        names
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, t) in self.param_names().into_iter().zip(self.params()) {
            ck.push_f32(name, &t.shape, &t.data);
        }
        if let Some(m) = &self.momentum {
            let slow = m.encoder.params().into_iter().chain(m.projector.params());
            for (name, t) in self.momentum_names().into_iter().zip(slow) {
                ck.push_f32(name, &t.shape, &t.data);
            }
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint, scope: LoadScope) -> Result<()> {
        fn fill(t: &mut Tensor, ck: &Checkpoint, name: &str) -> Result<()> {
            let field = ck
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks field {name}")))?;
            if field.shape != t.shape {
                return Err(Error::Shape(format!(
                    "field {name} has shape {:?}, model expects {:?}",
                    field.shape, t.shape
                )));
            }
            match &field.data {
                FieldData::F32(v) => t.data.copy_from_slice(v),
                FieldData::U64(_) => {
                    return Err(Error::Format(format!("field {name} is not a float field")))
                }
            }
            Ok(())
        }

        let names = self.param_names();
        let n_encoder = self.encoder.params().len();
        let momentum_names = self.momentum_names();
        for (i, t) in self.params_mut().into_iter().enumerate() {
            if scope == LoadScope::All || i < n_encoder {
                fill(t, ck, &names[i])?;
            }
        }
        let encoder = self.encoder.clone();
        if let Some(m) = self.momentum.as_mut() {
            match scope {
                LoadScope::All => {
                    let slow = m
                        .encoder
                        .params_mut()
                        .into_iter()
                        .chain(m.projector.params_mut());
                    for (t, name) in slow.zip(&momentum_names) {
                        fill(t, ck, name)?;
                    }
                }
                LoadScope::EncoderOnly => m.encoder = encoder,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dim: usize, l: usize, momentum: Option<f64>) -> ModelConfig {
        ModelConfig {
            input: InputShape::Vector { dim },
            num_categories: 3,
            encoder_widths: vec![8, 6],
            projector_hidden: 7,
            projector_dim: l,
            normalize_keys: true,
            key_momentum: momentum,
            freeze_encoder: false,
        }
    }

    #[test]
    fn query_shapes_and_norms() {
        for l in [16, 64] {
            let m = ModelBundle::new(config(4, l, None), 3).unwrap();
            let q = m.encode_query(&[0.1, -0.2, 0.3, 0.4]).unwrap();
            assert_eq!(q.len(), l);
            let n: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert_eq!(q, m.encode_query(&[0.1, -0.2, 0.3, 0.4]).unwrap());
        }
        let m = ModelBundle::new(config(4, 16, None), 3).unwrap();
        assert!(matches!(m.encode_query(&[1.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn shared_key_path_without_momentum() {
        let m = ModelBundle::new(config(4, 16, None), 5).unwrap();
        let x = [0.5, 0.1, -0.7, 0.2];
        assert_eq!(m.encode_key(&x).unwrap(), m.encode_query(&x).unwrap());
    }

    #[test]
    fn momentum_one_is_rejected() {
        assert!(ModelBundle::new(config(4, 16, Some(1.0)), 0).is_err());
        assert!(ModelBundle::new(config(4, 16, Some(-0.1)), 0).is_err());
        assert!(ModelBundle::new(config(4, 16, Some(0.0)), 0).is_ok());
    }

    #[test]
    fn momentum_update_is_elementwise_blend() {
        let mut m = ModelBundle::new(config(4, 16, Some(0.75)), 1).unwrap();
        for t in m.params_mut() {
            t.data.iter_mut().for_each(|v| *v = 2.0);
        }
        let mom = m.momentum.as_mut().unwrap();
        for t in mom
            .encoder
            .params_mut()
            .into_iter()
            .chain(mom.projector.params_mut())
        {
            t.data.iter_mut().for_each(|v| *v = -2.0);
        }
        m.update_momentum();
        let mom = m.momentum.as_ref().unwrap();
        for t in mom
            .encoder
            .params()
            .into_iter()
            .chain(mom.projector.params())
        {
            assert!(t.data.iter().all(|&v| v == 0.75 * -2.0 + 0.25 * 2.0));
        }
    }

    #[test]
    fn pseudo_label_from_logits() {
        let p = PseudoLabel::from_logits(&[2.0, 1.0, 0.5]);
        assert_eq!(p.category, 0);
        let e = std::f64::consts::E;
        let expected = e * e / (e * e + e + e.sqrt());
        assert!((p.confidence - expected).abs() < 1e-12);
        assert!((p.confidence - 0.6285).abs() < 1e-4);

        let tie = PseudoLabel::from_logits(&[0.3; 4]);
        assert_eq!(tie.category, 0);
        assert!((tie.confidence - 0.25).abs() < 1e-15);

        let sat = PseudoLabel::from_logits(&[40.0, 0.0, 0.0]);
        assert!(sat.confidence > 1.0 - 1e-12);
    }

    #[test]
    fn parameter_groups_partition() {
        let m = ModelBundle::new(config(4, 16, None), 0).unwrap();
        let g = m.parameter_groups();
        let total: usize = m.params().iter().map(|t| t.len()).sum();
        assert_eq!(g.pretrained.scalar_count + g.fresh.scalar_count, total);
        assert!(g.pretrained.names.iter().all(|n| n.starts_with("encoder.")));
        assert!(g.fresh.names.iter().all(|n| !n.starts_with("encoder.")));

        let mut frozen = config(4, 16, None);
        frozen.freeze_encoder = true;
        let m = ModelBundle::new(frozen, 0).unwrap();
        assert!(m.parameter_groups().pretrained.names.is_empty());
    }

    #[test]
    fn checkpoint_round_trip_within_f32() {
        let m = ModelBundle::new(config(4, 8, Some(0.9)), 2).unwrap();
        let ck = crate::checkpoint::Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap();
        let mut other = ModelBundle::new(config(4, 8, Some(0.9)), 99).unwrap();
        other.load_checkpoint(&ck, LoadScope::All).unwrap();
        for (a, b) in m.params().iter().zip(other.params()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let mut wrong = ModelBundle::new(config(5, 8, Some(0.9)), 2).unwrap();
        assert!(matches!(
            wrong.load_checkpoint(&ck, LoadScope::All),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn encoder_only_load_keeps_heads() {
        let src = ModelBundle::new(config(4, 8, Some(0.9)), 2).unwrap();
        let mut dst = ModelBundle::new(config(4, 8, Some(0.9)), 3).unwrap();
        let heads_before = dst.classifier.clone();
        dst.load_checkpoint(&src.to_checkpoint(), LoadScope::EncoderOnly)
            .unwrap();
        assert_eq!(dst.classifier, heads_before);
        assert_eq!(dst.momentum.as_ref().unwrap().encoder, dst.encoder);
    }

    #[test]
    fn image_encoder_shapes() {
        let cfg = ModelConfig {
            input: InputShape::Image {
                channels: 1,
                height: 4,
                width: 4,
            },
            num_categories: 2,
            encoder_widths: vec![3, 5],
            projector_hidden: 4,
            projector_dim: 6,
            normalize_keys: true,
            key_momentum: None,
            freeze_encoder: false,
        };
        let m = ModelBundle::new(cfg, 0).unwrap();
        let x = Array2::from_shape_fn((2, 16), |(i, j)| (i + j) as f64 / 10.0);
        assert_eq!(m.logits(x.view()).unwrap().dim(), (2, 2));
        assert_eq!(m.encode_queries(x.view()).unwrap().dim(), (2, 6));
    }
}
