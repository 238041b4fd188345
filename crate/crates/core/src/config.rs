//! Experiment configuration: one JSON document holding the training config,
//! the dataset recipe, the output directory and the seed list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::datagen::{make_gaussian_mixture, split, Dataset, LabelBudget, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::{pretrain_encoder, TrainConfig};

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    GaussianMixture {
        num_categories: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        /// Defaults to a stream of the training seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_categories: Option<usize>,
    },
    ImageDir {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_categories: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelSpec {
    LabelProportion(f64),
    LabelsPerClass(usize),
}

impl From<LabelSpec> for LabelBudget {
    fn from(s: LabelSpec) -> Self {
        match s {
            LabelSpec::LabelProportion(p) => LabelBudget::Proportion(p),
            LabelSpec::LabelsPerClass(k) => LabelBudget::PerClass(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub labels: LabelSpec,
    pub test_fraction: f64,
    /// Defaults to a stream of the training seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::GaussianMixture {
                num_categories: 8,
                dim: 32,
                per_class: 60,
                separation: 3.0,
                seed: None,
            },
            labels: LabelSpec::LabelProportion(0.1),
            test_fraction: 0.25,
            split_seed: None,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match &self.source {
            DataSource::GaussianMixture {
                num_categories,
                dim,
                per_class,
                separation,
                seed: data_seed,
            } => make_gaussian_mixture(
                *num_categories,
                *dim,
                *per_class,
                *separation,
                data_seed.unwrap_or_else(|| rng::derive_seed(seed, &[rng::tag::DATA])),
            ),
            DataSource::Csv {
                path,
                num_categories,
            } => Dataset::read_csv(path, *num_categories),
            DataSource::ImageDir {
                path,
                num_categories,
            } => Dataset::read_image_dir(path, *num_categories),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Split> {
        let data = self.load(seed)?;
        let split_seed = self
            .split_seed
            .unwrap_or_else(|| rng::derive_seed(seed, &[rng::tag::SPLIT]));
        split(&data, self.labels.into(), self.test_fraction, split_seed)
    }
}

/// Supervised pretraining on a synthetic source task before the target run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub source: DataSource,
    pub epochs: usize,
    pub lr: f64,
}

/// L and D axes of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub projector_dims: Vec<usize>,
    pub keys_per_category: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            projector_dims: vec![16, 32, 64],
            keys_per_category: vec![4, 8, 16],
        }
    }
}

impl GridSpec {
    /// Parses `L=16,32,64;D=4,8,16`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("grid spec {spec:?}: {why}"));
        let (mut ls, mut ds) = (None, None);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (axis, values) = part
                .split_once('=')
                .ok_or_else(|| bad("expected AXIS=v1,v2,..."))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&format!("axis {axis}: {e}")))?;
            if values.is_empty() || values.contains(&0) {
                return Err(bad(&format!("axis {axis} needs positive values")));
            }
            match axis.trim() {
                "L" => ls = Some(values),
                "D" => ds = Some(values),
                other => return Err(bad(&format!("unknown axis {other:?}, expected L or D"))),
            }
        }
        match (ls, ds) {
            (Some(projector_dims), Some(keys_per_category)) => Ok(Self {
                projector_dims,
                keys_per_category,
            }),
            _ => Err(bad("both L and D axes are required")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
    pub out_dir: PathBuf,
    /// Training seeds of the ablation suite.
    pub seeds: Vec<u64>,
    pub grid: GridSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            pretrain: None,
            out_dir: PathBuf::from("runs/default"),
            seeds: vec![0, 1, 2],
            grid: GridSpec::default(),
        }
    }
}

const TOP_LEVEL: [&str; 6] = ["train", "dataset", "pretrain", "out_dir", "seeds", "grid"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads the file and applies `KEY=VALUE` overrides before parsing.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: malformed JSON: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Runs the configured pretraining on its source task, if any. The source
    /// must match the input shape of `split`.
    pub fn pretrained(&self, split: &Split) -> Result<Option<Checkpoint>> {
        let Some(p) = &self.pretrain else {
            return Ok(None);
        };
        let spec = DatasetSpec {
            source: p.source.clone(),
            ..self.dataset.clone()
        };
        let source = spec.load(rng::derive_seed(self.train.seed, &[rng::tag::PRETRAIN]))?;
        if source.shape != split.labeled.shape {
            return Err(Error::Config(format!(
                "pretrain.source: input shape {:?} differs from the dataset's {:?}",
                source.shape, split.labeled.shape
            )));
        }
        log::info!("pretraining encoder for {} epochs", p.epochs);
        pretrain_encoder(&self.train, &source, p.epochs, p.lr, self.train.seed).map(Some)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dataset.test_fraction: must lie in (0, 1), got {}",
                self.dataset.test_fraction
            )));
        }
        if let Some(p) = &self.pretrain {
            if !(p.lr > 0.0) {
                return Err(Error::Config("pretrain.lr: must be > 0".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must be non-empty".into()));
        }
        Ok(())
    }
}

/// Sets a dotted path to a JSON value. `VALUE` is parsed as JSON and falls
/// back to a plain string; a bare key that is not top-level addresses `train`.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!(
            "override {assignment:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut path: Vec<&str> = key.split('.').collect();
    if path.len() == 1 && !TOP_LEVEL.contains(&path[0]) {
        path.insert(0, "train");
    }
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::Config(format!(
                    "override {key}: {} is not an object",
                    path[..i].join(".")
                )));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == path.len() {
            map.insert(seg.to_string(), value);
            return Ok(());
        }
        node = map.entry(seg.to_string()).or_insert(Value::Null);
    }
    unreachable!("path is non-empty")
}
