//! Datasets, stratified label splits and two-view augmentation.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::InputShape;
use crate::rng;

/// Slack for floating-point products such as `0.15 * 20` before flooring.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Full,
    Labeled,
    Unlabeled,
    Test,
}

/// Examples with category indices.
///
/// Unlabeled sets keep their ground truth so pseudo-label accuracy can be
/// measured, but [`Dataset::labels`] withholds it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    ground_truth: Vec<usize>,
    /// Row indices into the dataset this one was split from.
    pub source_indices: Vec<usize>,
    pub num_categories: usize,
    pub shape: InputShape,
    pub role: Role,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        num_categories: usize,
        shape: InputShape,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.ncols() != shape.flat_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} columns, shape implies {}",
                inputs.ncols(),
                shape.flat_dim()
            )));
        }
        if num_categories < 2 {
            return invalid("num_categories must be >= 2");
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_categories) {
            return invalid(format!(
                "label {bad} out of range for {num_categories} categories"
            ));
        }
        let n = labels.len();
        Ok(Self {
            inputs,
            ground_truth: labels,
            source_indices: (0..n).collect(),
            num_categories,
            shape,
            role: Role::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Labels visible to a learner; `None` for the unlabeled role.
    pub fn labels(&self) -> Option<&[usize]> {
        match self.role {
            Role::Unlabeled => None,
            _ => Some(&self.ground_truth),
        }
    }

    /// Ground truth regardless of role. Reserved for evaluation.
    pub fn retained_labels(&self) -> &[usize] {
        &self.ground_truth
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    fn subset(&self, rows: &[usize], role: Role) -> Self {
        let d = self.input_dim();
        let mut inputs = Array2::zeros((rows.len(), d));
        for (out, &r) in rows.iter().enumerate() {
            inputs.row_mut(out).assign(&self.inputs.row(r));
        }
        Self {
            inputs,
            ground_truth: rows.iter().map(|&r| self.ground_truth[r]).collect(),
            source_indices: rows.iter().map(|&r| self.source_indices[r]).collect(),
            num_categories: self.num_categories,
            shape: self.shape,
            role,
        }
    }

    /// Writes `f0..f{d-1},label` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, y) in self.inputs.outer_iter().zip(&self.ground_truth) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`]; the last column is the
    /// label. `num_categories` defaults to `max label + 1`.
    pub fn read_csv(path: impl AsRef<Path>, num_categories: Option<usize>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Format(format!(
                    "row {line} has fewer than two columns"
                )));
            }
            let d = rec.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::Format(format!(
                    "row {line} has {} columns",
                    rec.len()
                )));
            }
            for field in rec.iter().take(d) {
                values.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("row {line}: bad feature {field:?}: {e}"))
                })?);
            }
            let y = rec[d].trim();
            labels.push(
                y.parse::<usize>()
                    .map_err(|e| Error::Format(format!("row {line}: bad label {y:?}: {e}")))?,
            );
        }
        let dim = dim.ok_or_else(|| Error::Format("CSV has no data rows".into()))?;
        let c = num_categories.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let inputs = Array2::from_shape_vec((labels.len(), dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(inputs, labels, c, InputShape::Vector { dim })
    }

    /// Loads a directory of raw images. Each file starts with an ASCII line
    /// `channels height width category` followed by `channels*height*width`
    /// row-major bytes. Files are read in name order; pixels scale to `[0, 1]`.
    pub fn read_image_dir(dir: impl AsRef<Path>, num_categories: Option<usize>) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut shape = None;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for p in &paths {
            let bytes = fs::read(p)?;
            let nl = bytes
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format(format!("{}: missing header line", p.display())))?;
            let header = std::str::from_utf8(&bytes[..nl])
                .map_err(|_| Error::Format(format!("{}: header is not ASCII", p.display())))?;
            let nums = header
                .split_whitespace()
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("{}: bad header: {e}", p.display())))?;
            let [c, h, w, y] = nums[..] else {
                return Err(Error::Format(format!(
                    "{}: header needs `channels height width category`",
                    p.display()
                )));
            };
            let s = InputShape::Image {
                channels: c,
                height: h,
                width: w,
            };
            if *shape.get_or_insert(s) != s {
                return Err(Error::Format(format!(
                    "{}: image shape differs",
                    p.display()
                )));
            }
            let body = &bytes[nl + 1..];
            if body.len() != c * h * w {
                return Err(Error::Format(format!(
                    "{}: expected {} pixel bytes, found {}",
                    p.display(),
                    c * h * w,
                    body.len()
                )));
            }
            values.extend(body.iter().map(|&b| b as f64 / 255.0));
            labels.push(y);
        }
        let shape = shape.ok_or_else(|| Error::Format("image directory is empty".into()))?;
        let cnum = num_categories.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let inputs = Array2::from_shape_vec((labels.len(), shape.flat_dim()), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(inputs, labels, cnum, shape)
    }

    /// Writes one file per image in the format read by
    /// [`Dataset::read_image_dir`]; pixel values are clamped to `[0, 1]`.
    pub fn write_image_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let InputShape::Image {
            channels,
            height,
            width,
        } = self.shape
        else {
            return invalid("dataset does not hold images");
        };
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (i, (row, y)) in self.inputs.outer_iter().zip(&self.ground_truth).enumerate() {
            let mut f = fs::File::create(dir.join(format!("{i:06}.img")))?;
            writeln!(f, "{channels} {height} {width} {y}")?;
            let bytes: Vec<u8> = row
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            f.write_all(&bytes)?;
        }
        Ok(())
    }
}

/// `C` orthonormal directions when `C <= dim`, otherwise independent random
/// unit vectors.
fn unit_centers(c: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
    while centers.len() < c {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if c <= dim {
            for u in &centers {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            centers.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    centers
}

/// Balanced mixture of isotropic unit-variance Gaussians around seeded unit
/// centers scaled by `separation`. Rows are grouped by category.
pub fn make_gaussian_mixture(
    num_categories: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_categories < 2 || dim == 0 || per_class == 0 {
        return invalid("need num_categories >= 2, dim >= 1, per_class >= 1");
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return invalid(format!("separation must be positive, got {separation}"));
    }
    let mut rng = rng::stream(seed, &[rng::tag::DATA]);
    let centers = unit_centers(num_categories, dim, &mut rng);
    let n = num_categories * per_class;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..per_class {
            let mut row = inputs.row_mut(c * per_class + k);
            for (x, m) in row.iter_mut().zip(center) {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *x = separation * m + noise;
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, num_categories, InputShape::Vector { dim })
}

/// Labeled, unlabeled and test partitions of one dataset.
#[derive(Debug, Clone)]
pub struct Split {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelBudget {
    /// `floor(p * n_c)` labels per category, at least one.
    Proportion(f64),
    /// `k` labels per category, capped by the category's pool.
    PerClass(usize),
}

fn floor_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + FLOOR_SLACK).floor() as usize
}

/// Stratified split: per category, `floor(test_fraction * n)` rows go to test,
/// then the label budget is taken from the remaining pool and the rest is
/// unlabeled.
pub fn split(data: &Dataset, budget: LabelBudget, test_fraction: f64, seed: u64) -> Result<Split> {
    match budget {
        LabelBudget::Proportion(p) if !(p > 0.0 && p <= 1.0) => {
            return invalid(format!("label proportion must lie in (0, 1], got {p}"))
        }
        LabelBudget::PerClass(0) => return invalid("labels per class must be positive"),
        _ => {}
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_categories];
    for (i, &y) in data.ground_truth.iter().enumerate() {
        by_class[y].push(i);
    }
    let (mut lab, mut unl, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng::stream(seed, &[rng::tag::SPLIT, c as u64]));
        let n_test = floor_count(test_fraction, rows.len()).min(rows.len() - 1);
        let (t, pool) = rows.split_at(n_test);
        let n_lab = match budget {
            LabelBudget::Proportion(p) => floor_count(p, pool.len()).max(1),
            LabelBudget::PerClass(k) => k,
        }
        .min(pool.len());
        test.extend_from_slice(t);
        lab.extend_from_slice(&pool[..n_lab]);
        unl.extend_from_slice(&pool[n_lab..]);
    }
    for v in [&mut lab, &mut unl, &mut test] {
        v.sort_unstable();
    }
    Ok(Split {
        labeled: data.subset(&lab, Role::Labeled),
        unlabeled: data.subset(&unl, Role::Unlabeled),
        test: data.subset(&test, Role::Test),
    })
}

pub fn split_label_proportion(
    data: &Dataset,
    proportion: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    split(
        data,
        LabelBudget::Proportion(proportion),
        test_fraction,
        seed,
    )
}

pub fn split_labels_per_class(
    data: &Dataset,
    labels_per_class: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    split(
        data,
        LabelBudget::PerClass(labels_per_class),
        test_fraction,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Adds `N(0, strength^2)` noise to every coordinate.
    GaussianNoise,
    /// Zeroes each coordinate with probability `strength`.
    CoordinateDropout,
    /// Shifts an image by up to `strength` pixels per axis (zero fill) and
    /// mirrors it horizontally with probability 1/2.
    RandomCropFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub kind: AugmentKind,
    pub strength: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentationPolicy {
    pub fn new(kind: AugmentKind, strength: f64, seed: u64) -> Self {
        Self {
            kind,
            strength,
            seed,
        }
    }

    pub fn validate(&self, shape: InputShape) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return invalid(format!(
                "augmentation strength must be >= 0, got {}",
                self.strength
            ));
        }
        match (self.kind, shape) {
            (AugmentKind::CoordinateDropout, _) if self.strength > 1.0 => {
                invalid("dropout probability must be <= 1")
            }
            (AugmentKind::RandomCropFlip, InputShape::Vector { .. }) => {
                invalid("random_crop_flip needs image inputs")
            }
            _ => Ok(()),
        }
    }

    /// Applies the transform with randomness keyed by `path`.
    pub fn apply(&self, x: &[f64], shape: InputShape, path: &[u64]) -> Vec<f64> {
        if self.strength == 0.0 {
            return x.to_vec();
        }
        let mut full = vec![rng::tag::VIEW];
        full.extend_from_slice(path);
        let mut rng = rng::stream(self.seed, &full);
        match self.kind {
            AugmentKind::GaussianNoise => {
                let normal = Normal::new(0.0, self.strength).expect("validated strength");
                x.iter().map(|v| v + normal.sample(&mut rng)).collect()
            }
            AugmentKind::CoordinateDropout => x
                .iter()
                .map(|&v| if rng.gen_bool(self.strength) { 0.0 } else { v })
                .collect(),
            AugmentKind::RandomCropFlip => {
                let InputShape::Image {
                    channels,
                    height,
                    width,
                } = shape
                else {
                    return x.to_vec();
                };
                let s = self.strength.round() as i64;
                let dy = rng.gen_range(-s..=s);
                let dx = rng.gen_range(-s..=s);
                let flip = rng.gen_bool(0.5);
                let mut out = vec![0.0; x.len()];
                for c in 0..channels {
                    for y in 0..height as i64 {
                        let sy = y - dy;
                        if sy < 0 || sy >= height as i64 {
                            continue;
                        }
                        for xo in 0..width as i64 {
                            let xs = if flip { width as i64 - 1 - xo } else { xo } - dx;
                            if xs < 0 || xs >= width as i64 {
                                continue;
                            }
                            out[(c * height + y as usize) * width + xo as usize] =
                                x[(c * height + sy as usize) * width + xs as usize];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Two independently drawn views of one example.
pub fn two_views(
    first: &AugmentationPolicy,
    second: &AugmentationPolicy,
    x: &[f64],
    shape: InputShape,
    path: &[u64],
) -> (Vec<f64>, Vec<f64>) {
    let mut p1 = path.to_vec();
    p1.push(1);
    let mut p2 = path.to_vec();
    p2.push(2);
    (first.apply(x, shape, &p1), second.apply(x, shape, &p2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_is_seeded_and_balanced() {
        let a = make_gaussian_mixture(3, 4, 10, 5.0, 1).unwrap();
        assert_eq!(a, make_gaussian_mixture(3, 4, 10, 5.0, 1).unwrap());
        assert_eq!(a.len(), 30);
        for c in 0..3 {
            assert_eq!(a.retained_labels().iter().filter(|&&y| y == c).count(), 10);
        }
        assert!(make_gaussian_mixture(3, 4, 10, 0.0, 1).is_err());
        assert!(make_gaussian_mixture(1, 4, 10, 1.0, 1).is_err());
    }

    #[test]
    fn proportion_flooring() {
        // 25 per class, 20% test -> pools of 20, 15% of 20 = 3 labels each
        let d = make_gaussian_mixture(4, 3, 25, 3.0, 0).unwrap();
        let s = split_label_proportion(&d, 0.15, 0.2, 0).unwrap();
        assert_eq!(s.labeled.len(), 12);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.unlabeled.len(), 68);
        assert!(s.unlabeled.labels().is_none());
        assert!(s.labeled.labels().is_some());
        for c in 0..4 {
            assert!(s.labeled.retained_labels().contains(&c));
        }
    }

    #[test]
    fn full_proportion_leaves_nothing_unlabeled() {
        let d = make_gaussian_mixture(2, 2, 10, 3.0, 0).unwrap();
        let s = split_label_proportion(&d, 1.0, 0.3, 0).unwrap();
        assert!(s.unlabeled.is_empty());
        assert!(split_label_proportion(&d, 0.0, 0.3, 0).is_err());
        assert!(split_label_proportion(&d, 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn minimum_one_label_per_class() {
        let d = make_gaussian_mixture(5, 2, 6, 3.0, 2).unwrap();
        let s = split_label_proportion(&d, 0.01, 0.2, 0).unwrap();
        assert_eq!(s.labeled.len(), 5);
        let k = split_labels_per_class(&d, 4, 0.2, 0).unwrap();
        assert_eq!(k.labeled.len(), 20);
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = [0.5, -1.0, 2.0, 0.25];
        let shape = InputShape::Vector { dim: 4 };
        for kind in [AugmentKind::GaussianNoise, AugmentKind::CoordinateDropout] {
            let p = AugmentationPolicy::new(kind, 0.0, 3);
            let (a, b) = two_views(&p, &p, &x, shape, &[0]);
            assert_eq!(a, x);
            assert_eq!(b, x);
        }
    }

    #[test]
    fn views_are_reproducible_and_distinct() {
        let x = [0.0; 6];
        let shape = InputShape::Vector { dim: 6 };
        let p = AugmentationPolicy::new(AugmentKind::GaussianNoise, 0.5, 3);
        let (a, b) = two_views(&p, &p, &x, shape, &[4, 2]);
        assert_eq!(
            (a.clone(), b.clone()),
            two_views(&p, &p, &x, shape, &[4, 2])
        );
        assert_ne!(a, b);
    }

    #[test]
    fn crop_flip_moves_pixels() {
        let shape = InputShape::Image {
            channels: 1,
            height: 3,
            width: 3,
        };
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let p = AugmentationPolicy::new(AugmentKind::RandomCropFlip, 1.0, 0);
        let views: Vec<_> = (0..20).map(|i| p.apply(&x, shape, &[i])).collect();
        assert!(views.iter().any(|v| v != &x));
        assert!(p.validate(InputShape::Vector { dim: 9 }).is_err());
        assert!(p.validate(shape).is_ok());
    }
}
