mod common;

use common::rel_err;
use ndarray::Array2;
use rand::Rng;
use selftune::keystore::KeyStore;
use selftune::losses::{cross_entropy_with_logits, pgc, pgc_query_grad, ContrastInstance};
use selftune::model::{Gradients, InputShape, ModelBundle, ModelConfig, PseudoLabel};

const H: f64 = 1e-5;

fn config(
    input: InputShape,
    widths: Vec<usize>,
    momentum: Option<f64>,
    normalize: bool,
) -> ModelConfig {
    ModelConfig {
        input,
        num_categories: 3,
        encoder_widths: widths,
        projector_hidden: 5,
        projector_dim: 4,
        normalize_keys: normalize,
        key_momentum: momentum,
        freeze_encoder: false,
    }
}

fn batch(rng: &mut rand_chacha::ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_vec((n, dim), common::gaussian(rng, n * dim)).unwrap()
}

fn row(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

/// Mean CE on the query view plus mean group contrast against `store`, with
/// the supplied keys and categories held fixed.
fn objective(
    bundle: &ModelBundle,
    xq: &Array2<f64>,
    keys: &Array2<f64>,
    cats: &[usize],
    store: &KeyStore,
    ce: bool,
) -> f64 {
    let pass = bundle.forward_query(xq.view()).unwrap();
    let n = cats.len() as f64;
    let mut total = 0.0;
    for (i, &c) in cats.iter().enumerate() {
        if ce {
            total += cross_entropy_with_logits(&row(&pass.logits, i), c)
                .unwrap()
                .0
                / n;
        }
        let (q, k) = (row(&pass.queries, i), row(keys, i));
        let inst = ContrastInstance::from_store(&q, &k, store, c, 0.5).unwrap();
        total += pgc(&inst).unwrap() / n;
    }
    total
}

fn analytic(
    bundle: &ModelBundle,
    xq: &Array2<f64>,
    keys: &Array2<f64>,
    cats: &[usize],
    store: &KeyStore,
    ce: bool,
) -> Gradients {
    let pass = bundle.forward_query(xq.view()).unwrap();
    let n = cats.len() as f64;
    let mut dlogits = Array2::zeros(pass.logits.raw_dim());
    let mut dq = Array2::zeros(pass.queries.raw_dim());
    for (i, &c) in cats.iter().enumerate() {
        let g = cross_entropy_with_logits(&row(&pass.logits, i), c)
            .unwrap()
            .1;
        dlogits.row_mut(i).assign(&(ndarray::Array1::from(g) / n));
        let (q, k) = (row(&pass.queries, i), row(keys, i));
        let inst = ContrastInstance::from_store(&q, &k, store, c, 0.5).unwrap();
        let g = pgc_query_grad(&inst).unwrap().1;
        dq.row_mut(i).assign(&(ndarray::Array1::from(g) / n));
    }
    bundle.backward_query(&pass, ce.then_some(&dlogits), Some(&dq))
}

/// Finite differences over every parameter; `f` sees the perturbed bundle.
fn numeric(bundle: &ModelBundle, mut f: impl FnMut(&ModelBundle) -> f64) -> Vec<f64> {
    let mut b = bundle.clone();
    let sizes: Vec<usize> = b.params().iter().map(|t| t.data.len()).collect();
    let mut out = Vec::new();
    for (p, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = b.params()[p].data[j];
            b.params_mut()[p].data[j] = orig + H;
            let up = f(&b);
            b.params_mut()[p].data[j] = orig - H;
            let down = f(&b);
            b.params_mut()[p].data[j] = orig;
            out.push((up - down) / (2.0 * H));
        }
    }
    out
}

fn flat(g: &Gradients) -> Vec<f64> {
    g.0.iter().flat_map(|t| t.data.iter().copied()).collect()
}

#[test]
fn bundle_gradients_match_finite_differences() {
    let mut rng = common::rng(1);
    let vector = InputShape::Vector { dim: 6 };
    let image = InputShape::Image {
        channels: 2,
        height: 4,
        width: 4,
    };
    for (shape, widths) in [(vector, vec![7, 5]), (image, vec![3])] {
        for momentum in [None, Some(0.9)] {
            for normalize in [true, false] {
                let bundle = ModelBundle::new(
                    config(shape, widths.clone(), momentum, normalize),
                    rng.gen(),
                )
                .unwrap();
                let store = KeyStore::new(3, 2, 4, rng.gen()).unwrap();
                let xq = batch(&mut rng, 5, shape.flat_dim());
                let xk = batch(&mut rng, 5, shape.flat_dim());
                let keys = bundle.encode_keys(xk.view()).unwrap();
                let cats: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
                let a = flat(&analytic(&bundle, &xq, &keys, &cats, &store, true));
                let n = numeric(&bundle, |b| objective(b, &xq, &keys, &cats, &store, true));
                let e = rel_err(&a, &n);
                assert!(
                    e <= 1e-4,
                    "{shape:?} momentum {momentum:?} normalize {normalize}: {e}"
                );
            }
        }
    }
}

#[test]
fn momentum_keys_do_not_depend_on_fast_parameters() {
    let mut rng = common::rng(2);
    let shape = InputShape::Vector { dim: 6 };
    let bundle = ModelBundle::new(config(shape, vec![7, 5], Some(0.99), true), 3).unwrap();
    let store = KeyStore::new(3, 2, 4, 4).unwrap();
    let xq = batch(&mut rng, 4, 6);
    let xk = batch(&mut rng, 4, 6);
    let cats = [0, 1, 2, 1];
    let keys = bundle.encode_keys(xk.view()).unwrap();
    // keys recomputed inside the perturbed evaluation
    let inside = numeric(&bundle, |b| {
        let k = b.encode_keys(xk.view()).unwrap();
        assert_eq!(k, keys);
        objective(b, &xq, &k, &cats, &store, false)
    });
    let outside = numeric(&bundle, |b| objective(b, &xq, &keys, &cats, &store, false));
    assert_eq!(inside, outside);
    let a = flat(&analytic(&bundle, &xq, &keys, &cats, &store, false));
    assert!(rel_err(&a, &outside) <= 1e-4);
}

#[test]
fn shared_key_path_is_cut_from_the_update() {
    let mut rng = common::rng(3);
    let shape = InputShape::Vector { dim: 6 };
    let bundle = ModelBundle::new(config(shape, vec![7, 5], None, true), 5).unwrap();
    let store = KeyStore::new(3, 2, 4, 6).unwrap();
    let xq = batch(&mut rng, 4, 6);
    let xk = batch(&mut rng, 4, 6);
    let cats = [0, 1, 2, 0];
    let keys = bundle.encode_keys(xk.view()).unwrap();
    assert_eq!(keys, bundle.encode_queries(xk.view()).unwrap());
    let a = flat(&analytic(&bundle, &xq, &keys, &cats, &store, false));
    let detached = numeric(&bundle, |b| objective(b, &xq, &keys, &cats, &store, false));
    assert!(rel_err(&a, &detached) <= 1e-4);
    // differentiating through the key of a second view would change the step
    let through = numeric(&bundle, |b| {
        let k = b.encode_keys(xk.view()).unwrap();
        objective(b, &xq, &k, &cats, &store, false)
    });
    assert!(rel_err(&a, &through) > 1e-3);
}

#[test]
fn pseudo_label_selection_carries_no_gradient() {
    let mut rng = common::rng(4);
    let shape = InputShape::Vector { dim: 6 };
    let bundle = ModelBundle::new(config(shape, vec![7, 5], Some(0.9), true), 8).unwrap();
    let store = KeyStore::new(3, 2, 4, 9).unwrap();
    let x = batch(&mut rng, 6, 6);
    let keys = bundle.encode_keys(batch(&mut rng, 6, 6).view()).unwrap();
    let fixed: Vec<usize> = bundle
        .pseudo_labels(x.view())
        .unwrap()
        .iter()
        .map(|p| p.category)
        .collect();
    let recomputed = numeric(&bundle, |b| {
        let cats: Vec<usize> = b
            .pseudo_labels(x.view())
            .unwrap()
            .iter()
            .map(|p| p.category)
            .collect();
        objective(b, &x, &keys, &cats, &store, false)
    });
    let held = numeric(&bundle, |b| objective(b, &x, &keys, &fixed, &store, false));
    assert_eq!(recomputed, held);
    let a = flat(&analytic(&bundle, &x, &keys, &fixed, &store, false));
    assert!(rel_err(&a, &held) <= 1e-4);
}

#[test]
fn frozen_encoder_gets_zero_gradient() {
    let mut rng = common::rng(5);
    let shape = InputShape::Vector { dim: 6 };
    let cfg = ModelConfig {
        freeze_encoder: true,
        ..config(shape, vec![7, 5], None, true)
    };
    let bundle = ModelBundle::new(cfg, 1).unwrap();
    let store = KeyStore::new(3, 2, 4, 1).unwrap();
    let x = batch(&mut rng, 3, 6);
    let keys = bundle.encode_keys(x.view()).unwrap();
    let g = analytic(&bundle, &x, &keys, &[0, 1, 2], &store, true);
    let groups = bundle.parameter_groups();
    assert!(groups.pretrained.indices.is_empty());
    let names = bundle.param_names();
    for (name, t) in names.iter().zip(&g.0) {
        if name.starts_with("encoder.") {
            assert!(t.data.iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn query_encoding_contract() {
    let mut rng = common::rng(6);
    for l in [16, 64] {
        let cfg = ModelConfig {
            projector_dim: l,
            ..config(InputShape::Vector { dim: 6 }, vec![8], Some(0.999), true)
        };
        let bundle = ModelBundle::new(cfg.clone(), 2).unwrap();
        let x = common::gaussian(&mut rng, 6);
        let q = bundle.encode_query(&x).unwrap();
        assert_eq!(q.len(), l);
        assert!((q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(
            q,
            ModelBundle::new(cfg, 2).unwrap().encode_query(&x).unwrap()
        );
        assert_eq!(
            bundle
                .logits(ndarray::Array2::from_shape_vec((1, 6), x).unwrap().view())
                .unwrap()
                .ncols(),
            3
        );
    }
}

#[test]
fn one_hot_logits_give_back_the_label() {
    for y in 0..4 {
        let mut z = vec![0.0; 4];
        z[y] = 40.0;
        let p = PseudoLabel::from_logits(&z);
        assert_eq!(p.category, y);
        assert!(p.confidence > 1.0 - 1e-12);
    }
    let p = PseudoLabel::from_logits(&[2.0, 1.0, 0.5]);
    assert_eq!(p.category, 0);
    let e = [2f64.exp(), 1f64.exp(), 0.5f64.exp()];
    assert!((p.confidence - e[0] / e.iter().sum::<f64>()).abs() < 1e-12);
    assert!((p.confidence - 0.6285).abs() < 1e-4);
}

#[test]
fn fitted_classifier_pseudo_labels_agree_with_ground_truth() {
    use selftune::datagen::{make_gaussian_mixture, split_label_proportion};
    use selftune::trainer::{train_with_state, Method, TrainConfig};
    let data = make_gaussian_mixture(3, 6, 40, 8.0, 3).unwrap();
    let split = split_label_proportion(&data, 1.0, 0.25, 3).unwrap();
    let config = TrainConfig {
        method: Method::FineTuneOnly,
        epochs: 30,
        base_lr: 0.01,
        ..TrainConfig::default()
    };
    let (_, state) = train_with_state(&config, &split, None).unwrap();
    let pseudo = state
        .bundle
        .pseudo_labels(split.labeled.inputs.view())
        .unwrap();
    let labels = split.labeled.labels().unwrap();
    assert!(pseudo.iter().zip(labels).all(|(p, &y)| p.category == y));
}
