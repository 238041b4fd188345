use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use selftune::config::ExperimentConfig;
use selftune::trainer::{Method, TrainReport};

const QUICK: &str = r#"{
  "train": {"epochs": 2, "base_lr": 0.01, "keys_per_category": 4, "projector_dim": 16,
            "projector_hidden": 16, "encoder_widths": [16], "key_momentum": 0.99},
  "dataset": {"source": {"kind": "gaussian_mixture", "num_categories": 3, "dim": 6,
                         "per_class": 20, "separation": 3.0},
              "labels": {"label_proportion": 0.2}, "test_fraction": 0.25},
  "seeds": [0, 1, 2]
}"#;

fn selftune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selftune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, QUICK).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_report_summary_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("run");
    let o = selftune(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "report.csv",
        "summary.json",
        "checkpoint.bin",
        "keystore.bin",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let ck = selftune::checkpoint::Checkpoint::load(out.join("checkpoint.bin")).unwrap();
    assert!(ck.get("classifier.weight").is_some());
    assert_eq!(
        TrainReport::read_csv(out.join("report.csv")).unwrap().len(),
        2
    );
}

#[test]
fn unknown_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let o = selftune(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn out_of_range_value_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = selftune(&[
        "train",
        "--config",
        s(&cfg),
        "--override",
        "train.temperature=0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("temperature"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("run");
    let o = selftune(&[
        "train",
        "--config",
        s(&cfg),
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["train"]["seed"], 7);
}

#[test]
fn overrides_reach_the_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("run");
    let o = selftune(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--override",
        "train.epochs=3",
        "--override",
        "method=fine_tune_only",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = TrainReport::read_csv(out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.loss_pgc_labeled == 0.0 && r.pseudo_coverage == 0.0));
}

#[test]
fn equal_configs_give_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        selftune(&["train", "--config", s(&cfg), "--out", s(&a)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        selftune(&["train", "--config", s(&cfg), "--out", s(&b)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        std::fs::read(a.join("report.csv")).unwrap(),
        std::fs::read(b.join("report.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("checkpoint.bin")).unwrap(),
        std::fs::read(b.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn ablate_writes_seven_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        selftune(&["ablate", "--config", s(&cfg), "--out", s(&a)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        selftune(&["ablate", "--config", s(&cfg), "--out", s(&b)])
            .status
            .code(),
        Some(0)
    );
    let csv = std::fs::read_to_string(a.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .ends_with("seed_0,seed_1,seed_2"));
    assert_eq!(
        csv,
        std::fs::read_to_string(b.join("ablation.csv")).unwrap()
    );
    assert!(a.join("ablation.png").is_file());
}

#[test]
fn ablate_without_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = selftune(&["ablate", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(selftune(&["ablate"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_the_grid_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("sweep");
    let o = selftune(&[
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--grid",
        "L=8,16;D=2,4",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let cells: Vec<f64> = csv
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.parse().unwrap())
                .collect::<Vec<f64>>()
        })
        .collect();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|a| (0.0..=1.0).contains(a)));
    assert!(out.join("sweep.png").is_file());
}

#[test]
fn malformed_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    for grid in ["L=8", "L=8;D=", "rows=1;D=2"] {
        let o = selftune(&["sweep", "--config", s(&cfg), "--grid", grid]);
        assert_eq!(o.status.code(), Some(2), "{grid}");
    }
}

#[test]
fn report_renders_curves_and_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let run = dir.path().join("run");
    assert_eq!(
        selftune(&["train", "--config", s(&cfg), "--out", s(&run)])
            .status
            .code(),
        Some(0)
    );
    let o = selftune(&["report", s(&run)]);
    assert_eq!(o.status.code(), Some(0));
    let pngs: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .collect();
    assert_eq!(pngs.len(), 2);

    let rows = TrainReport::read_csv(run.join("report.csv")).unwrap();
    let gap = std::fs::read_to_string(run.join("gap.csv")).unwrap();
    for (row, line) in rows.iter().zip(gap.lines().skip(1)) {
        let (epoch, g) = line.split_once(',').unwrap();
        assert_eq!(epoch.parse::<usize>().unwrap(), row.epoch);
        let g: f64 = g.parse().unwrap();
        assert_eq!(g, row.test_accuracy - row.pseudo_label_accuracy.unwrap());
    }
}

#[test]
fn report_on_empty_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(selftune(&["report", s(dir.path())]).status.code(), Some(2));
}

fn method() -> impl Strategy<Value = Method> {
    prop_oneof![
        Just(Method::SelfTuning),
        Just(Method::PseudoLabelCe),
        Just(Method::ContrastiveCl),
        Just(Method::FineTuneOnly),
    ]
}

proptest! {
    #[test]
    fn config_round_trips(
        method in method(),
        tau in 0.01f64..1.0,
        d in 1usize..64,
        l in 1usize..128,
        lr in 1e-5f64..1.0,
        t in 0.0f64..=1.0,
        seed in any::<u64>(),
        momentum in proptest::option::of(0.0f64..0.9999),
        flags in any::<(bool, bool, bool)>(),
        seeds in proptest::collection::vec(any::<u64>(), 1..5),
    ) {
        let mut c = ExperimentConfig::default();
        c.train.method = method;
        c.train.temperature = tau;
        c.train.keys_per_category = d;
        c.train.projector_dim = l;
        c.train.base_lr = lr;
        c.train.threshold = t;
        c.train.seed = seed;
        c.train.key_momentum = momentum;
        (c.train.disable_pgc_labeled, c.train.disable_pgc_unlabeled, c.train.separate_queues) = flags;
        c.seeds = seeds;
        let once = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&once, &c);
        let twice = ExperimentConfig::from_json(&once.to_json()).unwrap();
        prop_assert_eq!(twice, once);
    }
}
