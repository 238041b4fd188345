//! `selftune` command line: `train`, `ablate`, `sweep` and `report`.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or arguments, 1 for
//! failures while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, GridSpec};
use crate::datagen::Split;
use crate::error::Error;
use crate::plot;
use crate::trainer::{
    checkpoint_of, run_ablation_suite, run_sensitivity_sweep, train_with_state, Queues, TrainReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "selftune",
    version,
    about = "Semi-supervised fine-tuning with a shared class-partitioned key queue"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write report.csv, summary.json and checkpoint.bin.
    Train(RunArgs),
    /// Run the seven loss and queue variants over the configured seeds.
    Ablate(RunArgs),
    /// Final accuracy over a grid of projector sizes and queue sizes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Grid as `L=16,32,64;D=4,8,16`; defaults to the config's grid.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Render accuracy and gap curves from a run directory's report.csv.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `KEY=VALUE` with a dotted key, e.g. `train.epochs=5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Sweep { run, grid } => cmd_sweep(&run, grid.as_deref()),
        Command::Report { run_dir } => cmd_report(&run_dir),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Config(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            f.exit_code()
        }
    }
}

pub fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    let mut config = ExperimentConfig::load(&args.config, &overrides).map_err(config_err)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

struct Prepared {
    config: ExperimentConfig,
    split: Split,
    pretrained: Option<Checkpoint>,
}

fn prepare(args: &RunArgs) -> Result<Prepared, Failure> {
    let config = load_config(args)?;
    let split = config
        .dataset
        .build(config.train.seed)
        .map_err(config_err)?;
    let pretrained = config.pretrained(&split).map_err(|e| match e {
        Error::Config(_) => config_err(e),
        e => runtime_err(e),
    })?;
    fs::create_dir_all(&config.out_dir).map_err(runtime_err)?;
    Ok(Prepared {
        config,
        split,
        pretrained,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn summary_json(report: &TrainReport) -> serde_json::Value {
    json!({
        "method": report.method,
        "seed": report.seed,
        "epochs": report.rows.len(),
        "final_test_accuracy": report.final_test_accuracy(),
        "final_pseudo_label_accuracy": report.final_pseudo_label_accuracy(),
        "mean_gap": report.mean_gap(),
    })
}

pub fn cmd_train(args: &RunArgs) -> Outcome {
    let p = prepare(args)?;
    let out = &p.config.out_dir;
    log::info!(
        "training {} with seed {}",
        p.config.train.method,
        p.config.train.seed
    );
    let (report, state) =
        train_with_state(&p.config.train, &p.split, p.pretrained.as_ref()).map_err(runtime_err)?;
    report
        .write_csv(out.join("report.csv"))
        .map_err(runtime_err)?;
    let mut summary = summary_json(&report);
    summary["config"] = serde_json::to_value(&p.config).map_err(runtime_err)?;
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(runtime_err)?,
    )?;
    checkpoint_of(&state, &p.config.train)
        .save(out.join("checkpoint.bin"))
        .map_err(runtime_err)?;
    match &state.queues {
        Queues::Unified(s) => s.save(out.join("keystore.bin")).map_err(runtime_err)?,
        Queues::Separate { labeled, unlabeled } => {
            labeled
                .save(out.join("keystore_labeled.bin"))
                .map_err(runtime_err)?;
            unlabeled
                .save(out.join("keystore_unlabeled.bin"))
                .map_err(runtime_err)?;
        }
        Queues::Instance(_) | Queues::None => {}
    }
    println!(
        "final test accuracy {:.4}; outputs in {}",
        report.final_test_accuracy(),
        out.display()
    );
    Ok(())
}

pub fn cmd_ablate(args: &RunArgs) -> Outcome {
    let p = prepare(args)?;
    let out = &p.config.out_dir;
    let table = run_ablation_suite(
        &p.config.train,
        &p.split,
        &p.config.seeds,
        p.pretrained.as_ref(),
    )
    .map_err(runtime_err)?;
    write(&out.join("ablation.csv"), table.to_csv())?;
    write(
        &out.join("ablation.json"),
        serde_json::to_string_pretty(&table).map_err(runtime_err)?,
    )?;
    let bars: Vec<(f64, f64)> = table.rows.iter().map(|r| r.accuracy_stats()).collect();
    plot::bar_chart(&bars, &out.join("ablation.png")).map_err(runtime_err)?;
    for (row, (m, s)) in table.rows.iter().zip(&bars) {
        println!("{:22} {:.4} ± {:.4}", row.variant.label(), m, s);
    }
    Ok(())
}

pub fn cmd_sweep(args: &RunArgs, grid: Option<&str>) -> Outcome {
    let grid = match grid {
        Some(g) => Some(GridSpec::parse(g).map_err(config_err)?),
        None => None,
    };
    let p = prepare(args)?;
    let grid = grid.unwrap_or_else(|| p.config.grid.clone());
    let out = &p.config.out_dir;
    let sweep = run_sensitivity_sweep(
        &p.config.train,
        &p.split,
        &grid.projector_dims,
        &grid.keys_per_category,
        p.pretrained.as_ref(),
    )
    .map_err(runtime_err)?;
    write(&out.join("sweep.csv"), sweep.to_csv())?;
    write(
        &out.join("sweep.json"),
        serde_json::to_string_pretty(&sweep).map_err(runtime_err)?,
    )?;
    plot::heat_map(&sweep.accuracy, &out.join("sweep.png")).map_err(runtime_err)?;
    println!("accuracy spread over the grid: {:.4}", sweep.spread());
    Ok(())
}

pub fn cmd_report(run_dir: &Path) -> Outcome {
    let csv = run_dir.join("report.csv");
    if !csv.is_file() {
        return Err(Failure::Config(format!(
            "{} has no report.csv",
            run_dir.display()
        )));
    }
    let rows = TrainReport::read_csv(&csv).map_err(config_err)?;
    if rows.is_empty() {
        return Err(Failure::Config(format!("{} has no epochs", csv.display())));
    }
    let test: Vec<Option<f64>> = rows.iter().map(|r| Some(r.test_accuracy)).collect();
    let pseudo: Vec<Option<f64>> = rows.iter().map(|r| r.pseudo_label_accuracy).collect();
    let gap: Vec<Option<f64>> = rows.iter().map(|r| r.gap()).collect();
    plot::line_chart(
        &[(&test, plot::BLUE), (&pseudo, plot::ORANGE)],
        0.0,
        1.0,
        &run_dir.join("curves.png"),
    )
    .map_err(runtime_err)?;
    plot::line_chart(&[(&gap, plot::GREEN)], -1.0, 1.0, &run_dir.join("gap.png"))
        .map_err(runtime_err)?;
    let mut text = String::from("epoch,gap\n");
    for (r, g) in rows.iter().zip(&gap) {
        text.push_str(&format!(
            "{},{}\n",
            r.epoch,
            g.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    write(&run_dir.join("gap.csv"), text)?;
    println!(
        "wrote curves.png, gap.png and gap.csv to {}",
        run_dir.display()
    );
    Ok(())
}
