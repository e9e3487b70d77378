//! The `forecast` command line: `run` one (model, optimizer) cell, `grid`
//! the whole benchmark, or print the `version`.

use crate::data::{load_series, HORIZON, LOOKBACK};
use crate::error::Error;
use crate::model::{save_model, ModelName};
use crate::optim::OptimizerKind;
use crate::report::{
    history_csv, summary_csv, write_atomic, write_manifest, write_run_report, RunManifest,
    RunReport, REPORT_SCHEMA,
};
use crate::train::{
    prepare, run_cell, CellOutcome, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE, DEFAULT_SEED,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::str::FromStr;

const MODEL_NAMES: [&str; 8] = [
    "fc1", "fc2", "rnn1", "rnn1fc", "rnn2", "lstm1", "conv1", "conv1fc",
];
const OPTIMIZER_NAMES: [&str; 3] = ["sgd", "rmsprop", "adam"];

/// Environment variable consulted for the seed when `--seed` is absent.
pub const SEED_ENV: &str = "FORECAST_SEED";

#[derive(Parser)]
#[command(
    name = "forecast",
    version,
    about = "Next-day series forecasting benchmark: small networks, three optimizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model with one optimizer and write its reports
    Run(RunArgs),
    /// Sweep the model x optimizer grid and write a summary table
    Grid(GridArgs),
    /// Print the tool version
    Version,
}

#[derive(Args)]
struct CommonArgs {
    /// Input series: UTF-8 CSV with header date,close[,volume]
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Samples per optimizer step
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Non-improving epochs tolerated before stopping
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    patience: usize,
    /// Hard cap on training epochs
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    max_epochs: usize,
    /// Base seed; overrides FORECAST_SEED (default 42)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Architecture to train
    #[arg(long, value_parser = MODEL_NAMES)]
    model: String,
    /// Update rule
    #[arg(long, value_parser = OPTIMIZER_NAMES)]
    optimizer: String,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated model filter (default: all eight)
    #[arg(long, value_delimiter = ',', value_parser = MODEL_NAMES)]
    models: Vec<String>,
    /// Comma-separated optimizer filter (default: all three)
    #[arg(long, value_delimiter = ',', value_parser = OPTIMIZER_NAMES)]
    optimizers: Vec<String>,
    /// Concurrent grid cells; 0 means one per CPU core
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Error> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::Config(format!(
                "{SEED_ENV} must be a non-negative integer, got '{raw}'"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn build_config(common: &CommonArgs) -> Result<TrainConfig, Error> {
    let cfg = TrainConfig {
        batch_size: common.batch_size,
        patience: common.patience,
        max_epochs: common.max_epochs,
        seed: resolve_seed(common.seed)?,
        // Per-cell optimizer defaults are filled in by run_cell.
        optimizer: crate::optim::OptimizerConfig::sgd(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_for(
    command: &str,
    common: &CommonArgs,
    cfg: &TrainConfig,
    models: &[ModelName],
    optimizers: &[OptimizerKind],
    parallelism: usize,
) -> RunManifest {
    RunManifest {
        schema: REPORT_SCHEMA,
        tool_version: crate::VERSION.to_string(),
        command: command.to_string(),
        data_path: common.data.display().to_string(),
        models: models.iter().map(|m| m.to_string()).collect(),
        optimizers: optimizers.iter().map(|o| o.to_string()).collect(),
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        max_epochs: cfg.max_epochs,
        seed: cfg.seed,
        parallelism,
        lookback: LOOKBACK,
        horizon: HORIZON,
        out_dir: common.out.display().to_string(),
    }
}

/// Writes one cell's artifacts (history.csv, report.json, prediction.svg,
/// model.weights) into `dir`.
fn write_cell_artifacts(
    outcome: &CellOutcome,
    normalizer: &crate::data::Normalizer,
    dir: &Path,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    if let Some(history) = &outcome.history {
        write_atomic(&dir.join("history.csv"), history_csv(history).as_bytes())?;
    }
    let report = RunReport::from_outcome(outcome, normalizer);
    write_run_report(&report, &dir.join("report.json"))?;
    if let (Some(actual), Some(predicted)) = (&outcome.test_actuals, &outcome.test_predictions) {
        crate::report::emit_prediction_svg(actual, predicted, &dir.join("prediction.svg"))?;
    }
    if let Some(model) = &outcome.model {
        save_model(model, &dir.join("model.weights"))?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let cfg = build_config(&args.common)?;
    let model = ModelName::from_str(&args.model)?;
    let optimizer = OptimizerKind::from_str(&args.optimizer)?;
    let out_dir = &args.common.out;
    std::fs::create_dir_all(out_dir)?;
    let manifest = manifest_for("run", &args.common, &cfg, &[model], &[optimizer], 1);
    write_manifest(&manifest, &out_dir.join("manifest.json"))?;

    let series = load_series(&args.common.data)?;
    let data = prepare(&series)?;
    let outcome = run_cell(model, optimizer, &data, &data.test, &cfg);
    write_cell_artifacts(&outcome, &data.normalizer, out_dir)?;
    if let Some(message) = &outcome.report.error {
        return Err(Error::Config(format!("training failed: {message}")));
    }
    let report = &outcome.report;
    println!(
        "{} + {}: val_mae {} test_mae {} (best epoch {})",
        report.model,
        report.optimizer,
        report.val_mae.map(crate::report::fmt_sig6).unwrap_or_default(),
        report.test_mae.map(crate::report::fmt_sig6).unwrap_or_default(),
        report.epochs
    );
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<(), Error> {
    let cfg = build_config(&args.common)?;
    let models: Vec<ModelName> = if args.models.is_empty() {
        ModelName::all().to_vec()
    } else {
        args.models
            .iter()
            .map(|s| ModelName::from_str(s))
            .collect::<Result<_, _>>()?
    };
    let optimizers: Vec<OptimizerKind> = if args.optimizers.is_empty() {
        OptimizerKind::all().to_vec()
    } else {
        args.optimizers
            .iter()
            .map(|s| OptimizerKind::from_str(s))
            .collect::<Result<_, _>>()?
    };
    let out_dir = &args.common.out;
    std::fs::create_dir_all(out_dir)?;
    let manifest = manifest_for("grid", &args.common, &cfg, &models, &optimizers, args.parallel);
    write_manifest(&manifest, &out_dir.join("manifest.json"))?;

    let series = load_series(&args.common.data)?;
    let data = prepare(&series)?;
    let outcomes = crate::train::run_experiment_grid(
        &series,
        &models,
        &optimizers,
        &cfg,
        args.parallel,
    )?;
    for outcome in &outcomes {
        let cell_dir = out_dir.join(format!(
            "{}_{}",
            outcome.report.model, outcome.report.optimizer
        ));
        write_cell_artifacts(outcome, &data.normalizer, &cell_dir)?;
        let cell_manifest = RunManifest {
            command: "run".to_string(),
            models: vec![outcome.report.model.to_string()],
            optimizers: vec![outcome.report.optimizer.to_string()],
            parallelism: 1,
            out_dir: cell_dir.display().to_string(),
            ..manifest.clone()
        };
        write_manifest(&cell_manifest, &cell_dir.join("manifest.json"))?;
    }
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    write_atomic(&out_dir.join("summary.csv"), summary_csv(&reports).as_bytes())?;
    for r in &reports {
        let status = match &r.error {
            Some(e) => format!("FAILED ({e})"),
            None => format!(
                "val_mae {} test_mae {}",
                r.val_mae.map(crate::report::fmt_sig6).unwrap_or_default(),
                r.test_mae.map(crate::report::fmt_sig6).unwrap_or_default()
            ),
        };
        println!("{} + {}: {status}", r.model, r.optimizer);
    }
    Ok(())
}

/// Parses arguments and runs; returns the process exit code. Usage errors
/// exit 2 (via clap or config validation), data and runtime errors exit 1.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Version => {
            println!("forecast {}", crate::VERSION);
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
