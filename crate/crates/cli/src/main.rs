//! `gflid` — simulate a grid-following converter benchmark and rediscover
//! its governing equations from the simulated data.
//!
//! The subcommands compose one pipeline over a single output directory:
//! `simulate` integrates the configured reference-step protocol and exports
//! a regression dataset, `identify` fits sparse-regression (SINDy) and/or
//! deep-symbolic-regression models to it, `evaluate` scores fitted models
//! into `report.json` plus plot-data CSVs, and `full` chains all three.
//! `sweep` refits the sparse model across a threshold grid and prints a
//! threshold-vs-error table.
//!
//! Every run stores a `settings.json` snapshot (seeds included), so a
//! finished directory is self-describing and reproducible bit-for-bit.
//! Product files are never clobbered unless `--overwrite` is passed.
//!
//! Exit codes: 0 success, 2 config or schema errors, 3 numerical failures
//! (the message names the failing step), 4 refusing to overwrite.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gflid_core::config::PipelineConfig;
use gflid_core::dataset::{load_csv, target_names, Dataset};
use gflid_core::features::build;
use gflid_core::pipeline::{
    resolve_outdir, run_evaluate, run_full, run_identify, run_simulate, MethodSelection,
    DATASET_FILE, DSR_MODEL_FILE, REPORT_FILE, SINDY_MODEL_FILE, TIMINGS_FILE,
};
use gflid_core::report::{IdentificationReport, Timings};
use gflid_core::sindy::{predict, stlsq, SparseModel};
use gflid_core::symreg::DsrModel;
use gflid_core::{metrics, Error, Result};

#[derive(Parser)]
#[command(
    name = "gflid",
    version,
    about = "Grid-following converter simulation and equation rediscovery",
    long_about = "Simulate a 15-state grid-following converter under reference steps, \
                  then rediscover its governing equations with sparse regression (SINDy) \
                  and deep symbolic regression, and score both against the exact model."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory; overrides `report.outdir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Replace existing product files instead of exiting with code 4.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the reference protocol and export the regression dataset.
    Simulate(CommonArgs),

    /// Fit models to the dataset already in the output directory.
    Identify {
        #[command(flatten)]
        common: CommonArgs,

        /// Identification method: sindy, dsr, or both.
        #[arg(long, default_value = "both", value_name = "NAME")]
        method: String,
    },

    /// Score fitted models against the dataset and write the report.
    Evaluate(CommonArgs),

    /// Simulate, identify, and evaluate in one run.
    Full {
        #[command(flatten)]
        common: CommonArgs,

        /// Identification method: sindy, dsr, or both.
        #[arg(long, default_value = "both", value_name = "NAME")]
        method: String,
    },

    /// Refit the sparse model across thresholds and print an error table.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,

        /// Comma-separated STLSQ thresholds to sweep.
        #[arg(long, default_value = "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1", value_name = "LIST")]
        thresholds: String,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    init_worker_pool()?;
    match cli.command {
        Command::Simulate(common) => cmd_simulate(&common),
        Command::Identify { common, method } => cmd_identify(&common, &method),
        Command::Evaluate(common) => cmd_evaluate(&common),
        Command::Full { common, method } => cmd_full(&common, &method),
        Command::Sweep { common, thresholds } => cmd_sweep(&common, &thresholds),
    }
}

/// Cap the worker pool when `GFLID_THREADS` is set; otherwise rayon sizes
/// it to the machine.
fn init_worker_pool() -> Result<()> {
    let Some(raw) = std::env::var_os("GFLID_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!("GFLID_THREADS must be a positive integer, got '{text}'"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool setup failed: {e}")))
}

fn cmd_simulate(common: &CommonArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&common.config)?;
    let outdir = resolve_outdir(&cfg, common.out.as_deref());
    let ds = run_simulate(&cfg, &outdir, common.overwrite)?;
    println!(
        "simulate: {} samples x {} columns -> {}",
        ds.n_rows(),
        ds.column_names.len(),
        outdir.join(DATASET_FILE).display()
    );
    Ok(())
}

fn cmd_identify(common: &CommonArgs, method: &str) -> Result<()> {
    let cfg = PipelineConfig::load(&common.config)?;
    let selection = MethodSelection::parse(method)?;
    let outdir = resolve_outdir(&cfg, common.out.as_deref());
    let (sindy, dsr) = run_identify(&cfg, &outdir, selection, common.overwrite)?;
    let timings = Timings::load_json(&outdir.join(TIMINGS_FILE))?;
    if let Some(model) = &sindy {
        print_sindy_summary(model, &timings, &outdir.join(SINDY_MODEL_FILE).display().to_string());
    }
    if let Some(model) = &dsr {
        print_dsr_summary(model, &timings, &outdir.join(DSR_MODEL_FILE).display().to_string());
    }
    Ok(())
}

fn cmd_evaluate(common: &CommonArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&common.config)?;
    let outdir = resolve_outdir(&cfg, common.out.as_deref());
    let report = run_evaluate(&cfg, &outdir, common.overwrite)?;
    let timings = Timings::load_json(&outdir.join(TIMINGS_FILE))?;
    print_report(&report, &timings);
    println!("report -> {}", outdir.join(REPORT_FILE).display());
    Ok(())
}

fn cmd_full(common: &CommonArgs, method: &str) -> Result<()> {
    let cfg = PipelineConfig::load(&common.config)?;
    let selection = MethodSelection::parse(method)?;
    let outdir = resolve_outdir(&cfg, common.out.as_deref());
    let report = run_full(&cfg, &outdir, selection, common.overwrite)?;
    let timings = Timings::load_json(&outdir.join(TIMINGS_FILE))?;
    print_report(&report, &timings);
    println!("report -> {}", outdir.join(REPORT_FILE).display());
    Ok(())
}

/// Threshold-vs-error table: refit the sparse model at each threshold and
/// report the aggregate support size and the worst per-target fit.
fn cmd_sweep(common: &CommonArgs, thresholds: &str) -> Result<()> {
    let cfg = PipelineConfig::load(&common.config)?;
    let outdir = resolve_outdir(&cfg, common.out.as_deref());
    let ds = load_csv(&outdir.join(DATASET_FILE))?;
    let theta = build(&cfg.library, &ds)?;
    let targets = state_target_columns(&ds);
    let names = target_names();

    println!("{:>10}  {:>5}  {:>12}  {:>12}", "threshold", "nnz", "worst mse", "min r2");
    for threshold in parse_thresholds(thresholds)? {
        let model = stlsq(&theta, &targets, &names, threshold, cfg.sindy.ridge)?;
        let preds = predict(&model, &theta)?;
        let nnz: usize = model
            .coefficients
            .iter()
            .map(|row| row.iter().filter(|&&c| c != 0.0).count())
            .sum();
        let mut worst_mse = 0.0f64;
        let mut min_r2 = f64::INFINITY;
        for (y, yhat) in targets.iter().zip(&preds) {
            worst_mse = worst_mse.max(metrics::mse(y, yhat)?);
            min_r2 = min_r2.min(metrics::r2(y, yhat)?);
        }
        println!("{threshold:>10.1e}  {nnz:>5}  {worst_mse:>12.4e}  {min_r2:>12.6}");
    }
    Ok(())
}

fn parse_thresholds(list: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let v: f64 = part.trim().parse().map_err(|_| {
            Error::Config(format!("thresholds must be comma-separated numbers, got '{part}'"))
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Config(format!("threshold must be finite and >= 0, got {v}")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Config("threshold list is empty".into()));
    }
    Ok(out)
}

/// Transpose the per-row derivative samples into one column per state.
fn state_target_columns(ds: &Dataset) -> Vec<Vec<f64>> {
    let n_states = ds.dxdt.first().map_or(0, |row| row.len());
    (0..n_states)
        .map(|i| ds.dxdt.iter().map(|row| row[i]).collect())
        .collect()
}

fn print_sindy_summary(model: &SparseModel, timings: &Timings, path: &str) {
    let nnz: usize = (0..model.target_names.len())
        .map(|t| model.support(t).len())
        .sum();
    let secs = timings.runtime_s.get("sindy").copied().unwrap_or(0.0);
    println!(
        "sindy: {} targets, {nnz} nonzero of {}x{} coefficients, {secs:.2} s -> {path}",
        model.target_names.len(),
        model.target_names.len(),
        model.term_names.len(),
    );
    for warning in &model.warnings {
        println!("  warning: {warning}");
    }
}

fn print_dsr_summary(model: &DsrModel, timings: &Timings, path: &str) {
    let secs = timings.runtime_s.get("dsr").copied().unwrap_or(0.0);
    println!("dsr: {} targets, {secs:.2} s -> {path}", model.targets.len());
    for t in &model.targets {
        println!("  {}: reward {:.6}  {}", t.target, t.reward, t.expression);
    }
}

/// Per-target score table plus the recovery, runtime, and re-integration
/// summaries when present.
fn print_report(report: &IdentificationReport, timings: &Timings) {
    println!("{:<12} {:<6} {:>12} {:>12}", "target", "method", "mse", "r2");
    for row in &report.targets {
        println!(
            "{:<12} {:<6} {:>12.4e} {:>12.6}",
            row.target, row.method, row.mse, row.r2
        );
    }
    if let Some(rec) = &report.recovery {
        println!(
            "recovery vs exact expansion: precision {:.3}, recall {:.3}, max rel coeff error {:.2e}",
            rec.precision, rec.recall, rec.max_rel_error
        );
    }
    let sindy_s = timings.runtime_s.get("sindy").copied();
    let dsr_s = timings.runtime_s.get("dsr").copied();
    match (sindy_s, dsr_s, timings.dsr_over_sindy) {
        (Some(s), Some(d), Some(ratio)) => {
            println!("runtime: sindy {s:.2} s, dsr {d:.2} s (dsr/sindy ratio {ratio:.1})");
        }
        (Some(s), _, _) => println!("runtime: sindy {s:.2} s"),
        (_, Some(d), _) => println!("runtime: dsr {d:.2} s"),
        _ => {}
    }
    for run in report.reintegration.iter().flatten() {
        match run.diverged_at {
            Some(t) => println!("reintegration ({}): diverged at t = {t:.6} s", run.method),
            None => {
                let worst = run.scores.iter().map(|s| s.mse).fold(0.0, f64::max);
                println!("reintegration ({}): max state mse {worst:.4e}", run.method);
            }
        }
    }
}
