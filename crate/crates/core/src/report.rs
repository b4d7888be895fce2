//! Assembly and serialization of the identification report: per-target
//! scores for every method, plot-ready prediction traces, an optional
//! recovery summary, and a timing sidecar.
//!
//! The report JSON itself contains no wall-clock values, so identical
//! inputs produce byte-identical reports; runtimes live in the sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mse, r2, RecoverySummary};

/// One identification method's output on the evaluation data.
pub struct ScoredRun {
    pub method: String,
    /// Human-readable expression (or support listing) per target.
    pub expressions: Vec<String>,
    /// predictions[target][row].
    pub predictions: Vec<Vec<f64>>,
}

/// Fit quality of one method on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub target: String,
    pub method: String,
    pub mse: f64,
    pub r2: f64,
    pub expression: String,
}

/// Per-state fit of a re-integrated trajectory against the reference
/// trajectory. `r2` is absent for states the reference leaves constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScore {
    pub state: String,
    pub mse: f64,
    pub r2: Option<f64>,
}

/// Result of re-integrating one identified model as a vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReintegrationRun {
    pub method: String,
    /// Time at which the re-integration left the finite range, if it did;
    /// scores are empty in that case.
    pub diverged_at: Option<f64>,
    pub scores: Vec<StateScore>,
}

/// The full report: a settings snapshot, per-target scores for every
/// method, and optional recovery/re-integration sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Resolved pipeline settings the run can be reproduced from.
    pub settings: serde_json::Value,
    /// Whether scores are computed on the last-20% holdout window only.
    pub holdout: bool,
    pub targets: Vec<TargetScore>,
    pub recovery: Option<RecoverySummary>,
    pub reintegration: Option<Vec<ReintegrationRun>>,
}

impl IdentificationReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<IdentificationReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: invalid report JSON: {e}", path.display())))
    }
}

/// Wall-clock sidecar, kept out of the report so the report stays
/// deterministic run to run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    /// Seconds per method.
    pub runtime_s: BTreeMap<String, f64>,
    /// Runtime ratio of the symbolic-regression engine over the sparse
    /// regression, present when both methods have been timed.
    pub dsr_over_sindy: Option<f64>,
}

impl Timings {
    /// Recompute the ratio field from the recorded runtimes.
    pub fn update_ratio(&mut self) {
        self.dsr_over_sindy = match (self.runtime_s.get("dsr"), self.runtime_s.get("sindy")) {
            (Some(d), Some(s)) if *s > 0.0 => Some(d / s),
            _ => None,
        };
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("timings serialization failed: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Timings> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: invalid timings JSON: {e}", path.display())))
    }
}

/// First row index of the scoring window: the whole trajectory, or the
/// last fifth when `holdout` is set.
fn window_start(n: usize, holdout: bool) -> usize {
    if holdout {
        n - n / 5
    } else {
        0
    }
}

fn check_runs(target_names: &[String], y_true: &[Vec<f64>], runs: &[ScoredRun]) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Config("report: at least one scored run required".into()));
    }
    if y_true.len() != target_names.len() {
        return Err(Error::Config(format!(
            "report: {} truth columns for {} targets",
            y_true.len(),
            target_names.len()
        )));
    }
    for run in runs {
        if run.predictions.len() != target_names.len()
            || run.expressions.len() != target_names.len()
        {
            return Err(Error::Config(format!(
                "report: run '{}' covers {} targets, expected {}",
                run.method,
                run.predictions.len(),
                target_names.len()
            )));
        }
        for (t, pred) in run.predictions.iter().enumerate() {
            if pred.len() != y_true[t].len() {
                return Err(Error::Config(format!(
                    "report: run '{}' target '{}' has {} rows, truth has {}",
                    run.method,
                    target_names[t],
                    pred.len(),
                    y_true[t].len()
                )));
            }
        }
    }
    Ok(())
}

/// Score every run on every target and assemble the report body.
pub fn assemble_report(
    settings: serde_json::Value,
    target_names: &[String],
    y_true: &[Vec<f64>],
    runs: &[ScoredRun],
    recovery: Option<RecoverySummary>,
    holdout: bool,
) -> Result<IdentificationReport> {
    check_runs(target_names, y_true, runs)?;
    let mut targets = Vec::with_capacity(target_names.len() * runs.len());
    for (t, name) in target_names.iter().enumerate() {
        let k0 = window_start(y_true[t].len(), holdout);
        let yw = &y_true[t][k0..];
        for run in runs {
            let pw = &run.predictions[t][k0..];
            targets.push(TargetScore {
                target: name.clone(),
                method: run.method.clone(),
                mse: mse(yw, pw)?,
                r2: r2(yw, pw)?,
                expression: run.expressions[t].clone(),
            });
        }
    }
    Ok(IdentificationReport {
        settings,
        holdout,
        targets,
        recovery,
        reintegration: None,
    })
}

/// Write one plot-data CSV per target: columns `t`, `y_true`, then one
/// `y_<method>` column per run, full-length regardless of the scoring
/// window. Returns the written paths.
pub fn write_plot_data(
    dir: &Path,
    target_names: &[String],
    t: &[f64],
    y_true: &[Vec<f64>],
    runs: &[ScoredRun],
) -> Result<Vec<PathBuf>> {
    check_runs(target_names, y_true, runs)?;
    let mut written = Vec::with_capacity(target_names.len());
    for (ti, name) in target_names.iter().enumerate() {
        if y_true[ti].len() != t.len() {
            return Err(Error::Config(format!(
                "plot data: target '{name}' has {} rows, time axis has {}",
                y_true[ti].len(),
                t.len()
            )));
        }
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&path, io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })?;
        let mut header = vec!["t".to_string(), "y_true".to_string()];
        header.extend(runs.iter().map(|r| format!("y_{}", r.method)));
        w.write_record(&header)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for k in 0..t.len() {
            let mut row = vec![format!("{}", t[k]), format!("{}", y_true[ti][k])];
            row.extend(runs.iter().map(|r| format!("{}", r.predictions[ti][k])));
            w.write_record(&row)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
