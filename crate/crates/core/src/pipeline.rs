//! Pipeline stages behind the CLI: simulate a dataset, identify models
//! from it, evaluate them into a report, or run all three.
//!
//! Every stage writes into one output directory. Product files
//! (`dataset.csv`, model JSONs, `report.json`, plot CSVs) are never
//! clobbered unless `overwrite` is set; the `settings.json` and
//! `timings.json` sidecars are refreshed on every run so a directory
//! always describes its latest contents. Everything except the timing
//! sidecar is byte-deterministic for a fixed config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::PipelineConfig;
use crate::dataset::{add_noise, build_dataset, load_csv, save_csv, target_names, Dataset};
use crate::error::{Error, Result};
use crate::features::{build, ground_truth_coefficients, Term};
use crate::metrics::compare_support;
use crate::model::{find_equilibrium, InputVector, StateVector, N_STATES, STATE_NAMES};
use crate::report::{
    assemble_report, write_plot_data, IdentificationReport, ReintegrationRun, ScoredRun,
    StateScore, Timings,
};
use crate::sim::{integrate, rk4_step, ReferenceSchedule};
use crate::sindy::{predict, stlsq, SparseModel};
use crate::symreg::{search, DsrModel, ExpressionTree, Grammar};

pub const DATASET_FILE: &str = "dataset.csv";
pub const SINDY_MODEL_FILE: &str = "model_sindy.json";
pub const DSR_MODEL_FILE: &str = "model_dsr.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const SETTINGS_FILE: &str = "settings.json";

const METHOD_SINDY: &str = "sindy";
const METHOD_DSR: &str = "dsr";

/// Which identification methods a command touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSelection {
    Sindy,
    Dsr,
    Both,
}

impl MethodSelection {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sindy" => Ok(Self::Sindy),
            "dsr" => Ok(Self::Dsr),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "method must be one of sindy, dsr, both; got '{other}'"
            ))),
        }
    }

    pub fn wants_sindy(self) -> bool {
        matches!(self, Self::Sindy | Self::Both)
    }

    pub fn wants_dsr(self) -> bool {
        matches!(self, Self::Dsr | Self::Both)
    }
}

/// The output directory a command acts on: an explicit `--out` wins over
/// the config's `report.outdir`.
pub fn resolve_outdir(cfg: &PipelineConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.report.outdir.clone())
}

fn ensure_dir(outdir: &Path) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))
}

/// Refuse to overwrite an existing product file unless asked to.
fn guard(path: PathBuf, overwrite: bool) -> Result<PathBuf> {
    if path.exists() && !overwrite {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    Ok(path)
}

/// Fold new wall-clock entries into the timing sidecar.
fn record_timings(outdir: &Path, entries: &[(&str, f64)]) -> Result<Timings> {
    let path = outdir.join(TIMINGS_FILE);
    let mut timings = if path.exists() {
        Timings::load_json(&path)?
    } else {
        Timings::default()
    };
    for (name, secs) in entries {
        timings.runtime_s.insert((*name).to_string(), *secs);
    }
    timings.update_ratio();
    timings.save_json(&path)?;
    Ok(timings)
}

fn write_settings(cfg: &PipelineConfig, outdir: &Path) -> Result<()> {
    let path = outdir.join(SETTINGS_FILE);
    let text = serde_json::to_string_pretty(&cfg.snapshot()?)
        .map_err(|e| Error::Parse(format!("settings serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Simulate the configured protocol and extract the regression dataset.
pub fn simulate_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let x0 = find_equilibrium(&cfg.model, &cfg.schedule.initial, None)?;
    let traj = integrate(&cfg.model, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end)?;
    let mut ds = build_dataset(&traj, cfg.dataset.mode, cfg.dataset.stride)?;
    if cfg.dataset.sigma > 0.0 {
        ds = add_noise(&ds, cfg.dataset.sigma, cfg.dataset.seed)?;
    }
    ds.meta.gains = Some(cfg.model.gain_set());
    Ok(ds)
}

/// Sparse regression over the configured library: all states, always.
pub fn fit_sindy(cfg: &PipelineConfig, ds: &Dataset) -> Result<SparseModel> {
    let fm = build(&cfg.library, ds)?;
    let targets: Vec<Vec<f64>> = (0..N_STATES)
        .map(|i| ds.dxdt.iter().map(|row| row[i]).collect())
        .collect();
    stlsq(
        &fm,
        &targets,
        &target_names(),
        cfg.sindy.threshold,
        cfg.sindy.ridge,
    )
}

/// Decorrelated per-target seed so every target explores independently.
fn target_seed(seed: u64, state_index: usize) -> u64 {
    seed ^ (state_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Symbolic regression over the configured target states.
pub fn fit_dsr(cfg: &PipelineConfig, ds: &Dataset) -> Result<DsrModel> {
    let grammar = Grammar::new(ds.column_names.clone(), cfg.dsr.max_length)?;
    let mut targets = Vec::new();
    for idx in cfg.target_indices() {
        let y: Vec<f64> = ds.dxdt.iter().map(|row| row[idx]).collect();
        let rep = search(
            &grammar,
            &ds.x,
            &y,
            &cfg.dsr,
            target_seed(cfg.dsr.seed, idx),
        )
        .map_err(|e| match e {
            Error::Numerics(msg) => {
                Error::Numerics(format!("dsr target d_{}: {msg}", STATE_NAMES[idx]))
            }
            other => other,
        })?;
        targets.push(DsrModel::target_from_report(
            &format!("d_{}", STATE_NAMES[idx]),
            &rep,
            &grammar,
        ));
    }
    Ok(DsrModel {
        engine: cfg.dsr.engine,
        columns: grammar.columns,
        max_length: grammar.max_length,
        targets,
    })
}

/// `simulate`: write `dataset.csv` (+ metadata sidecar) into the outdir.
pub fn run_simulate(cfg: &PipelineConfig, outdir: &Path, overwrite: bool) -> Result<Dataset> {
    ensure_dir(outdir)?;
    let csv_path = guard(outdir.join(DATASET_FILE), overwrite)?;
    let begin = Instant::now();
    let ds = simulate_dataset(cfg)?;
    save_csv(&ds, &csv_path)?;
    write_settings(cfg, outdir)?;
    record_timings(outdir, &[("simulate", begin.elapsed().as_secs_f64())])?;
    Ok(ds)
}

fn identify_inner(
    cfg: &PipelineConfig,
    ds: &Dataset,
    outdir: &Path,
    method: MethodSelection,
    overwrite: bool,
) -> Result<(Option<SparseModel>, Option<DsrModel>)> {
    // Check output paths up front so a long search cannot end in a refusal.
    let sindy_path = method
        .wants_sindy()
        .then(|| guard(outdir.join(SINDY_MODEL_FILE), overwrite))
        .transpose()?;
    let dsr_path = method
        .wants_dsr()
        .then(|| guard(outdir.join(DSR_MODEL_FILE), overwrite))
        .transpose()?;

    let mut entries: Vec<(&str, f64)> = Vec::new();
    let sindy = match sindy_path {
        Some(path) => {
            let begin = Instant::now();
            let model = fit_sindy(cfg, ds)?;
            entries.push((METHOD_SINDY, begin.elapsed().as_secs_f64()));
            model.save_json(&path)?;
            Some(model)
        }
        None => None,
    };
    let dsr = match dsr_path {
        Some(path) => {
            let begin = Instant::now();
            let model = fit_dsr(cfg, ds)?;
            entries.push((METHOD_DSR, begin.elapsed().as_secs_f64()));
            model.save_json(&path)?;
            Some(model)
        }
        None => None,
    };
    write_settings(cfg, outdir)?;
    record_timings(outdir, &entries)?;
    Ok((sindy, dsr))
}

/// `identify`: fit the selected methods to the dataset already in the
/// outdir and write their model files.
pub fn run_identify(
    cfg: &PipelineConfig,
    outdir: &Path,
    method: MethodSelection,
    overwrite: bool,
) -> Result<(Option<SparseModel>, Option<DsrModel>)> {
    ensure_dir(outdir)?;
    let ds = load_csv(&outdir.join(DATASET_FILE))?;
    identify_inner(cfg, &ds, outdir, method, overwrite)
}

/// Render a sparse row as `coeff*term + ...` for report readability.
fn linear_expression(model: &SparseModel, target: usize) -> String {
    let parts: Vec<String> = model.coefficients[target]
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| format!("{c}*{}", model.term_names[i]))
        .collect();
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    }
}

/// Re-integrate a vector field over the configured protocol, mirroring the
/// simulator's grid. Returns the states visited and the time of the first
/// non-finite state, if any.
fn reintegrate_states<F>(
    f: F,
    x0: &StateVector,
    schedule: &ReferenceSchedule,
    dt: f64,
    t_end: f64,
) -> (Vec<StateVector>, Option<f64>)
where
    F: Fn(&StateVector, &InputVector) -> Result<StateVector>,
{
    let sched = schedule.snapped(dt);
    let n_steps = (t_end / dt).round() as usize;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut x = *x0;
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return (states, Some(t));
        }
        states.push(x);
        if k < n_steps {
            let u = sched.inputs_at(t);
            match rk4_step(|y| f(y, &u), &x, dt) {
                Ok(next) => x = next,
                Err(_) => return (states, Some((k + 1) as f64 * dt)),
            }
        }
    }
    (states, None)
}

/// Score a re-integrated trajectory against the reference, state by state.
fn score_states(reference: &[StateVector], model: &[StateVector]) -> Result<Vec<StateScore>> {
    let n = model.len().min(reference.len());
    let mut scores = Vec::with_capacity(N_STATES);
    for (s, name) in STATE_NAMES.iter().enumerate() {
        let truth: Vec<f64> = reference[..n].iter().map(|x| x[s]).collect();
        let got: Vec<f64> = model[..n].iter().map(|x| x[s]).collect();
        scores.push(StateScore {
            state: (*name).to_string(),
            mse: crate::metrics::mse(&truth, &got)?,
            r2: crate::metrics::r2(&truth, &got).ok(),
        });
    }
    Ok(scores)
}

/// Build the re-integration section for whichever models support it: the
/// sparse model always covers all states; the symbolic model participates
/// only when it was searched for every state.
fn reintegration_runs(
    cfg: &PipelineConfig,
    sindy: Option<&SparseModel>,
    dsr: Option<&DsrModel>,
) -> Result<Vec<ReintegrationRun>> {
    let x0 = find_equilibrium(&cfg.model, &cfg.schedule.initial, None)?;
    let reference = integrate(&cfg.model, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end)?;
    let mut runs = Vec::new();

    if let Some(model) = sindy {
        let columns = crate::dataset::column_names();
        let terms: Vec<Term> = model
            .term_names
            .iter()
            .map(|n| Term::parse(n, &columns))
            .collect::<Result<_>>()?;
        let f = |x: &StateVector, u: &InputVector| -> Result<StateVector> {
            let mut row = [0.0; N_STATES + 2];
            row[..N_STATES].copy_from_slice(x);
            row[N_STATES] = u[0];
            row[N_STATES + 1] = u[1];
            let mut dx = [0.0; N_STATES];
            for (t, out) in dx.iter_mut().enumerate() {
                *out = terms
                    .iter()
                    .zip(&model.coefficients[t])
                    .map(|(term, c)| c * term.eval(&row))
                    .sum();
            }
            Ok(dx)
        };
        let (states, diverged_at) =
            reintegrate_states(f, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end);
        runs.push(ReintegrationRun {
            method: METHOD_SINDY.to_string(),
            diverged_at,
            scores: if diverged_at.is_none() {
                score_states(&reference.states, &states)?
            } else {
                Vec::new()
            },
        });
    }

    if let Some(model) = dsr {
        let grammar = model.grammar()?;
        let mut trees: Vec<Option<ExpressionTree>> = vec![None; N_STATES];
        for t in &model.targets {
            if let Some(s) = STATE_NAMES
                .iter()
                .position(|n| t.target == format!("d_{n}"))
            {
                trees[s] = Some(ExpressionTree::from_token_names(
                    &t.tokens,
                    &t.constants,
                    &grammar,
                )?);
            }
        }
        if trees.iter().all(Option::is_some) {
            let trees: Vec<ExpressionTree> = trees.into_iter().map(Option::unwrap).collect();
            let f = |x: &StateVector, u: &InputVector| -> Result<StateVector> {
                let mut row = [0.0; N_STATES + 2];
                row[..N_STATES].copy_from_slice(x);
                row[N_STATES] = u[0];
                row[N_STATES + 1] = u[1];
                let mut dx = [0.0; N_STATES];
                for (s, tree) in trees.iter().enumerate() {
                    dx[s] = crate::symreg::evaluate(tree, &[row])?.values[0];
                }
                Ok(dx)
            };
            let (states, diverged_at) =
                reintegrate_states(f, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end);
            runs.push(ReintegrationRun {
                method: METHOD_DSR.to_string(),
                diverged_at,
                scores: if diverged_at.is_none() {
                    score_states(&reference.states, &states)?
                } else {
                    Vec::new()
                },
            });
        }
    }
    Ok(runs)
}

fn evaluate_inner(
    cfg: &PipelineConfig,
    ds: &Dataset,
    sindy: Option<&SparseModel>,
    dsr: Option<&DsrModel>,
    outdir: &Path,
    overwrite: bool,
) -> Result<IdentificationReport> {
    if sindy.is_none() && dsr.is_none() {
        return Err(Error::Config(format!(
            "evaluate: no model files in {}; run identify first",
            outdir.display()
        )));
    }
    let begin = Instant::now();
    let indices = cfg.target_indices();
    let names: Vec<String> = indices
        .iter()
        .map(|&i| format!("d_{}", STATE_NAMES[i]))
        .collect();
    let y_true: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| ds.dxdt.iter().map(|row| row[i]).collect())
        .collect();

    let report_path = guard(outdir.join(REPORT_FILE), overwrite)?;
    for name in &names {
        guard(outdir.join(format!("plot_{name}.csv")), overwrite)?;
    }

    let mut runs = Vec::new();
    if let Some(model) = sindy {
        let fm = build(&cfg.library, ds)?;
        if fm.term_names != model.term_names {
            return Err(Error::Schema(
                "evaluate: the sparse model's terms do not match the configured library"
                    .into(),
            ));
        }
        let all = predict(model, &fm)?;
        runs.push(ScoredRun {
            method: METHOD_SINDY.to_string(),
            expressions: indices.iter().map(|&i| linear_expression(model, i)).collect(),
            predictions: indices.iter().map(|&i| all[i].clone()).collect(),
        });
    }
    if let Some(model) = dsr {
        if model.columns != ds.column_names {
            return Err(Error::Schema(
                "evaluate: the symbolic model's columns do not match the dataset".into(),
            ));
        }
        let all = model.predict(&ds.x)?;
        let mut expressions = Vec::with_capacity(names.len());
        let mut predictions = Vec::with_capacity(names.len());
        for name in &names {
            let pos = model
                .targets
                .iter()
                .position(|t| &t.target == name)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "evaluate: the symbolic model has no expression for target '{name}'; \
                         re-run identify with the current report.targets"
                    ))
                })?;
            expressions.push(model.targets[pos].expression.clone());
            predictions.push(all[pos].clone());
        }
        runs.push(ScoredRun {
            method: METHOD_DSR.to_string(),
            expressions,
            predictions,
        });
    }

    // Support recovery is reported whenever the configured library can
    // represent the true dynamics; a misspecified library simply omits it.
    let recovery = match (sindy, ground_truth_coefficients(&cfg.model, &cfg.library)) {
        (Some(model), Ok(truth)) => Some(compare_support(model, &truth)?),
        _ => None,
    };

    let mut report = assemble_report(
        cfg.snapshot()?,
        &names,
        &y_true,
        &runs,
        recovery,
        cfg.report.holdout,
    )?;
    if cfg.report.reintegrate {
        report.reintegration = Some(reintegration_runs(cfg, sindy, dsr)?);
    }

    report.save_json(&report_path)?;
    write_plot_data(outdir, &names, &ds.t, &y_true, &runs)?;
    write_settings(cfg, outdir)?;
    record_timings(outdir, &[("evaluate", begin.elapsed().as_secs_f64())])?;
    Ok(report)
}

/// `evaluate`: score the model files in the outdir against its dataset and
/// write `report.json` plus per-target plot CSVs.
pub fn run_evaluate(
    cfg: &PipelineConfig,
    outdir: &Path,
    overwrite: bool,
) -> Result<IdentificationReport> {
    ensure_dir(outdir)?;
    let ds = load_csv(&outdir.join(DATASET_FILE))?;
    let sindy_path = outdir.join(SINDY_MODEL_FILE);
    let sindy = sindy_path
        .exists()
        .then(|| SparseModel::load_json(&sindy_path))
        .transpose()?;
    let dsr_path = outdir.join(DSR_MODEL_FILE);
    let dsr = dsr_path
        .exists()
        .then(|| DsrModel::load_json(&dsr_path))
        .transpose()?;
    evaluate_inner(cfg, &ds, sindy.as_ref(), dsr.as_ref(), outdir, overwrite)
}

/// `full`: simulate, identify, and evaluate in one pass, handing the
/// dataset and models along in memory.
pub fn run_full(
    cfg: &PipelineConfig,
    outdir: &Path,
    method: MethodSelection,
    overwrite: bool,
) -> Result<IdentificationReport> {
    let ds = run_simulate(cfg, outdir, overwrite)?;
    let (sindy, dsr) = identify_inner(cfg, &ds, outdir, method, overwrite)?;
    evaluate_inner(cfg, &ds, sindy.as_ref(), dsr.as_ref(), outdir, overwrite)
}
