//! Regression datasets: trajectory → (X, dX/dt) matrices with derivative
//! modes, optional measurement noise, subsampling, and CSV persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GainSet, INPUT_NAMES, N_INPUTS, N_STATES, STATE_NAMES};
use crate::sim::Trajectory;

/// Number of design-matrix columns: all states plus both reference inputs.
pub const N_COLS: usize = N_STATES + N_INPUTS;

/// How derivative targets are obtained from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Copy the recorded right-hand side (no differentiation error).
    Exact,
    /// Second-order central differences of the state samples.
    CentralDifference,
}

/// Provenance carried alongside the numeric data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dt: f64,
    pub mode: DerivativeMode,
    pub stride: usize,
    pub sigma: f64,
    pub seed: u64,
    pub gains: Option<GainSet>,
}

/// Samples × columns regression data: `x` holds states and inputs in the
/// documented column order, `dxdt` the matching derivative targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub column_names: Vec<String>,
    pub x: Vec<[f64; N_COLS]>,
    pub dxdt: Vec<[f64; N_STATES]>,
    pub t: Vec<f64>,
    pub meta: DatasetMeta,
}

/// The fixed column order: 15 state names followed by the 2 input names.
pub fn column_names() -> Vec<String> {
    STATE_NAMES
        .iter()
        .chain(INPUT_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

/// Derivative-target header names (`d_` prefix on each state).
pub fn target_names() -> Vec<String> {
    STATE_NAMES.iter().map(|s| format!("d_{s}")).collect()
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.t.len()
    }

    /// Column index by name, over states then inputs.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

/// Build a regression dataset from a trajectory.
///
/// Exact mode copies the recorded rhs for every sample. Central-difference
/// mode computes `(x[k+1] − x[k−1]) / (2 dt)`, dropping the endpoints and
/// every sample within ±2 steps of a reference step (where the one-sided
/// discontinuity contaminates the stencil). `stride` subsamples the
/// surviving rows afterwards.
pub fn build_dataset(traj: &Trajectory, mode: DerivativeMode, stride: usize) -> Result<Dataset> {
    if stride == 0 {
        return Err(Error::Config("dataset.stride must be >= 1".into()));
    }
    let n = traj.len();
    if n < 3 && mode == DerivativeMode::CentralDifference {
        return Err(Error::Config(format!(
            "central differences need at least 3 samples, got {n}"
        )));
    }
    if n == 0 {
        return Err(Error::Config("cannot build a dataset from an empty trajectory".into()));
    }
    let dt = traj.dt();

    // Event samples are where the recorded inputs change.
    let event_rows: Vec<usize> = (1..n)
        .filter(|&k| traj.inputs[k] != traj.inputs[k - 1])
        .collect();

    let keep: Vec<usize> = match mode {
        DerivativeMode::Exact => (0..n).collect(),
        DerivativeMode::CentralDifference => (1..n - 1)
            .filter(|&k| {
                event_rows
                    .iter()
                    .all(|&e| (k as i64 - e as i64).unsigned_abs() > 2)
            })
            .collect(),
    };
    let keep: Vec<usize> = keep.into_iter().step_by(stride).collect();
    if keep.is_empty() {
        return Err(Error::Config(
            "no samples remain after derivative-mode exclusions and stride".into(),
        ));
    }

    let mut ds = Dataset {
        column_names: column_names(),
        x: Vec::with_capacity(keep.len()),
        dxdt: Vec::with_capacity(keep.len()),
        t: Vec::with_capacity(keep.len()),
        meta: DatasetMeta {
            dt,
            mode,
            stride,
            sigma: 0.0,
            seed: 0,
            gains: None,
        },
    };
    for &k in &keep {
        let mut row = [0.0; N_COLS];
        row[..N_STATES].copy_from_slice(&traj.states[k]);
        row[N_STATES..].copy_from_slice(&traj.inputs[k]);
        ds.x.push(row);
        ds.t.push(traj.times[k]);
        match mode {
            DerivativeMode::Exact => ds.dxdt.push(traj.derivs[k]),
            DerivativeMode::CentralDifference => {
                let mut d = [0.0; N_STATES];
                for i in 0..N_STATES {
                    d[i] = (traj.states[k + 1][i] - traj.states[k - 1][i]) / (2.0 * dt);
                }
                ds.dxdt.push(d);
            }
        }
    }
    Ok(ds)
}

/// Add i.i.d. zero-mean Gaussian noise of standard deviation `sigma` to
/// every X column (derivative targets are left untouched). Deterministic
/// for a given seed; `sigma = 0` returns the data bit-identically.
pub fn add_noise(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "dataset.noise sigma must be >= 0, got {sigma}"
        )));
    }
    let mut out = ds.clone();
    out.meta.sigma = sigma;
    out.meta.seed = seed;
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma)
        .map_err(|e| Error::Numerics(format!("invalid noise distribution: {e}")))?;
    for row in &mut out.x {
        for v in row.iter_mut() {
            *v += dist.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Sidecar path for the metadata JSON that travels with a dataset CSV.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Write the dataset as CSV (`t`, states, inputs, `d_`-prefixed targets)
/// plus a JSON metadata sidecar. Values round-trip exactly.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend(ds.column_names.iter().cloned());
    header.extend(target_names());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut record = Vec::with_capacity(header.len());
    for r in 0..ds.n_rows() {
        record.clear();
        record.push(format!("{}", ds.t[r]));
        record.extend(ds.x[r].iter().map(|v| format!("{v}")));
        record.extend(ds.dxdt[r].iter().map(|v| format!("{v}")));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta = serde_json::to_string_pretty(&ds.meta)
        .map_err(|e| Error::Parse(format!("meta serialization failed: {e}")))?;
    fs::write(meta_path(path), meta + "\n").map_err(|e| Error::io(&meta_path(path), e))?;
    Ok(())
}

/// Load a dataset written by [`save_csv`], validating the header and every
/// cell (non-finite values are rejected with their row/column location).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Parse(format!("{}: invalid metadata sidecar: {e}", meta_file.display())))?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let expected: Vec<String> = {
        let mut h = vec!["t".to_string()];
        h.extend(column_names());
        h.extend(target_names());
        h
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header != expected {
        return Err(Error::Schema(format!(
            "{}: header mismatch: expected {:?}, got {:?}",
            path.display(),
            expected,
            header
        )));
    }

    let mut ds = Dataset {
        column_names: column_names(),
        x: Vec::new(),
        dxdt: Vec::new(),
        t: Vec::new(),
        meta,
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            Error::Parse(format!("{}: row {}: {e}", path.display(), r + 1))
        })?;
        if rec.len() != expected.len() {
            return Err(Error::Parse(format!(
                "{}: row {}: expected {} fields, got {}",
                path.display(),
                r + 1,
                expected.len(),
                rec.len()
            )));
        }
        let parse = |c: usize| -> Result<f64> {
            let raw = &rec[c];
            let v: f64 = raw.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column '{}': cannot parse '{raw}' as a number",
                    path.display(),
                    r + 1,
                    expected[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "{}: row {}, column '{}': non-finite value '{raw}'",
                    path.display(),
                    r + 1,
                    expected[c]
                )));
            }
            Ok(v)
        };
        ds.t.push(parse(0)?);
        let mut row = [0.0; N_COLS];
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = parse(1 + i)?;
        }
        ds.x.push(row);
        let mut d = [0.0; N_STATES];
        for (i, cell) in d.iter_mut().enumerate() {
            *cell = parse(1 + N_COLS + i)?;
        }
        ds.dxdt.push(d);
    }
    Ok(ds)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}
