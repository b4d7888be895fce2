//! Sequentially thresholded least squares (STLSQ) over a feature matrix:
//! per-target sparse regression with standardized thresholding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// A sparse linear model over named library terms: one coefficient row per
/// derivative target, in original (unstandardized) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub target_names: Vec<String>,
    pub term_names: Vec<String>,
    /// targets × terms.
    pub coefficients: Vec<Vec<f64>>,
    pub threshold: f64,
    pub ridge: f64,
    pub iterations_used: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SparseModel {
    /// Indices of nonzero terms for one target row.
    pub fn support(&self, target: usize) -> Vec<usize> {
        self.coefficients[target]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("model serialization failed: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<SparseModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: invalid model JSON: {e}", path.display())))
    }
}

/// Thin-QR least squares: minimizes ‖A·x − b‖₂ for a tall matrix A.
///
/// One pass of iterative refinement (solve, form the residual in working
/// precision, solve for the correction with the same factorization) trims
/// the forward error by roughly a factor of the condition number when the
/// system is nearly consistent, which is the regime the sparse fits live in.
fn qr_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let k = a.ncols();
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        let mut s = q.transpose() * rhs;
        // Back substitution on the k×k upper triangle.
        for i in (0..k).rev() {
            let mut v = s[i];
            for j in i + 1..k {
                v -= r[(i, j)] * s[j];
            }
            let d = r[(i, i)];
            if d == 0.0 {
                return Err(Error::Numerics(
                    "singular triangular factor in least-squares solve (exactly dependent columns)"
                        .into(),
                ));
            }
            s[i] = v / d;
        }
        Ok(s)
    };
    let mut x = solve(b)?;
    let residual = b - a * &x;
    x += solve(&residual)?;
    Ok(x)
}

struct TargetFit {
    coeffs: Vec<f64>,
    iterations: usize,
    warnings: Vec<String>,
}

/// One STLSQ regression: thresholding on standardized coefficients, refit
/// on the surviving support, coefficients reported in original scale.
///
/// For the plain least-squares case each solve reparameterizes the basis
/// in two exact, invertible ways before factorizing:
///
/// * twin pairs {x, cos(θ)·x} become {x, x − cos(θ)·x} — when the angle
///   hovers near zero, cos(θ)·x is almost collinear with x and plain
///   least squares amplifies rounding into the pair;
/// * when the constant term is active, every other column is centered and
///   an explicit intercept carries the means — columns that barely move
///   around a nonzero level (a filter voltage pinned near 1 per unit) are
///   almost collinear with the constant in the same way.
///
/// Both changes drop the condition number by orders of magnitude, and the
/// mapping back to original coefficients is exact, so thresholding
/// semantics are unchanged. With a ridge penalty the plain standardized
/// basis defines the penalty, so the solve uses it directly.
#[allow(clippy::too_many_arguments)]
fn stlsq_single(
    theta: &DMatrix<f64>,
    col_scale: &[f64],
    zero_var: &[bool],
    cos_partner: &[Option<usize>],
    const_idx: Option<usize>,
    y: &[f64],
    target_name: &str,
    threshold: f64,
    ridge: f64,
    max_iters: usize,
) -> Result<TargetFit> {
    let n = theta.nrows();
    let m = theta.ncols();
    let mut warnings = Vec::new();

    let y_scale = {
        let s = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if s == 0.0 {
            1.0
        } else {
            s
        }
    };
    let y_norm = DVector::from_iterator(n, y.iter().map(|v| v / y_scale));

    let mut active: Vec<bool> = zero_var.iter().map(|z| !z).collect();
    for (c, z) in zero_var.iter().enumerate() {
        if *z {
            warnings.push(format!(
                "{target_name}: zero-variance column {c} excluded from regression"
            ));
        }
    }

    // Solve least squares on the active set; returns full-length raw-scale
    // coefficients.
    let solve_on = |active: &[bool]| -> Result<Vec<f64>> {
        let support: Vec<usize> = (0..m).filter(|&c| active[c]).collect();
        let mut w = vec![0.0; m];
        if support.is_empty() {
            return Ok(w);
        }
        let center = ridge == 0.0 && const_idx.map_or(false, |ci| active[ci]);
        // Assemble raw columns in the (possibly reparameterized) basis.
        // kind[k] = (column, Some(partner)) means the built column is
        // partner − column and its coefficient folds back into both.
        let mut built: Vec<DVector<f64>> = Vec::with_capacity(support.len());
        let mut kind: Vec<(usize, Option<usize>)> = Vec::with_capacity(support.len());
        for &c in &support {
            if center && Some(c) == const_idx {
                continue; // carried by the explicit intercept column
            }
            match cos_partner[c] {
                Some(px) if ridge == 0.0 && active[px] => {
                    let col = theta.column(px) - theta.column(c);
                    built.push(col);
                    kind.push((c, Some(px)));
                }
                _ => {
                    built.push(theta.column(c).into_owned());
                    kind.push((c, None));
                }
            }
        }
        let mut means = vec![0.0; built.len()];
        if center {
            for (k, col) in built.iter_mut().enumerate() {
                means[k] = col.mean();
                col.add_scalar_mut(-means[k]);
            }
        }
        // Standardize built columns; drop any that vanish (exact duplicate
        // pairs degenerate to zero difference columns, exactly constant
        // ones center to zero and fold into the intercept).
        let mut scales = Vec::with_capacity(built.len());
        let mut keep = Vec::with_capacity(built.len());
        for (k, col) in built.iter().enumerate() {
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            if rms > 0.0 {
                scales.push(rms);
                keep.push(k);
            }
        }
        let kk = keep.len();
        if kk == 0 && !center {
            return Ok(w);
        }
        let intercept = usize::from(center);
        let extra = if ridge > 0.0 { kk } else { 0 };
        let mut a = DMatrix::zeros(n + extra, intercept + kk);
        if center {
            a.column_mut(0).fill(1.0);
        }
        for (jj, &k) in keep.iter().enumerate() {
            let s = scales[jj];
            for r in 0..n {
                a[(r, intercept + jj)] = built[k][r] / s;
            }
        }
        let mut b = DVector::zeros(n + extra);
        b.rows_mut(0, n).copy_from(&y_norm);
        if ridge > 0.0 {
            let sq = ridge.sqrt();
            for jj in 0..kk {
                a[(n + jj, intercept + jj)] = sq;
            }
        }
        let sol = qr_lstsq(&a, &b)?;
        if center {
            w[const_idx.unwrap()] = sol[0] * y_scale;
        }
        for (jj, &k) in keep.iter().enumerate() {
            let coeff = sol[intercept + jj] * y_scale / scales[jj];
            let (c, partner) = kind[k];
            match partner {
                None => w[c] += coeff,
                Some(px) => {
                    // a·(x − cos·x) contributes +a to x and −a to cos·x.
                    w[px] += coeff;
                    w[c] -= coeff;
                }
            }
            if center {
                // Centered column = raw − mean·1: the mean flows back into
                // the constant term.
                w[const_idx.unwrap()] -= coeff * means[k];
            }
        }
        Ok(w)
    };

    let standardized = |w: &[f64]| -> Vec<f64> {
        (0..m).map(|c| w[c] * col_scale[c] / y_scale).collect()
    };

    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let w = solve_on(&active)?;
        let wstd = standardized(&w);
        let new_active: Vec<bool> = (0..m).map(|c| wstd[c].abs() >= threshold).collect();
        if new_active == active {
            break;
        }
        active = new_active;
        if !active.iter().any(|a| *a) {
            break;
        }
    }

    // Final refit on the converged support.
    let mut coeffs = vec![0.0; m];
    if active.iter().any(|a| *a) {
        let w = solve_on(&active)?;
        for c in 0..m {
            if active[c] {
                coeffs[c] = w[c];
            }
        }
    } else {
        warnings.push(format!(
            "{target_name}: no terms survived thresholding; coefficients are all zero"
        ));
    }
    Ok(TargetFit {
        coeffs,
        iterations,
        warnings,
    })
}

/// Partner table for the conditioning reparameterization: for each column
/// named `cos(a)*x`, the index of the plain `x` column (or of the constant
/// column for a bare `cos(a)`).
fn cos_partners(term_names: &[String]) -> Vec<Option<usize>> {
    let find = |name: &str| term_names.iter().position(|n| n == name);
    term_names
        .iter()
        .map(|nm| {
            if let Some(rest) = nm.strip_prefix("cos(") {
                if let Some((_, tail)) = rest.split_once(')') {
                    if let Some(x) = tail.strip_prefix('*') {
                        return find(x);
                    }
                    if tail.is_empty() {
                        return find("1");
                    }
                }
            }
            None
        })
        .collect()
}

/// Run STLSQ for every target column.
///
/// Feature columns are standardized to unit RMS and each target to unit
/// RMS before solving, so `threshold` acts on dimensionless coefficients;
/// reported coefficients are mapped back to the original scale. Targets
/// are independent and solved in parallel.
pub fn stlsq(
    theta: &FeatureMatrix,
    targets: &[Vec<f64>],
    target_names: &[String],
    threshold: f64,
    ridge: f64,
) -> Result<SparseModel> {
    let n = theta.values.nrows();
    let m = theta.values.ncols();
    if targets.len() != target_names.len() {
        return Err(Error::Config(format!(
            "{} target columns but {} target names",
            targets.len(),
            target_names.len()
        )));
    }
    for (t, col) in targets.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Config(format!(
                "target '{}' has {} rows, feature matrix has {n}",
                target_names[t],
                col.len()
            )));
        }
    }
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!(
            "sindy.threshold must be >= 0, got {threshold}"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("sindy.ridge must be >= 0, got {ridge}")));
    }

    // Shared standardization scales and twin-pair table.
    let mut col_scale = vec![1.0; m];
    let mut zero_var = vec![false; m];
    for c in 0..m {
        let rms = (theta.values.column(c).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms == 0.0 {
            zero_var[c] = true;
        } else {
            col_scale[c] = rms;
        }
    }
    let partners = cos_partners(&theta.term_names);
    let const_idx = theta.term_names.iter().position(|n| n == "1");

    const MAX_ITERS: usize = 20;
    let fits: Result<Vec<TargetFit>> = targets
        .par_iter()
        .zip(target_names.par_iter())
        .map(|(y, name)| {
            stlsq_single(
                &theta.values,
                &col_scale,
                &zero_var,
                &partners,
                const_idx,
                y,
                name,
                threshold,
                ridge,
                MAX_ITERS,
            )
        })
        .collect();
    let fits = fits?;

    let mut model = SparseModel {
        target_names: target_names.to_vec(),
        term_names: theta.term_names.clone(),
        coefficients: Vec::with_capacity(fits.len()),
        threshold,
        ridge,
        iterations_used: Vec::with_capacity(fits.len()),
        warnings: theta.warnings.clone(),
    };
    for fit in fits {
        model.coefficients.push(fit.coeffs);
        model.iterations_used.push(fit.iterations);
        model.warnings.extend(fit.warnings);
    }
    Ok(model)
}

/// Predict all targets on a feature matrix, aligning columns by term name.
/// The matrices may order terms differently; any mismatch in the term sets
/// is an error listing the symmetric difference.
pub fn predict(model: &SparseModel, theta: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    let mut map = Vec::with_capacity(model.term_names.len());
    let missing_in_theta: Vec<&String> = model
        .term_names
        .iter()
        .filter(|n| !theta.term_names.contains(n))
        .collect();
    let missing_in_model: Vec<&String> = theta
        .term_names
        .iter()
        .filter(|n| !model.term_names.contains(n))
        .collect();
    if !missing_in_theta.is_empty() || !missing_in_model.is_empty() {
        return Err(Error::Schema(format!(
            "term sets differ: model-only {missing_in_theta:?}, features-only {missing_in_model:?}"
        )));
    }
    for name in &model.term_names {
        map.push(theta.term_names.iter().position(|n| n == name).unwrap());
    }

    let n = theta.values.nrows();
    let mut out = Vec::with_capacity(model.coefficients.len());
    for row in &model.coefficients {
        let mut pred = vec![0.0; n];
        for (c_model, &c_theta) in map.iter().enumerate() {
            let w = row[c_model];
            if w != 0.0 {
                let col = theta.values.column(c_theta);
                for (r, p) in pred.iter_mut().enumerate() {
                    *p += w * col[r];
                }
            }
        }
        out.push(pred);
    }
    Ok(out)
}
