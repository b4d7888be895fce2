//! Scalar fit metrics and support-recovery scoring against a reference
//! sparse model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sindy::SparseModel;

/// Mean squared error between a target and a prediction.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Config("mse: empty input vectors".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Config(format!(
            "mse: length mismatch ({} vs {})",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Coefficient of determination 1 − SS_res/SS_tot, with SS_tot taken about
/// the mean of `y`. Unbounded below (an anti-correlated predictor scores
/// negative), never above 1.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Config("r2: empty input vectors".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Config(format!(
            "r2: length mismatch ({} vs {})",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    if ss_tot == 0.0 {
        return Err(Error::Numerics(
            "r2 is undefined for a zero-variance target".into(),
        ));
    }
    let ss_res = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    Ok(1.0 - ss_res / ss_tot)
}

/// Support precision/recall and coefficient accuracy for one target row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecovery {
    pub target: String,
    pub precision: f64,
    pub recall: f64,
    /// Max relative coefficient error over the terms both supports share.
    pub max_rel_error: f64,
}

/// Recovery summary for a whole model: per-target rows plus micro-averaged
/// totals (aggregate true/false positive counts across targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub precision: f64,
    pub recall: f64,
    pub max_rel_error: f64,
    pub per_target: Vec<TargetRecovery>,
}

/// Compare a fitted model's support and coefficients against a reference
/// with the same term vocabulary and target list.
pub fn compare_support(model: &SparseModel, truth: &SparseModel) -> Result<RecoverySummary> {
    if model.term_names != truth.term_names {
        return Err(Error::Schema(
            "compare_support: term vocabularies differ".into(),
        ));
    }
    if model.target_names != truth.target_names {
        return Err(Error::Schema(
            "compare_support: target lists differ".into(),
        ));
    }

    let mut per_target = Vec::with_capacity(model.target_names.len());
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut max_rel_all: f64 = 0.0;
    for t in 0..model.target_names.len() {
        let got = model.support(t);
        let want = truth.support(t);
        let tp = got.iter().filter(|c| want.contains(c)).count();
        let fp = got.len() - tp;
        let fn_ = want.len() - tp;
        let mut max_rel: f64 = 0.0;
        for &c in got.iter().filter(|c| want.contains(c)) {
            let rel = (model.coefficients[t][c] - truth.coefficients[t][c]).abs()
                / truth.coefficients[t][c].abs();
            max_rel = max_rel.max(rel);
        }
        per_target.push(TargetRecovery {
            target: model.target_names[t].clone(),
            precision: if got.is_empty() {
                1.0
            } else {
                tp as f64 / got.len() as f64
            },
            recall: if want.is_empty() {
                1.0
            } else {
                tp as f64 / want.len() as f64
            },
            max_rel_error: max_rel,
        });
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        max_rel_all = max_rel_all.max(max_rel);
    }
    Ok(RecoverySummary {
        precision: if tp_all + fp_all == 0 {
            1.0
        } else {
            tp_all as f64 / (tp_all + fp_all) as f64
        },
        recall: if tp_all + fn_all == 0 {
            1.0
        } else {
            tp_all as f64 / (tp_all + fn_all) as f64
        },
        max_rel_error: max_rel_all,
        per_target,
    })
}
