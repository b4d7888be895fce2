//! Row-wise expression evaluation with protected division, and the
//! normalized reward shared by both search engines.

use crate::error::{Error, Result};

use super::grammar::Token;
use super::tree::ExpressionTree;

/// Any quotient with |denominator| below this is protected.
pub const DIV_GUARD: f64 = 1e-9;
/// Magnitude substituted for a protected quotient.
pub const DIV_SUBSTITUTE: f64 = 1e9;

/// Evaluation output: one value per row plus a flag set when any row hit
/// the division guard or produced a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub values: Vec<f64>,
    pub flagged: bool,
}

/// Evaluate a tree on each row. Pure; the flag poisons the reward rather
/// than aborting, so searches can keep scoring a batch.
pub fn evaluate<R: AsRef<[f64]>>(tree: &ExpressionTree, rows: &[R]) -> Result<EvalResult> {
    let width = rows.first().map_or(0, |r| r.as_ref().len());
    for tok in &tree.tokens {
        if let Token::Var(v) = tok {
            if *v >= width {
                return Err(Error::Schema(format!(
                    "expression references column {v}, data has {width}"
                )));
            }
        }
    }

    fn eval_row(
        tokens: &[Token],
        constants: &[f64],
        row: &[f64],
        pos: &mut usize,
        const_pos: &mut usize,
        flagged: &mut bool,
    ) -> f64 {
        let tok = tokens[*pos];
        *pos += 1;
        let v = match tok {
            Token::Add | Token::Sub | Token::Mul | Token::Div => {
                let a = eval_row(tokens, constants, row, pos, const_pos, flagged);
                let b = eval_row(tokens, constants, row, pos, const_pos, flagged);
                match tok {
                    Token::Add => a + b,
                    Token::Sub => a - b,
                    Token::Mul => a * b,
                    _ => {
                        if b.abs() < DIV_GUARD {
                            *flagged = true;
                            DIV_SUBSTITUTE * a.signum() * b.signum()
                        } else {
                            a / b
                        }
                    }
                }
            }
            Token::Sin => eval_row(tokens, constants, row, pos, const_pos, flagged).sin(),
            Token::Cos => eval_row(tokens, constants, row, pos, const_pos, flagged).cos(),
            Token::Var(i) => row[i],
            Token::Const => {
                let c = constants[*const_pos];
                *const_pos += 1;
                c
            }
        };
        if !v.is_finite() {
            *flagged = true;
        }
        v
    }

    let mut values = Vec::with_capacity(rows.len());
    let mut flagged = false;
    for row in rows {
        let mut pos = 0;
        let mut const_pos = 0;
        values.push(eval_row(
            &tree.tokens,
            &tree.constants,
            row.as_ref(),
            &mut pos,
            &mut const_pos,
            &mut flagged,
        ));
    }
    Ok(EvalResult { values, flagged })
}

/// Population standard deviation of a target.
pub fn std_dev(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Squashed fitness r = 1 / (1 + NRMSE) in (0, 1]; flagged evaluations
/// score zero.
pub fn reward(yhat: &[f64], y: &[f64], flagged: bool) -> Result<f64> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(Error::Config(format!(
            "reward: length mismatch ({} vs {})",
            yhat.len(),
            y.len()
        )));
    }
    let sd = std_dev(y);
    if sd == 0.0 {
        return Err(Error::Numerics(
            "reward: target has zero variance; fit the constant directly instead of searching"
                .into(),
        ));
    }
    if flagged {
        return Ok(0.0);
    }
    let n = y.len() as f64;
    let rmse = (yhat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(1.0 / (1.0 + rmse / sd))
}
