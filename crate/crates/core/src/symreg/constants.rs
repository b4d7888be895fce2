//! Nelder–Mead refinement of the constant placeholders in a candidate
//! expression.

use super::eval::evaluate;
use super::grammar::Token;
use super::tree::ExpressionTree;

/// Mean squared error of the tree with trial constants; +inf when the
/// evaluation is flagged or non-finite, so such trials are never selected.
fn objective<R: AsRef<[f64]>>(
    tree: &ExpressionTree,
    trial: &[f64],
    rows: &[R],
    y: &[f64],
) -> f64 {
    let mut probe = tree.clone();
    probe.constants = trial.to_vec();
    let out = match evaluate(&probe, rows) {
        Ok(o) => o,
        Err(_) => return f64::INFINITY,
    };
    if out.flagged {
        return f64::INFINITY;
    }
    let n = y.len() as f64;
    let mse = out
        .values
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

/// Fit the tree's constants to `y` by Nelder–Mead, capped at `budget`
/// objective evaluations. Trees without constants return unchanged. The
/// search starts from the tree's current constants (all ones for a freshly
/// sampled tree) and the best vector ever evaluated is returned, so the
/// result never scores worse than the input.
pub fn fit_constants<R: AsRef<[f64]>>(
    tree: &ExpressionTree,
    rows: &[R],
    y: &[f64],
    budget: usize,
) -> ExpressionTree {
    let n = tree.tokens.iter().filter(|t| **t == Token::Const).count();
    if n == 0 || budget == 0 || rows.is_empty() {
        return tree.clone();
    }

    let mut evals = 0usize;
    let mut best_x = tree.constants.clone();
    let mut best_f = f64::INFINITY;
    let f = |x: &[f64], evals: &mut usize, best_x: &mut Vec<f64>, best_f: &mut f64| -> f64 {
        *evals += 1;
        let v = objective(tree, x, rows, y);
        if v < *best_f {
            *best_f = v;
            *best_x = x.to_vec();
        }
        v
    };

    // Initial simplex: the current constants plus one step per axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let x0 = tree.constants.clone();
    let fx0 = f(&x0, &mut evals, &mut best_x, &mut best_f);
    simplex.push((x0.clone(), fx0));
    for i in 0..n {
        let mut xi = x0.clone();
        xi[i] += 0.25 * xi[i].abs().max(1.0);
        let fx = f(&xi, &mut evals, &mut best_x, &mut best_f);
        simplex.push((xi, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals < budget {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        // Converged only when the simplex is tight in objective *and*
        // coordinates: vertices symmetric about a minimum can carry nearly
        // equal objective values while still being far apart.
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let x_scale = simplex[0].0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if spread.is_finite()
            && spread < 1e-12 * (1.0 + simplex[0].1.abs())
            && diameter < 1e-9 * x_scale
        {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let fr = f(&reflect, &mut evals, &mut best_x, &mut best_f);
        if fr < simplex[0].1 {
            // Try expanding past the reflection.
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let fe = f(&expand, &mut evals, &mut best_x, &mut best_f);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            // Contract toward the centroid, inside or outside.
            let toward = if fr < worst.1 { &reflect } else { &worst.0 };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(toward)
                .map(|(c, t)| c + rho * (t - c))
                .collect();
            let fc = f(&contract, &mut evals, &mut best_x, &mut best_f);
            if fc < worst.1.min(fr) {
                simplex[n] = (contract, fc);
            } else {
                // Shrink everything toward the best vertex.
                let best_v = simplex[0].0.clone();
                for k in 1..=n {
                    let shrunk: Vec<f64> = best_v
                        .iter()
                        .zip(&simplex[k].0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let fs = f(&shrunk, &mut evals, &mut best_x, &mut best_f);
                    simplex[k] = (shrunk, fs);
                    if evals >= budget {
                        break;
                    }
                }
            }
        }
    }

    let mut out = tree.clone();
    if best_f <= fx0 {
        out.constants = best_x;
    }
    out
}
