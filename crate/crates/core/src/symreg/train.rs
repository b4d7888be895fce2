//! Risk-seeking policy-gradient search: sample a batch of candidate
//! expressions, refine constants on the most promising, and push the
//! policy toward the upper reward quantile.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::DsrConfig;
use crate::error::{Error, Result};

use super::constants::fit_constants;
use super::eval::{evaluate, reward, std_dev};
use super::grammar::Grammar;
use super::policy::Policy;
use super::tree::ExpressionTree;

/// Outcome of one search: the champion expression, the best-so-far trace
/// (non-decreasing by construction), and how much work was spent.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub best: ExpressionTree,
    pub best_reward: f64,
    /// Best reward after each iteration.
    pub trace: Vec<f64>,
    /// Total candidate expressions evaluated.
    pub candidates: usize,
    pub wall_clock_s: f64,
}

/// The deterministic stream for one sampled candidate.
pub(crate) fn candidate_rng(seed: u64, iteration: usize, index: usize, batch: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 * batch as u64 + index as u64);
    rng
}

/// Indices of the on-or-above-quantile batch members, reward-descending
/// with index ascending as the tie-break, plus the quantile reward r_ε.
/// Exactly ⌈epsilon·n⌉ members are kept.
pub(crate) fn risk_select(rewards: &[f64], epsilon: f64) -> (Vec<usize>, f64) {
    let n = rewards.len();
    let keep = ((epsilon * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rewards[b]
            .partial_cmp(&rewards[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(keep);
    let r_eps = rewards[*order.last().unwrap()];
    (order, r_eps)
}

/// Raw reward of one candidate on the data.
fn score<R: AsRef<[f64]> + Sync>(tree: &ExpressionTree, rows: &[R], y: &[f64]) -> Result<f64> {
    let out = evaluate(tree, rows)?;
    reward(&out.values, y, out.flagged)
}

/// Run the policy-gradient search for a single target.
pub fn train<R: AsRef<[f64]> + Sync>(
    grammar: &Grammar,
    rows: &[R],
    y: &[f64],
    cfg: &DsrConfig,
    seed: u64,
) -> Result<SearchReport> {
    grammar.validate()?;
    if rows.len() != y.len() || y.is_empty() {
        return Err(Error::Config(format!(
            "train: {} data rows but {} target rows",
            rows.len(),
            y.len()
        )));
    }
    if std_dev(y) == 0.0 {
        return Err(Error::Numerics(
            "train: target has zero variance; fit the constant directly instead of searching"
                .into(),
        ));
    }

    let start = std::time::Instant::now();
    let mut policy = Policy::new(grammar);
    let batch = cfg.batch_size;
    let mut best: Option<(f64, ExpressionTree)> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut candidates = 0usize;

    for it in 0..cfg.iterations {
        // Sample and score the batch; per-candidate RNG streams keep the
        // result independent of thread scheduling.
        let sampled: Result<Vec<(ExpressionTree, f64)>> = (0..batch)
            .into_par_iter()
            .map(|idx| {
                let mut rng = candidate_rng(seed, it, idx, batch);
                let tree = ExpressionTree::new(policy.sample(grammar, &mut rng));
                let r = score(&tree, rows, y)?;
                Ok((tree, r))
            })
            .collect();
        let mut pool = sampled?;
        candidates += batch;

        // Constant refinement for the top decile (by raw reward).
        let decile = (batch as f64 / 10.0).ceil() as usize;
        let (top, _) = risk_select(
            &pool.iter().map(|(_, r)| *r).collect::<Vec<f64>>(),
            decile as f64 / batch as f64,
        );
        let refined: Result<Vec<(usize, ExpressionTree, f64)>> = top
            .par_iter()
            .filter(|&&i| !pool[i].0.constants.is_empty())
            .map(|&i| {
                let fitted = fit_constants(&pool[i].0, rows, y, cfg.const_budget);
                let r = score(&fitted, rows, y)?;
                Ok((i, fitted, r))
            })
            .collect();
        for (i, fitted, r) in refined? {
            if r >= pool[i].1 {
                pool[i] = (fitted, r);
            }
        }

        // Track the champion.
        for (tree, r) in &pool {
            if best.as_ref().map_or(true, |(br, _)| r > br) {
                best = Some((*r, tree.clone()));
            }
        }
        let best_now = best.as_ref().map(|(r, _)| *r).unwrap();
        trace.push(best_now);

        if best_now >= cfg.early_stop_reward {
            break;
        }

        // Risk-seeking update: only the top quantile carries weight.
        let rewards: Vec<f64> = pool.iter().map(|(_, r)| *r).collect();
        let (kept, r_eps) = risk_select(&rewards, cfg.epsilon);
        let mut grad = policy.zero_grad();
        let k = kept.len() as f64;
        for &i in &kept {
            let w = (rewards[i] - r_eps) / k;
            if w != 0.0 {
                policy.accumulate_log_prob_grad(grammar, &pool[i].0.tokens, w, &mut grad);
            }
        }
        if cfg.entropy_weight > 0.0 {
            let w = cfg.entropy_weight / batch as f64;
            for (tree, _) in &pool {
                policy.accumulate_entropy_grad(grammar, &tree.tokens, w, &mut grad);
            }
        }
        policy.apply(&grad, cfg.learning_rate);
        policy.check_finite(it)?;
    }

    let (best_reward, best_tree) = best.unwrap();
    Ok(SearchReport {
        best: best_tree,
        best_reward,
        trace,
        candidates,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
