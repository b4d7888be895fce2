//! Genetic-programming search over the same grammar, evaluator, and
//! reward as the policy engine: tournament selection, subtree crossover,
//! point/subtree mutation, single-elite survival.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::DsrConfig;
use crate::error::{Error, Result};

use super::constants::fit_constants;
use super::eval::{evaluate, reward, std_dev};
use super::grammar::{Grammar, Token};
use super::policy::Policy;
use super::train::{candidate_rng, risk_select, SearchReport};
use super::tree::ExpressionTree;

const TOURNAMENT: usize = 4;
const P_CROSSOVER: f64 = 0.7;
const P_MUTATION: f64 = 0.2;
const ELITES: usize = 1;

/// Tokens paired with their constant values, the working form for the
/// variation operators (keeps constants attached to their placeholders).
type Paired = Vec<(Token, Option<f64>)>;

fn to_pairs(tree: &ExpressionTree) -> Paired {
    let mut const_pos = 0;
    tree.tokens
        .iter()
        .map(|t| {
            if *t == Token::Const {
                let v = tree.constants[const_pos];
                const_pos += 1;
                (*t, Some(v))
            } else {
                (*t, None)
            }
        })
        .collect()
}

fn from_pairs(pairs: &Paired) -> ExpressionTree {
    ExpressionTree {
        tokens: pairs.iter().map(|(t, _)| *t).collect(),
        constants: pairs.iter().filter_map(|(_, v)| *v).collect(),
    }
}

/// Half-open range of the subtree rooted at `start`.
fn subtree_range(pairs: &Paired, start: usize) -> std::ops::Range<usize> {
    let mut open = 1usize;
    let mut end = start;
    while open > 0 {
        open = open - 1 + pairs[end].0.arity();
        end += 1;
    }
    start..end
}

/// Uniform random complete subtree of at most `budget` tokens (no length
/// floor: a bare terminal is a valid subtree).
fn random_subtree(grammar: &Grammar, budget: usize, rng: &mut ChaCha20Rng) -> Paired {
    let mut pairs: Paired = Vec::new();
    let mut open = 1usize;
    while open > 0 {
        let allowed: Vec<usize> = (0..grammar.n_tokens())
            .filter(|&i| pairs.len() + open + grammar.token(i).arity() <= budget)
            .collect();
        let tok = grammar.token(allowed[rng.gen_range(0..allowed.len())]);
        let value = (tok == Token::Const).then_some(1.0);
        pairs.push((tok, value));
        open = open - 1 + tok.arity();
    }
    pairs
}

/// Swap a random subtree of `a` for a random subtree of `b`; falls back to
/// cloning `a` when no cut respects the length caps.
fn crossover(a: &Paired, b: &Paired, grammar: &Grammar, rng: &mut ChaCha20Rng) -> Paired {
    for _ in 0..5 {
        let ra = subtree_range(a, rng.gen_range(0..a.len()));
        let rb = subtree_range(b, rng.gen_range(0..b.len()));
        let new_len = a.len() - ra.len() + rb.len();
        if new_len < grammar.min_length || new_len > grammar.max_length {
            continue;
        }
        let mut child = Vec::with_capacity(new_len);
        child.extend_from_slice(&a[..ra.start]);
        child.extend_from_slice(&b[rb]);
        child.extend_from_slice(&a[ra.end..]);
        return child;
    }
    a.clone()
}

/// Point mutation (same-arity token swap) or subtree regrowth, evenly.
fn mutate(pairs: &Paired, grammar: &Grammar, rng: &mut ChaCha20Rng) -> Paired {
    let mut out = pairs.clone();
    let at = rng.gen_range(0..out.len());
    if rng.gen_bool(0.5) {
        // Point: draw a replacement of identical arity.
        let arity = out[at].0.arity();
        let pool: Vec<usize> = (0..grammar.n_tokens())
            .filter(|&i| grammar.token(i).arity() == arity)
            .collect();
        let tok = grammar.token(pool[rng.gen_range(0..pool.len())]);
        let value = match (tok, out[at].1) {
            (Token::Const, Some(v)) => Some(v),
            (Token::Const, None) => Some(1.0),
            _ => None,
        };
        out[at] = (tok, value);
        return out;
    }
    // Subtree: regrow within whatever length budget the rest leaves.
    let r = subtree_range(&out, at);
    let budget = grammar.max_length - (out.len() - r.len());
    let fresh = random_subtree(grammar, budget, rng);
    if out.len() - r.len() + fresh.len() < grammar.min_length {
        return out;
    }
    out.splice(r, fresh);
    out
}

/// Best of `TOURNAMENT` random entrants (ties keep the earlier index).
fn tournament(rewards: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let mut best = rng.gen_range(0..rewards.len());
    for _ in 1..TOURNAMENT {
        let i = rng.gen_range(0..rewards.len());
        if rewards[i] > rewards[best] || (rewards[i] == rewards[best] && i < best) {
            best = i;
        }
    }
    best
}

/// Score the population and refine constants on the top decile.
fn score_population<R: AsRef<[f64]> + Sync>(
    pop: &mut [ExpressionTree],
    rows: &[R],
    y: &[f64],
    const_budget: usize,
) -> Result<Vec<f64>> {
    let mut rewards: Vec<f64> = pop
        .par_iter()
        .map(|tree| {
            let out = evaluate(tree, rows)?;
            reward(&out.values, y, out.flagged)
        })
        .collect::<Result<Vec<f64>>>()?;
    let decile = (pop.len() as f64 / 10.0).ceil() as usize;
    let (top, _) = risk_select(&rewards, decile as f64 / pop.len() as f64);
    let refined: Result<Vec<(usize, ExpressionTree, f64)>> = top
        .par_iter()
        .filter(|&&i| !pop[i].constants.is_empty())
        .map(|&i| {
            let fitted = fit_constants(&pop[i], rows, y, const_budget);
            let out = evaluate(&fitted, rows)?;
            let r = reward(&out.values, y, out.flagged)?;
            Ok((i, fitted, r))
        })
        .collect();
    for (i, fitted, r) in refined? {
        if r >= rewards[i] {
            pop[i] = fitted;
            rewards[i] = r;
        }
    }
    Ok(rewards)
}

/// Run the GP search for a single target. `cfg.batch_size` is the
/// population, `cfg.iterations` the generation count.
pub fn gp_search<R: AsRef<[f64]> + Sync>(
    grammar: &Grammar,
    rows: &[R],
    y: &[f64],
    cfg: &DsrConfig,
    seed: u64,
) -> Result<SearchReport> {
    grammar.validate()?;
    if rows.len() != y.len() || y.is_empty() {
        return Err(Error::Config(format!(
            "gp_search: {} data rows but {} target rows",
            rows.len(),
            y.len()
        )));
    }
    if std_dev(y) == 0.0 {
        return Err(Error::Numerics(
            "gp_search: target has zero variance; fit the constant directly instead of searching"
                .into(),
        ));
    }

    let start = std::time::Instant::now();
    let population = cfg.batch_size;
    // Initial population: uniform masked sampling (the zero policy),
    // per-individual streams as in the policy engine.
    let sampler = Policy::new(grammar);
    let mut pop: Vec<ExpressionTree> = (0..population)
        .into_par_iter()
        .map(|idx| {
            let mut rng = candidate_rng(seed, 0, idx, population);
            ExpressionTree::new(sampler.sample(grammar, &mut rng))
        })
        .collect();
    let mut rewards = score_population(&mut pop, rows, y, cfg.const_budget)?;
    let mut candidates = population;

    let mut best_idx = (0..population)
        .max_by(|&a, &b| rewards[a].partial_cmp(&rewards[b]).unwrap().then(b.cmp(&a)))
        .unwrap();
    let mut best = (rewards[best_idx], pop[best_idx].clone());
    let mut trace = vec![best.0];

    let mut var_rng = candidate_rng(seed, usize::MAX / 2, 0, 1);
    for _gen in 1..cfg.iterations {
        if best.0 >= cfg.early_stop_reward {
            break;
        }
        let parents: Vec<Paired> = pop.iter().map(to_pairs).collect();
        let mut next: Vec<ExpressionTree> = Vec::with_capacity(population);
        next.push(best.1.clone()); // elite
        while next.len() < population {
            let p1 = tournament(&rewards, &mut var_rng);
            let mut child = if var_rng.gen_bool(P_CROSSOVER) {
                let p2 = tournament(&rewards, &mut var_rng);
                crossover(&parents[p1], &parents[p2], grammar, &mut var_rng)
            } else {
                parents[p1].clone()
            };
            if var_rng.gen_bool(P_MUTATION) {
                child = mutate(&child, grammar, &mut var_rng);
            }
            next.push(from_pairs(&child));
        }
        pop = next;
        rewards = score_population(&mut pop, rows, y, cfg.const_budget)?;
        candidates += population - ELITES;

        best_idx = (0..population)
            .max_by(|&a, &b| rewards[a].partial_cmp(&rewards[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        if rewards[best_idx] > best.0 {
            best = (rewards[best_idx], pop[best_idx].clone());
        }
        trace.push(best.0);
    }

    Ok(SearchReport {
        best: best.1,
        best_reward: best.0,
        trace,
        candidates,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
