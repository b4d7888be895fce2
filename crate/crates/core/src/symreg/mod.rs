//! Deep symbolic regression over dataset columns.
//!
//! Expressions are prefix token trees over `{+, −, ×, ÷, sin, cos}`, the
//! dataset columns, and fittable constants. Two engines search the same
//! space with the same reward `1 / (1 + NRMSE)`:
//!
//! * [`train`] — an autoregressive policy (small tanh network conditioned
//!   on parent/sibling/depth) trained with a risk-seeking policy gradient:
//!   only the top `epsilon` quantile of each batch contributes.
//! * [`gp_search`] — a genetic-programming baseline with tournament
//!   selection, subtree crossover, and point/subtree mutation.
//!
//! Both refine the constants of their most promising candidates with
//! Nelder–Mead. [`DsrModel`] is the serializable result: one recovered
//! expression per derivative target, self-describing enough to re-evaluate
//! without the original configuration.

pub mod constants;
pub mod eval;
pub mod gp;
pub mod grammar;
pub mod policy;
pub mod train;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::config::{DsrConfig, DsrEngine};
use crate::error::{Error, Result};

pub use eval::{evaluate, reward, EvalResult};
pub use gp::gp_search;
pub use grammar::{Grammar, Token};
pub use policy::Policy;
pub use train::{train, SearchReport};
pub use tree::ExpressionTree;

/// Dispatch a single-target search to the engine named in the config.
pub fn search<R: AsRef<[f64]> + Sync>(
    grammar: &Grammar,
    rows: &[R],
    y: &[f64],
    cfg: &DsrConfig,
    seed: u64,
) -> Result<SearchReport> {
    match cfg.engine {
        DsrEngine::Policy => train(grammar, rows, y, cfg, seed),
        DsrEngine::Gp => gp_search(grammar, rows, y, cfg, seed),
    }
}

/// The winning expression for one derivative target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsrTargetResult {
    /// Derivative target name, e.g. `d_sigma_p`.
    pub target: String,
    /// Human-readable infix form with fitted constants inlined.
    pub expression: String,
    /// Prefix token names (authoritative; `expression` is derived).
    pub tokens: Vec<String>,
    /// Fitted values for each `const` token, in placeholder order.
    pub constants: Vec<f64>,
    pub reward: f64,
    /// Best reward after each iteration/generation.
    pub trace: Vec<f64>,
    /// Expressions evaluated over the whole search.
    pub candidates: usize,
}

/// Serializable symbolic-regression result: per-target expressions plus
/// the grammar needed to re-evaluate them. Contains no wall-clock data, so
/// identical runs produce byte-identical files; runtimes live in the
/// timings sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsrModel {
    pub engine: DsrEngine,
    /// Dataset columns the variable tokens index, in order.
    pub columns: Vec<String>,
    pub max_length: usize,
    pub targets: Vec<DsrTargetResult>,
}

impl DsrModel {
    /// Reconstruct the grammar the expressions were searched under.
    pub fn grammar(&self) -> Result<Grammar> {
        Grammar::new(self.columns.clone(), self.max_length)
    }

    /// Rebuild the expression tree for one stored target.
    pub fn tree(&self, target: usize) -> Result<ExpressionTree> {
        let g = self.grammar()?;
        let t = &self.targets[target];
        ExpressionTree::from_token_names(&t.tokens, &t.constants, &g)
    }

    /// Evaluate every stored expression on dataset rows (targets × rows).
    /// Guarded-division substitutions are kept as-is: a model that needs
    /// the guard scores accordingly.
    pub fn predict<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        let g = self.grammar()?;
        self.targets
            .iter()
            .map(|t| {
                let tree = ExpressionTree::from_token_names(&t.tokens, &t.constants, &g)?;
                Ok(evaluate(&tree, rows)?.values)
            })
            .collect()
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("model serialization failed: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<DsrModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: DsrModel = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: invalid model JSON: {e}", path.display())))?;
        model.grammar()?;
        Ok(model)
    }

    /// Package a search result as a stored target entry.
    pub fn target_from_report(
        target: &str,
        report: &SearchReport,
        grammar: &Grammar,
    ) -> DsrTargetResult {
        DsrTargetResult {
            target: target.to_string(),
            expression: report.best.infix(grammar),
            tokens: report.best.token_names(grammar),
            constants: report.best.constants.clone(),
            reward: report.best_reward,
            trace: report.trace.clone(),
            candidates: report.candidates,
        }
    }
}
