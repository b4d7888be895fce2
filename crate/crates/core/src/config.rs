//! Single-file pipeline configuration: one TOML document drives
//! simulation, dataset construction, both identification engines, and
//! reporting. Unknown keys are rejected everywhere so an archived config
//! says exactly what ran.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DerivativeMode;
use crate::error::{Error, Result};
use crate::features::LibrarySpec;
use crate::model::{ModelParams, STATE_NAMES};
use crate::sim::ReferenceSchedule;

/// Integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Fixed RK4 step, s.
    pub dt: f64,
    /// Total simulated span, s.
    pub t_end: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 2e-5,
            t_end: 1.0,
        }
    }
}

/// Dataset extraction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub mode: DerivativeMode,
    /// Keep every `stride`-th retained sample.
    pub stride: usize,
    /// Standard deviation of Gaussian noise added to state/input columns.
    pub sigma: f64,
    /// Noise seed.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mode: DerivativeMode::Exact,
            stride: 10,
            sigma: 0.0,
            seed: 0,
        }
    }
}

/// Sparse-regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindyConfig {
    /// Pruning threshold on standardized coefficients.
    pub threshold: f64,
    /// Ridge strength on standardized coefficients (0 = plain least
    /// squares).
    pub ridge: f64,
}

impl Default for SindyConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-4,
            ridge: 0.0,
        }
    }
}

/// Which search engine drives the symbolic regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsrEngine {
    /// Risk-seeking policy-gradient sampler.
    Policy,
    /// Genetic-programming baseline.
    Gp,
}

/// Symbolic-regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsrConfig {
    pub engine: DsrEngine,
    /// Training iterations (generations for the GP engine).
    pub iterations: usize,
    /// Expressions sampled per iteration (population size for GP).
    pub batch_size: usize,
    /// Risk-seeking quantile: only the top `epsilon` fraction of a batch
    /// contributes gradient.
    pub epsilon: f64,
    /// Entropy bonus weight.
    pub entropy_weight: f64,
    /// SGD learning rate.
    pub learning_rate: f64,
    /// Maximum expression length in prefix tokens.
    pub max_length: usize,
    /// Nelder–Mead budget for constant fitting per candidate.
    pub const_budget: usize,
    /// Stop as soon as the best reward reaches this level.
    pub early_stop_reward: f64,
    pub seed: u64,
}

impl Default for DsrConfig {
    fn default() -> Self {
        Self {
            engine: DsrEngine::Policy,
            iterations: 200,
            batch_size: 1000,
            epsilon: 0.05,
            entropy_weight: 0.005,
            learning_rate: 0.05,
            max_length: 32,
            const_budget: 200,
            early_stop_reward: 0.999999,
            seed: 0,
        }
    }
}

/// Output and scoring settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Output directory; the CLI `--out` flag overrides it.
    pub outdir: PathBuf,
    /// State names whose derivatives the symbolic regression targets and
    /// the report covers; `None` means all states.
    pub targets: Option<Vec<String>>,
    /// Score on the last-20% window instead of the full trajectory.
    pub holdout: bool,
    /// Also score re-integrated trajectories for full-coverage models.
    pub reintegrate: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            outdir: PathBuf::from("out"),
            targets: None,
            holdout: false,
            reintegrate: false,
        }
    }
}

/// The whole pipeline in one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelParams,
    pub schedule: ReferenceSchedule,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub library: LibrarySpec,
    pub sindy: SindyConfig,
    pub dsr: DsrConfig,
    pub report: ReportConfig,
}

impl PipelineConfig {
    /// Parse a TOML document and validate it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field-path-labeled validation of every section.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(
            self.sim.dt.is_finite() && self.sim.dt > 0.0,
            format!("sim.dt must be positive and finite, got {}", self.sim.dt),
        )?;
        check(
            self.sim.t_end.is_finite() && self.sim.t_end >= self.sim.dt,
            format!(
                "sim.t_end must be finite and >= sim.dt, got {}",
                self.sim.t_end
            ),
        )?;
        check(
            self.dataset.stride >= 1,
            format!("dataset.stride must be >= 1, got {}", self.dataset.stride),
        )?;
        check(
            self.dataset.sigma.is_finite() && self.dataset.sigma >= 0.0,
            format!(
                "dataset.sigma must be finite and >= 0, got {}",
                self.dataset.sigma
            ),
        )?;
        check(
            self.sindy.threshold.is_finite() && self.sindy.threshold >= 0.0,
            format!(
                "sindy.threshold must be finite and >= 0, got {}",
                self.sindy.threshold
            ),
        )?;
        check(
            self.sindy.ridge.is_finite() && self.sindy.ridge >= 0.0,
            format!("sindy.ridge must be finite and >= 0, got {}", self.sindy.ridge),
        )?;
        check(
            self.dsr.iterations >= 1,
            format!("dsr.iterations must be >= 1, got {}", self.dsr.iterations),
        )?;
        check(
            self.dsr.batch_size >= 1,
            format!("dsr.batch_size must be >= 1, got {}", self.dsr.batch_size),
        )?;
        check(
            self.dsr.epsilon > 0.0 && self.dsr.epsilon <= 1.0,
            format!("dsr.epsilon must be in (0, 1], got {}", self.dsr.epsilon),
        )?;
        check(
            self.dsr.entropy_weight.is_finite() && self.dsr.entropy_weight >= 0.0,
            format!(
                "dsr.entropy_weight must be finite and >= 0, got {}",
                self.dsr.entropy_weight
            ),
        )?;
        check(
            self.dsr.learning_rate.is_finite() && self.dsr.learning_rate > 0.0,
            format!(
                "dsr.learning_rate must be positive and finite, got {}",
                self.dsr.learning_rate
            ),
        )?;
        check(
            self.dsr.max_length >= 3,
            format!(
                "dsr.max_length must be >= 3 (the shortest binary expression), got {}",
                self.dsr.max_length
            ),
        )?;
        check(
            self.dsr.early_stop_reward > 0.0 && self.dsr.early_stop_reward <= 1.0,
            format!(
                "dsr.early_stop_reward must be in (0, 1], got {}",
                self.dsr.early_stop_reward
            ),
        )?;
        self.schedule.validate()?;
        crate::features::resolve_terms(&self.library, &crate::dataset::column_names())
            .map_err(|e| Error::Config(format!("library: {e}")))?;
        if let Some(targets) = &self.report.targets {
            check(
                !targets.is_empty(),
                "report.targets must not be empty when present".to_string(),
            )?;
            for name in targets {
                if !STATE_NAMES.contains(&name.as_str()) {
                    return Err(Error::Config(format!(
                        "report.targets: unknown state '{name}' (valid: {})",
                        STATE_NAMES.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of the requested target states, in state order.
    pub fn target_indices(&self) -> Vec<usize> {
        match &self.report.targets {
            None => (0..STATE_NAMES.len()).collect(),
            Some(names) => STATE_NAMES
                .iter()
                .enumerate()
                .filter(|(_, s)| names.iter().any(|n| n == *s))
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// JSON snapshot of the resolved settings, embedded in reports.
    pub fn snapshot(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self)
            .map_err(|e| Error::Parse(format!("config snapshot failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.sim.dt, 2e-5);
        assert_eq!(cfg.schedule.events.len(), 2);
        assert_eq!(cfg.dsr.batch_size, 1000);
    }

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_with_name() {
        let err = PipelineConfig::from_toml("[sim]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(PipelineConfig::from_toml("[nosuchsection]\nx = 1\n").is_err());
    }

    #[test]
    fn negative_dt_names_field_path() {
        let err = PipelineConfig::from_toml("[sim]\ndt = -1e-5\n").unwrap_err();
        assert!(err.to_string().contains("sim.dt"), "{err}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bad_target_name_listed() {
        let err =
            PipelineConfig::from_toml("[report]\ntargets = [\"sigma_p\", \"zz\"]\n").unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
    }

    #[test]
    fn target_indices_follow_state_order() {
        let cfg =
            PipelineConfig::from_toml("[report]\ntargets = [\"sigma_q\", \"sigma_p\"]\n").unwrap();
        assert_eq!(cfg.target_indices(), vec![9, 11]);
        assert_eq!(PipelineConfig::default().target_indices().len(), 15);
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"
[model]
kp_pll = 0.3

[schedule]
initial = [0.4, 0.1]

[[schedule.events]]
time = 0.2
field = "p_ref"
value = 0.9

[sim]
dt = 1e-4
t_end = 0.5

[dataset]
mode = "central_difference"
stride = 5
sigma = 0.001
seed = 7

[library]
poly_degree = 1

[sindy]
threshold = 0.002

[dsr]
engine = "gp"
iterations = 10
batch_size = 50
seed = 3

[report]
outdir = "runs/demo"
targets = ["sigma_p"]
holdout = true
"#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.model.kp_pll, 0.3);
        assert_eq!(cfg.schedule.initial, [0.4, 0.1]);
        assert_eq!(cfg.schedule.events.len(), 1);
        assert_eq!(cfg.sim.dt, 1e-4);
        assert_eq!(cfg.dataset.stride, 5);
        assert_eq!(cfg.library.poly_degree, 1);
        assert_eq!(cfg.sindy.threshold, 0.002);
        assert_eq!(cfg.dsr.engine, DsrEngine::Gp);
        assert_eq!(cfg.report.outdir, PathBuf::from("runs/demo"));
        assert!(cfg.report.holdout);

        // The serialized snapshot reproduces the same config.
        let json = cfg.snapshot().unwrap();
        let back: PipelineConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn epsilon_bounds_checked() {
        let err = PipelineConfig::from_toml("[dsr]\nepsilon = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("dsr.epsilon"), "{err}");
        assert!(PipelineConfig::from_toml("[dsr]\nepsilon = 1.5\n").is_err());
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = PipelineConfig::load(Path::new("/nonexistent/conf.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
