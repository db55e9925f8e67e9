//! Run configuration: JSON file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use eceth_core::data::ColumnSpec;
use eceth_core::estimator::{BinCount, BinSettings, EstimatorKind};
use eceth_core::inference::BootstrapOptions;
use eceth_core::nuisance::{CrossFitPlan, OutcomeSpec, PropensitySpec, ScoreMethod, DEFAULT_CLIP, DEFAULT_FOLDS};
use eceth_core::pipeline::PipelineConfig;
use eceth_core::scores::Pooling;
use eceth_core::simbench::{SimLearners, Setting};
use eceth_core::calibration::BinStrategy;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable consulted when neither the flags nor the config
/// file set a seed.
pub const SEED_ENV: &str = "ECETH_SEED";

/// Everything a run depends on. Serialized into every report so a run can
/// be repeated from its own output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: ColumnSpec,
    pub score: ScoreMethod,
    /// Treatment probability fixed by design; replaces the propensity model.
    pub known_pi: Option<f64>,
    pub propensity: PropensitySpec,
    pub outcome_model: OutcomeSpec,
    pub folds: usize,
    pub pooling: Pooling,
    pub clip: f64,
    pub bins: BinCount,
    pub bin_strategy: BinStrategy,
    pub loo: bool,
    /// Estimator bootstrapped and tested.
    pub estimator: EstimatorKind,
    /// Bootstrap resamples; 0 skips the bootstrap.
    pub bootstrap: usize,
    pub freeze_nuisance: bool,
    /// Confidence level of the interval; tests run at `1 − level`.
    pub level: f64,
    pub epsilon: Vec<f64>,
    pub seed: Option<u64>,
    /// Worker cap. Does not affect results, so it is not echoed.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub simulate: Option<SimGrid>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: ColumnSpec::default(),
            score: ScoreMethod::Aipw,
            known_pi: None,
            propensity: PropensitySpec::default(),
            outcome_model: OutcomeSpec::default(),
            folds: DEFAULT_FOLDS,
            pooling: Pooling::Pooled,
            clip: DEFAULT_CLIP,
            bins: BinCount::Auto,
            bin_strategy: BinStrategy::EqualFrequency,
            loo: true,
            estimator: EstimatorKind::Robust,
            bootstrap: 1000,
            freeze_nuisance: false,
            level: 0.95,
            epsilon: Vec::new(),
            seed: None,
            threads: None,
            out: None,
            simulate: None,
        }
    }
}

/// Scenario grid for `simulate`: every combination of `alphas × ns ×
/// extra_dims` becomes one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimGrid {
    pub setting: Setting,
    pub score: ScoreMethod,
    pub alphas: Vec<f64>,
    pub ns: Vec<usize>,
    pub extra_dims: Vec<usize>,
    /// Skip cells whose noise dimension exceeds this fraction of `n`.
    pub max_extra_fraction: Option<f64>,
    pub misspecify_propensity: bool,
    pub replicates: usize,
    pub learners: SimLearners,
}

impl Default for SimGrid {
    fn default() -> Self {
        SimGrid {
            setting: Setting::Observational,
            score: ScoreMethod::Aipw,
            alphas: vec![0.0, 0.15, 0.3],
            ns: vec![500, 1000, 2000, 4000],
            extra_dims: vec![0],
            max_extra_fraction: None,
            misspecify_propensity: false,
            replicates: 200,
            learners: SimLearners::default(),
        }
    }
}

impl SimGrid {
    /// `(alpha, n, extra_dims)` of every cell, in grid order.
    pub fn cells(&self) -> Vec<(f64, usize, usize)> {
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            for &n in &self.ns {
                for &p in &self.extra_dims {
                    if let Some(f) = self.max_extra_fraction {
                        if p as f64 > f * n as f64 {
                            continue;
                        }
                    }
                    out.push((alpha, n, p));
                }
            }
        }
        out
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    /// Fills the seed from the environment when still unset, then 0.
    pub fn resolve_seed(&mut self, env: Option<&str>) -> Result<(), CliError> {
        if self.seed.is_none() {
            self.seed = match env {
                Some(v) => Some(v.trim().parse().map_err(|_| {
                    CliError::Validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))
                })?),
                None => Some(0),
            };
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.level
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if let Some(pi) = self.known_pi {
            if !(pi > 0.0 && pi < 1.0) {
                return bad(format!("--known-pi must lie in (0, 1), got {pi}"));
            }
        }
        if self.folds < 2 {
            return bad(format!("--folds must be at least 2, got {}", self.folds));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return bad(format!("clip must lie in (0, 0.5), got {}", self.clip));
        }
        if self.bootstrap == 1 {
            return bad("--bootstrap needs at least 2 resamples (or 0 to skip)".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("--level must lie in (0, 1), got {}", self.level));
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return bad(format!("--epsilon values must be finite and non-negative, got {e}"));
        }
        if !self.epsilon.is_empty() && self.bootstrap == 0 {
            return bad("--epsilon tests need a bootstrap standard error; set --bootstrap".into());
        }
        if self.threads == Some(0) {
            return bad("--threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn validate_grid(grid: &SimGrid) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if grid.alphas.is_empty() || grid.ns.is_empty() || grid.extra_dims.is_empty() {
            return bad("simulate grid needs non-empty alphas, ns and extra_dims".into());
        }
        if let Some(a) = grid.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("simulate alpha must lie in [0, 1], got {a}"));
        }
        if let Some(n) = grid.ns.iter().find(|n| **n < 2) {
            return bad(format!("simulate n must be at least 2, got {n}"));
        }
        if grid.replicates < 2 {
            return bad(format!("simulate needs at least 2 replicates, got {}", grid.replicates));
        }
        if grid.setting == Setting::Rct && grid.misspecify_propensity {
            return bad("the rct setting uses the known propensity; misspecify_propensity does not apply".into());
        }
        Ok(())
    }

    pub fn propensity_spec(&self) -> PropensitySpec {
        match self.known_pi {
            Some(pi) => PropensitySpec::Known { pi },
            None => self.propensity.clone(),
        }
    }

    pub fn bin_settings(&self) -> BinSettings {
        BinSettings {
            bins: self.bins,
            strategy: self.bin_strategy,
            loo: self.loo,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            score: self.score,
            plan: CrossFitPlan {
                folds: self.folds,
                pooling: self.pooling,
                propensity: self.propensity_spec(),
                outcome: (self.score == ScoreMethod::Aipw).then(|| self.outcome_model.clone()),
                clip: self.clip,
                seed: self.seed(),
            },
            bins: self.bin_settings(),
            estimator: self.estimator,
        }
    }

    pub fn bootstrap_options(&self) -> BootstrapOptions {
        BootstrapOptions {
            resamples: self.bootstrap,
            alpha: self.alpha(),
            seed: self.seed(),
            freeze_nuisance: self.freeze_nuisance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_partial_files() {
        let cfg: RunConfig = serde_json::from_str(r#"{"bins": "auto", "bin_strategy": "width", "known_pi": 0.5}"#).unwrap();
        assert_eq!(cfg.bins, BinCount::Auto);
        assert_eq!(cfg.bin_strategy, BinStrategy::EqualWidth);
        assert_eq!(cfg.folds, DEFAULT_FOLDS);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let fixed: RunConfig = serde_json::from_str(r#"{"bins": 10}"#).unwrap();
        assert_eq!(fixed.bins, BinCount::Fixed(10));
    }

    #[test]
    fn seed_fallback_order() {
        let mut c = RunConfig::default();
        c.resolve_seed(Some("42")).unwrap();
        assert_eq!(c.seed, Some(42));
        let mut c = RunConfig { seed: Some(7), ..Default::default() };
        c.resolve_seed(Some("42")).unwrap();
        assert_eq!(c.seed, Some(7));
        let mut c = RunConfig::default();
        c.resolve_seed(None).unwrap();
        assert_eq!(c.seed, Some(0));
        assert!(RunConfig::default().resolve_seed(Some("x")).is_err());
    }

    #[test]
    fn grid_cells_respect_dimension_cap() {
        let g = SimGrid {
            ns: vec![500, 1000],
            alphas: vec![0.15],
            extra_dims: vec![50, 100],
            max_extra_fraction: Some(0.1),
            ..Default::default()
        };
        assert_eq!(g.cells(), vec![(0.15, 500, 50), (0.15, 1000, 50), (0.15, 1000, 100)]);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig { level: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { epsilon: vec![0.1], bootstrap: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let g = SimGrid { alphas: vec![1.5], ..Default::default() };
        assert!(RunConfig::validate_grid(&g).is_err());
    }
}
