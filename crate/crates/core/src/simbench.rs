//! Monte-Carlo study of the estimators on synthetic trials and
//! observational studies with a known calibration function.
//!
//! Two generative settings are provided. In the randomized setting the
//! prediction is `Δ ~ U[−1, 1]` and treatment is a fair coin; in the
//! observational setting a confounder `X0 ~ N(0, 1)` drives both treatment
//! (`logit P(W=1) = 0.3·X0`) and the prediction (`Δ = 0.5·X0`). In both,
//! `Y(0) = X1 + ε` and `Y(1) = Y(0) + γ(Δ)` with
//! `γ(δ) = (1 − α)δ + αδ²`, so the true calibration error is
//! `α² E[Δ²(1 − Δ)²]`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{EcethError, Result};
use crate::estimator::{BinSettings, EstimatorKind};
use crate::inference::sample_sd;
use crate::nuisance::{CrossFitPlan, ForestParams, OutcomeSpec, PropensitySpec, ScoreMethod, DEFAULT_CLIP, DEFAULT_FOLDS};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::rng::{child_seed, derive_seed, Stream};
use crate::scores::Pooling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Rct,
    Observational,
}

/// Distribution of the prediction `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionDist {
    /// `U[−1, 1]`.
    Uniform,
    /// `N(0, 0.25)`, i.e. `0.5 · N(0, 1)`.
    Normal,
}

/// Calibration function of the simulated predictor: `(1 − α)δ + αδ²`.
pub fn gamma_true(delta: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * delta + alpha * delta * delta
}

/// `α² E[Δ²(1 − Δ)²]` in closed form.
///
/// For `U[−1, 1]`: `E[Δ²] + E[Δ⁴] = 1/3 + 1/5 = 8/15` (odd moments vanish).
/// For `N(0, σ² = 0.25)`: `σ² + 3σ⁴ = 0.4375`.
pub fn theta_true(alpha: f64, dist: PredictionDist) -> f64 {
    let moment = match dist {
        PredictionDist::Uniform => 8.0 / 15.0,
        PredictionDist::Normal => {
            let s2 = 0.25;
            s2 + 3.0 * s2 * s2
        }
    };
    alpha * alpha * moment
}

/// Simulated dataset with both potential outcomes kept for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub dataset: Dataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

fn noise_names(extra: usize) -> impl Iterator<Item = String> {
    (1..=extra).map(|j| format!("z{j}"))
}

fn assemble(
    names: Vec<String>,
    features: Vec<f64>,
    w: Vec<bool>,
    y0: Vec<f64>,
    y1: Vec<f64>,
    delta: Vec<f64>,
) -> SimData {
    let y = w
        .iter()
        .zip(y0.iter().zip(&y1))
        .map(|(&t, (&a, &b))| if t { b } else { a })
        .collect();
    let dataset = Dataset::from_columns(names, features, w, y, Some(delta))
        .expect("simulated columns are consistent");
    SimData { dataset, y0, y1 }
}

/// Randomized trial: `Δ ~ U[−1, 1]`, `W ~ Bernoulli(0.5)`. Features are
/// `x1` followed by `extra_dims` independent `N(0, 1)` noise columns.
pub fn generate_rct(n: usize, alpha: f64, extra_dims: usize, seed: u64) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1 + extra_dims;
    let mut features = Vec::with_capacity(n * d);
    let (mut w, mut y0, mut y1, mut delta) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let dl: f64 = rng.random_range(-1.0..1.0);
        let x1: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        w.push(rng.random_bool(0.5));
        features.push(x1);
        for _ in 0..extra_dims {
            features.push(rng.sample(StandardNormal));
        }
        let base = x1 + eps;
        y0.push(base);
        y1.push(base + gamma_true(dl, alpha));
        delta.push(dl);
    }
    let mut names = vec!["x1".to_string()];
    names.extend(noise_names(extra_dims));
    assemble(names, features, w, y0, y1, delta)
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Observational study: confounder `x0` drives treatment
/// (`P(W=1) = expit(0.3·x0)`) and prediction (`Δ = 0.5·x0`). Features are
/// `x0, x1` followed by `extra_dims` noise columns.
pub fn generate_observational(n: usize, alpha: f64, extra_dims: usize, seed: u64) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 + extra_dims;
    let mut features = Vec::with_capacity(n * d);
    let (mut w, mut y0, mut y1, mut delta) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let x0: f64 = rng.sample(StandardNormal);
        let x1: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        w.push(rng.random::<f64>() < expit(0.3 * x0));
        features.push(x0);
        features.push(x1);
        for _ in 0..extra_dims {
            features.push(rng.sample(StandardNormal));
        }
        let dl = 0.5 * x0;
        let base = x1 + eps;
        y0.push(base);
        y1.push(base + gamma_true(dl, alpha));
        delta.push(dl);
    }
    let mut names = vec!["x0".to_string(), "x1".to_string()];
    names.extend(noise_names(extra_dims));
    assemble(names, features, w, y0, y1, delta)
}

/// Nuisance learners used by the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimLearners {
    pub outcome: OutcomeSpec,
    /// Propensity model for observational data without noise features.
    pub propensity: PropensitySpec,
    /// Propensity model once noise features are added.
    pub propensity_high_dim: PropensitySpec,
    pub folds: usize,
    pub pooling: Pooling,
    pub clip: f64,
}

impl Default for SimLearners {
    fn default() -> Self {
        SimLearners {
            outcome: OutcomeSpec::Forest(ForestParams::default()),
            propensity: PropensitySpec::Logistic { lambda: 0.0 },
            propensity_high_dim: PropensitySpec::Forest(ForestParams::default()),
            folds: DEFAULT_FOLDS,
            pooling: Pooling::Pooled,
            clip: DEFAULT_CLIP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub setting: Setting,
    pub n: usize,
    pub alpha: f64,
    pub extra_dims: usize,
    /// Replace the propensity model by the marginal treated fraction,
    /// ignoring the confounder.
    pub misspecify_propensity: bool,
    pub score: ScoreMethod,
    pub estimator: EstimatorKind,
    pub bins: BinSettings,
    pub seed: u64,
    pub replicates: usize,
    pub learners: SimLearners,
}

impl SimScenario {
    pub fn new(setting: Setting, n: usize, alpha: f64, score: ScoreMethod) -> Self {
        SimScenario {
            setting,
            n,
            alpha,
            extra_dims: 0,
            misspecify_propensity: false,
            score,
            estimator: EstimatorKind::Robust,
            bins: BinSettings::default(),
            seed: 0,
            replicates: 200,
            learners: SimLearners::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EcethError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.n < 2 {
            return Err(EcethError::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.replicates < 2 {
            return Err(EcethError::InvalidConfig(format!(
                "at least 2 replicates are needed, got {}",
                self.replicates
            )));
        }
        if self.setting == Setting::Rct && self.misspecify_propensity {
            return Err(EcethError::InvalidConfig(
                "the randomized setting uses the known propensity; there is nothing to misspecify".into(),
            ));
        }
        Ok(())
    }

    pub fn prediction_dist(&self) -> PredictionDist {
        match self.setting {
            Setting::Rct => PredictionDist::Uniform,
            Setting::Observational => PredictionDist::Normal,
        }
    }

    pub fn theta_true(&self) -> f64 {
        theta_true(self.alpha, self.prediction_dist())
    }

    pub fn propensity_spec(&self) -> PropensitySpec {
        match self.setting {
            Setting::Rct => PropensitySpec::Known { pi: 0.5 },
            Setting::Observational if self.misspecify_propensity => PropensitySpec::Marginal,
            Setting::Observational if self.extra_dims > 0 => self.learners.propensity_high_dim.clone(),
            Setting::Observational => self.learners.propensity.clone(),
        }
    }

    /// Human-readable description of the propensity model, recorded with
    /// every result.
    pub fn propensity_note(&self) -> String {
        match self.propensity_spec() {
            PropensitySpec::Known { pi } => format!("known constant {pi}"),
            PropensitySpec::Marginal => {
                "misspecified: marginal treated fraction, ignores the confounder x0".into()
            }
            PropensitySpec::Logistic { .. } => "logistic regression on all features".into(),
            PropensitySpec::Forest(_) => "bagged regression trees on all features".into(),
        }
    }

    pub fn generate(&self, seed: u64) -> SimData {
        match self.setting {
            Setting::Rct => generate_rct(self.n, self.alpha, self.extra_dims, seed),
            Setting::Observational => generate_observational(self.n, self.alpha, self.extra_dims, seed),
        }
    }

    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            score: self.score,
            plan: CrossFitPlan {
                folds: self.learners.folds,
                pooling: self.learners.pooling,
                propensity: self.propensity_spec(),
                outcome: (self.score == ScoreMethod::Aipw).then(|| self.learners.outcome.clone()),
                clip: self.learners.clip,
                seed,
            },
            bins: self.bins,
            estimator: self.estimator,
        }
    }

    pub fn replicate_seed(&self, index: usize) -> u64 {
        child_seed(self.seed, Stream::Replicate, index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: SimScenario,
    pub estimator: EstimatorKind,
    pub propensity_model: String,
    /// Estimate of every replicate, in replicate order.
    pub estimates: Vec<f64>,
    pub theta_true: f64,
    pub bias: f64,
    pub se: f64,
    pub standardized_bias: f64,
    /// `bias² + se²` with the `R − 1` variance divisor.
    pub mse: f64,
}

impl SimResult {
    pub fn from_estimates(scenario: &SimScenario, estimator: EstimatorKind, estimates: Vec<f64>) -> SimResult {
        let theta_true = scenario.theta_true();
        let r = estimates.len() as f64;
        let bias = estimates.iter().sum::<f64>() / r - theta_true;
        let se = sample_sd(&estimates);
        SimResult {
            scenario: SimScenario {
                estimator,
                ..scenario.clone()
            },
            estimator,
            propensity_model: scenario.propensity_note(),
            estimates,
            theta_true,
            bias,
            se,
            standardized_bias: bias / se,
            mse: bias * bias + se * se,
        }
    }
}

/// Runs every replicate once and scores it with both estimators.
/// Returns `(plug-in, robust)`.
pub fn run_replicates_both(scenario: &SimScenario) -> Result<(SimResult, SimResult)> {
    scenario.validate()?;
    let pairs: Vec<(f64, f64)> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = scenario.replicate_seed(r);
            let data = scenario.generate(derive_seed(seed, 0));
            let out = run_pipeline(&data.dataset, &scenario.pipeline_config(derive_seed(seed, 1)))
                .map_err(|e| EcethError::Replicate {
                    index: r,
                    seed,
                    source: Box::new(e),
                })?;
            Ok((out.estimates.plugin.theta, out.estimates.robust.theta))
        })
        .collect::<Result<_>>()?;
    let plug = pairs.iter().map(|p| p.0).collect();
    let rob = pairs.iter().map(|p| p.1).collect();
    Ok((
        SimResult::from_estimates(scenario, EstimatorKind::PlugIn, plug),
        SimResult::from_estimates(scenario, EstimatorKind::Robust, rob),
    ))
}

/// Replicates for the scenario's own estimator.
pub fn run_replicates(scenario: &SimScenario) -> Result<SimResult> {
    let (plug, rob) = run_replicates_both(scenario)?;
    Ok(match scenario.estimator {
        EstimatorKind::PlugIn => plug,
        EstimatorKind::Robust => rob,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Renders results as one table ordered by `(α, N, P)`, metrics to four
/// decimals.
pub fn emit_tables(results: &[SimResult], format: TableFormat) -> String {
    let mut rows: Vec<&SimResult> = results.iter().collect();
    rows.sort_by(|a, b| {
        let (sa, sb) = (&a.scenario, &b.scenario);
        sa.alpha
            .total_cmp(&sb.alpha)
            .then(sa.n.cmp(&sb.n))
            .then(sa.extra_dims.cmp(&sb.extra_dims))
    });
    let mut out = String::new();
    match format {
        TableFormat::Csv => out.push_str("alpha,n,p,bias,se,s_bias,mse\n"),
        TableFormat::Markdown => {
            out.push_str("| α | N | P | Bias | S.E. | S.bias | MSE |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
        }
    }
    for r in rows {
        let s = &r.scenario;
        let cells = [
            format!("{}", s.alpha),
            s.n.to_string(),
            s.extra_dims.to_string(),
            format!("{:.4}", r.bias),
            format!("{:.4}", r.se),
            format!("{:.4}", r.standardized_bias),
            format!("{:.4}", r.mse),
        ];
        match format {
            TableFormat::Csv => {
                let _ = writeln!(out, "{}", cells.join(","));
            }
            TableFormat::Markdown => {
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_examples() {
        for d in [-1.0, -0.3, 0.0, 0.7] {
            assert_eq!(gamma_true(d, 0.0), d);
        }
        assert_eq!(gamma_true(0.5, 1.0), 0.25);
        assert!((gamma_true(-1.0, 0.3) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn theta_true_values() {
        assert_eq!(theta_true(0.0, PredictionDist::Uniform), 0.0);
        assert_eq!(theta_true(0.0, PredictionDist::Normal), 0.0);
        assert!((theta_true(0.15, PredictionDist::Uniform) - 0.012).abs() < 1e-15);
        assert!((theta_true(0.15, PredictionDist::Normal) - 0.009_843_75).abs() < 1e-15);
    }

    #[test]
    fn rct_construction() {
        let sim = generate_rct(500, 0.3, 2, 4);
        let delta = sim.dataset.predictions().unwrap();
        for i in 0..500 {
            assert!((sim.y1[i] - sim.y0[i] - gamma_true(delta[i], 0.3)).abs() < 1e-12);
            let y = if sim.dataset.treatment()[i] { sim.y1[i] } else { sim.y0[i] };
            assert_eq!(sim.dataset.outcome()[i], y);
        }
        assert_eq!(sim.dataset.dim(), 3);
        assert_eq!(sim.dataset.feature_names()[0], "x1");
    }

    #[test]
    fn observational_construction() {
        let sim = generate_observational(4000, 0.15, 0, 8);
        let ds = &sim.dataset;
        let delta = ds.predictions().unwrap();
        let (mut pos, mut pos_t, mut neg, mut neg_t) = (0, 0, 0, 0);
        for i in 0..ds.len() {
            let x0 = ds.row(i)[0];
            assert_eq!(delta[i], 0.5 * x0);
            if x0 > 0.0 {
                pos += 1;
                pos_t += ds.treatment()[i] as usize;
            } else {
                neg += 1;
                neg_t += ds.treatment()[i] as usize;
            }
        }
        assert!(pos_t as f64 / pos as f64 > neg_t as f64 / neg as f64);
    }

    #[test]
    fn metrics_hand_example() {
        let mut s = SimScenario::new(Setting::Rct, 100, 0.0, ScoreMethod::Ipw);
        s.alpha = (2.0f64 / (8.0 / 15.0)).sqrt(); // θ_true = 2
        let r = SimResult::from_estimates(&s, EstimatorKind::Robust, vec![1.0, 3.0]);
        assert!((r.theta_true - 2.0).abs() < 1e-12);
        assert!(r.bias.abs() < 1e-12);
        assert!((r.se - 2f64.sqrt()).abs() < 1e-12);
        assert!(r.standardized_bias.abs() < 1e-11);
        assert!((r.mse - 2.0).abs() < 1e-11);
    }

    #[test]
    fn scenario_validation() {
        let mut s = SimScenario::new(Setting::Rct, 100, 1.5, ScoreMethod::Ipw);
        assert!(s.validate().is_err());
        s.alpha = 0.1;
        assert!(s.validate().is_ok());
        s.misspecify_propensity = true;
        assert!(s.validate().is_err());
    }

    fn fake(alpha: f64, n: usize, p: usize) -> SimResult {
        let mut s = SimScenario::new(Setting::Observational, n, alpha, ScoreMethod::Aipw);
        s.extra_dims = p;
        SimResult::from_estimates(&s, EstimatorKind::Robust, vec![0.01, 0.03])
    }

    #[test]
    fn tables() {
        assert_eq!(emit_tables(&[], TableFormat::Csv), "alpha,n,p,bias,se,s_bias,mse\n");
        let md = emit_tables(&[], TableFormat::Markdown);
        assert_eq!(md.lines().count(), 2);

        let one = emit_tables(&[fake(0.15, 4000, 0)], TableFormat::Csv);
        let line = one.lines().nth(1).unwrap();
        assert_eq!(line, "0.15,4000,0,0.0102,0.0141,0.7182,0.0003");

        let two = emit_tables(&[fake(0.15, 2000, 0), fake(0.15, 500, 0)], TableFormat::Markdown);
        let ns: Vec<&str> = two.lines().skip(2).map(|l| l.split(" | ").nth(1).unwrap()).collect();
        assert_eq!(ns, vec!["500", "2000"]);
    }
}
