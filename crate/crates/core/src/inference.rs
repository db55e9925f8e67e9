//! Nonparametric bootstrap and the one-sided miscalibration test.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{EcethError, Result};
use crate::estimator::estimate;
use crate::normal::{normal_cdf, normal_quantile};
use crate::pipeline::{predictions, run_pipeline, run_pipeline_units, PipelineConfig, PipelineOutput};
use crate::rng::{child_seed, rng_from, Stream};
use crate::scores::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    /// Two-sided miscoverage; the CI spans quantiles `alpha/2` and `1 − alpha/2`.
    pub alpha: f64,
    pub seed: u64,
    /// Reuse the original cross-fit scores instead of refitting the nuisance
    /// models inside every resample.
    pub freeze_nuisance: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            resamples: 1000,
            alpha: 0.05,
            seed: 0,
            freeze_nuisance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub resamples: usize,
    pub estimates: Vec<f64>,
    pub point: f64,
    pub truncated_point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub truncated_ci_low: f64,
    pub truncated_ci_high: f64,
    pub se: f64,
    pub alpha: f64,
    /// Resamples discarded because one treatment arm was missing.
    pub redraws: usize,
}

/// Quantile of sorted data with linear interpolation between order
/// statistics at position `(len − 1)·p`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample standard deviation (divisor `len − 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Draws `n` row indices with replacement, redrawing while one arm is
/// missing. Returns the rows and the number of rejected draws.
fn draw_rows(treatment: &[bool], seed: u64, max_redraws: usize) -> Result<(Vec<usize>, usize)> {
    let n = treatment.len();
    let mut rng = rng_from(seed);
    let mut redraws = 0;
    loop {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let treated = rows.iter().filter(|&&i| treatment[i]).count();
        if treated > 0 && treated < n {
            return Ok((rows, redraws));
        }
        redraws += 1;
        if redraws > max_redraws {
            return Err(EcethError::InfeasibleBootstrap { redraws });
        }
    }
}

fn resample_scores(scores: &ScoreSet, rows: &[usize]) -> ScoreSet {
    ScoreSet {
        scores: rows.iter().map(|&i| scores.scores[i]).collect(),
        kind: scores.kind,
        fold_ids: scores
            .fold_ids
            .as_ref()
            .map(|f| rows.iter().map(|&i| f[i]).collect()),
        pooling: scores.pooling,
        units: Some(match &scores.units {
            Some(u) => rows.iter().map(|&i| u[i]).collect(),
            None => rows.to_vec(),
        }),
    }
}

/// Bootstrap around an already computed point estimate.
pub fn bootstrap_with_point(
    dataset: &Dataset,
    config: &PipelineConfig,
    point: &PipelineOutput,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if options.resamples < 2 {
        return Err(EcethError::InvalidConfig(format!(
            "bootstrap needs at least 2 resamples, got {}",
            options.resamples
        )));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(EcethError::InvalidConfig(format!(
            "bootstrap alpha must lie in (0, 1), got {}",
            options.alpha
        )));
    }
    let delta = predictions(dataset)?;
    let b_total = options.resamples;
    let max_redraws = 10 * b_total;

    let draws: Vec<(f64, usize)> = (0..b_total)
        .into_par_iter()
        .map(|b| -> Result<(f64, usize)> {
            let seed = child_seed(options.seed, Stream::Bootstrap, b as u64);
            let (rows, redraws) = draw_rows(dataset.treatment(), seed, max_redraws)?;
            let value = if options.freeze_nuisance {
                let s = resample_scores(&point.scores, &rows);
                let d: Vec<f64> = rows.iter().map(|&i| delta[i]).collect();
                estimate(&s, &d, &config.bins)?.get(config.estimator).theta
            } else {
                let mut cfg = config.clone();
                cfg.plan.seed = child_seed(seed, Stream::Pipeline, 0);
                run_pipeline_units(&dataset.select(&rows), &cfg, Some(&rows))?.headline(config.estimator)
            };
            Ok((value, redraws))
        })
        .collect::<Result<_>>()?;

    let estimates: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let redraws = draws.iter().map(|d| d.1).sum();
    let mut sorted = estimates.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let ci_low = percentile(&sorted, options.alpha / 2.0);
    let ci_high = percentile(&sorted, 1.0 - options.alpha / 2.0);
    let point_value = point.headline(config.estimator);
    Ok(BootstrapResult {
        resamples: b_total,
        se: sample_sd(&estimates),
        estimates,
        point: point_value,
        truncated_point: point_value.max(0.0),
        ci_low,
        ci_high,
        truncated_ci_low: ci_low.max(0.0),
        truncated_ci_high: ci_high.max(0.0),
        alpha: options.alpha,
        redraws,
    })
}

/// Runs the pipeline on the data, then re-runs it on `resamples` bootstrap
/// resamples (refitting nuisance models and re-binning each time unless
/// `freeze_nuisance` is set).
pub fn bootstrap(
    dataset: &Dataset,
    config: &PipelineConfig,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    let point = run_pipeline(dataset, config)?;
    bootstrap_with_point(dataset, config, &point, options)
}

/// Test of `H0: θ ≥ ε` against `H1: θ < ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub epsilon: f64,
    pub t_stat: f64,
    /// `Φ(t)`: small when the estimate sits well below `ε`.
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// `t = (θ̂ − ε)/se`; reject `H0: θ ≥ ε` when `t ≤ z_alpha`.
pub fn test_miscalibration(point: f64, se: f64, epsilon: f64, alpha: f64) -> Result<TestResult> {
    if se == 0.0 {
        return Err(EcethError::DegenerateSe);
    }
    let valid = se > 0.0 && epsilon >= 0.0 && alpha > 0.0 && alpha < 1.0;
    if !valid {
        return Err(EcethError::InvalidConfig(format!(
            "test needs se > 0, epsilon >= 0 and alpha in (0, 1); got se={se}, epsilon={epsilon}, alpha={alpha}"
        )));
    }
    let t_stat = (point - epsilon) / se;
    Ok(TestResult {
        epsilon,
        t_stat,
        p_value: normal_cdf(t_stat),
        alpha,
        reject: t_stat <= normal_quantile(alpha),
    })
}
