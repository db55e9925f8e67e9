//! Dataset → cross-fit scores → bins → estimates, as one call.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{EcethError, Result};
use crate::estimator::{estimate, BinSettings, Estimates, EstimatorKind};
use crate::nuisance::{cross_fit_scores_units, CrossFitPlan, ScoreMethod};
use crate::scores::ScoreSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub score: ScoreMethod,
    pub plan: CrossFitPlan,
    pub bins: BinSettings,
    /// Estimator reported as the headline value (bootstrap target).
    pub estimator: EstimatorKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            score: ScoreMethod::Aipw,
            plan: CrossFitPlan::default(),
            bins: BinSettings::default(),
            estimator: EstimatorKind::Robust,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub scores: ScoreSet,
    pub estimates: Estimates,
}

impl PipelineOutput {
    pub fn headline(&self, kind: EstimatorKind) -> f64 {
        self.estimates.get(kind).theta
    }
}

pub(crate) fn predictions(dataset: &Dataset) -> Result<&[f64]> {
    dataset.predictions().ok_or_else(|| {
        EcethError::InvalidConfig("dataset has no CATE prediction column".into())
    })
}

pub fn run_pipeline(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_units(dataset, config, None)
}

/// [`run_pipeline`] on rows that may repeat. `units[i]` identifies the
/// source unit of row `i`; copies share a fold and are left out together
/// from leave-one-out means.
pub fn run_pipeline_units(
    dataset: &Dataset,
    config: &PipelineConfig,
    units: Option<&[usize]>,
) -> Result<PipelineOutput> {
    let delta = predictions(dataset)?;
    let scores = cross_fit_scores_units(dataset, &config.plan, config.score, units)?;
    let estimates = estimate(&scores, delta, &config.bins)?;
    Ok(PipelineOutput { scores, estimates })
}
