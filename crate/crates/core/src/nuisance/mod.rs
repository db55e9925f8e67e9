//! Propensity and outcome models, and J-fold cross-fitting of scores.

mod linear;
mod tree;

pub use linear::{Logistic, RidgeOutcome, IRLS_DIVERGENCE, IRLS_MAX_ITER, IRLS_TOL};
pub use tree::{Forest, ForestParams, RegressionTree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, split_units, Dataset};
use crate::error::{EcethError, Result};
use crate::rng::{child_seed, Stream};
use crate::scores::{build_scores, OutcomePredictions, Pooling, PropensitySource, ScoreKind, ScoreSet};

pub const DEFAULT_CLIP: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropensitySpec {
    /// Treatment probability known by design (randomized trial).
    Known { pi: f64 },
    /// Intercept-only model: the treated fraction of the training rows.
    Marginal,
    Logistic {
        #[serde(default)]
        lambda: f64,
    },
    Forest(ForestParams),
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec::Logistic { lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeSpec {
    /// `None` uses `1e-6 · n`.
    Ridge {
        #[serde(default)]
        lambda: Option<f64>,
    },
    Forest(ForestParams),
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec::Forest(ForestParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PropensityFit {
    Constant(f64),
    Logistic(Logistic),
    Forest(Forest),
}

/// Fitted `π̂(x)`, clipped to `[clip, 1 − clip]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    fit: PropensityFit,
    pub clip: f64,
}

impl PropensityModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let raw = match &self.fit {
            PropensityFit::Constant(p) => *p,
            PropensityFit::Logistic(m) => m.predict(x),
            PropensityFit::Forest(f) => f.predict(x),
        };
        raw.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn logistic(&self) -> Option<&Logistic> {
        match &self.fit {
            PropensityFit::Logistic(m) => Some(m),
            _ => None,
        }
    }
}

/// Fitted `μ̂(x, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeModel {
    Ridge(RidgeOutcome),
    /// Treatment is the last input column of the forest.
    Forest(Forest),
}

impl OutcomeModel {
    pub fn predict(&self, x: &[f64], w: bool) -> f64 {
        match self {
            OutcomeModel::Ridge(m) => m.predict(x, w),
            OutcomeModel::Forest(f) => {
                let mut row = Vec::with_capacity(x.len() + 1);
                row.extend_from_slice(x);
                row.push(if w { 1.0 } else { 0.0 });
                f.predict(&row)
            }
        }
    }
}

fn arm_counts(treatment: &[bool]) -> (usize, usize) {
    let treated = treatment.iter().filter(|&&t| t).count();
    (treated, treatment.len() - treated)
}

/// Fits `π̂` on row-major features `x` (`n × d`).
pub fn fit_propensity(
    x: &[f64],
    d: usize,
    treatment: &[bool],
    spec: &PropensitySpec,
    clip: f64,
    seed: u64,
) -> Result<PropensityModel> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(EcethError::InvalidConfig(format!(
            "propensity clip must lie in (0, 0.5), got {clip}"
        )));
    }
    let (treated, control) = arm_counts(treatment);
    if treated == 0 || control == 0 {
        return Err(EcethError::DegenerateTreatment { treated, control });
    }
    let fit = match spec {
        PropensitySpec::Known { pi } => {
            if !(*pi > 0.0 && *pi < 1.0) {
                return Err(EcethError::InvalidPropensity(*pi));
            }
            PropensityFit::Constant(*pi)
        }
        PropensitySpec::Marginal => PropensityFit::Constant(treated as f64 / treatment.len() as f64),
        PropensitySpec::Logistic { lambda } => PropensityFit::Logistic(Logistic::fit(x, treatment, d, *lambda)?),
        PropensitySpec::Forest(params) => {
            let y: Vec<f64> = treatment.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
            PropensityFit::Forest(Forest::fit(x, &y, d, params, seed))
        }
    };
    Ok(PropensityModel { fit, clip })
}

/// Fits `μ̂(x, w)` on row-major features `x` (`n × d`).
pub fn fit_outcome(
    x: &[f64],
    d: usize,
    treatment: &[bool],
    outcome: &[f64],
    spec: &OutcomeSpec,
    seed: u64,
) -> Result<OutcomeModel> {
    let n = outcome.len();
    match spec {
        OutcomeSpec::Ridge { lambda } => {
            let lambda = lambda.unwrap_or(1e-6 * n as f64);
            Ok(OutcomeModel::Ridge(RidgeOutcome::fit(x, treatment, outcome, d, lambda)?))
        }
        OutcomeSpec::Forest(params) => {
            let (treated, control) = arm_counts(treatment);
            if treated < 10 || control < 10 {
                return Err(EcethError::InsufficientData(format!(
                    "tree outcome model needs at least 10 rows per arm ({treated} treated, {control} control)"
                )));
            }
            let mut aug = Vec::with_capacity(n * (d + 1));
            for i in 0..n {
                aug.extend_from_slice(&x[i * d..(i + 1) * d]);
                aug.push(if treatment[i] { 1.0 } else { 0.0 });
            }
            Ok(OutcomeModel::Forest(Forest::fit(&aug, outcome, d + 1, params, seed)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Ipw,
    Aipw,
}

/// How nuisance models are cross-fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub folds: usize,
    pub pooling: Pooling,
    pub propensity: PropensitySpec,
    /// Required for AIPW scores.
    pub outcome: Option<OutcomeSpec>,
    pub clip: f64,
    pub seed: u64,
}

impl Default for CrossFitPlan {
    fn default() -> Self {
        CrossFitPlan {
            folds: DEFAULT_FOLDS,
            pooling: Pooling::Pooled,
            propensity: PropensitySpec::default(),
            outcome: Some(OutcomeSpec::default()),
            clip: DEFAULT_CLIP,
            seed: 0,
        }
    }
}

impl CrossFitPlan {
    pub fn score_kind(&self, method: ScoreMethod) -> ScoreKind {
        let known = matches!(self.propensity, PropensitySpec::Known { .. });
        match (method, known) {
            (ScoreMethod::Ipw, true) => ScoreKind::IpwKnown,
            (ScoreMethod::Ipw, false) => ScoreKind::IpwEstimated,
            (ScoreMethod::Aipw, true) => ScoreKind::AipwKnownPi,
            (ScoreMethod::Aipw, false) => ScoreKind::AipwEstimated,
        }
    }
}

/// Out-of-fold nuisance predictions for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    /// `None` when the propensity is known.
    pub propensity: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub fold_ids: Vec<usize>,
}

/// For each fold, fits the nuisance models on the other folds and predicts
/// on the held-out rows.
pub fn cross_fit_nuisance(
    dataset: &Dataset,
    plan: &CrossFitPlan,
    method: ScoreMethod,
) -> Result<NuisancePredictions> {
    cross_fit_nuisance_units(dataset, plan, method, None)
}

/// [`cross_fit_nuisance`] where rows sharing a unit id (bootstrap copies)
/// are kept in the same fold, so no row is scored by a model trained on
/// its own copy.
pub fn cross_fit_nuisance_units(
    dataset: &Dataset,
    plan: &CrossFitPlan,
    method: ScoreMethod,
    units: Option<&[usize]>,
) -> Result<NuisancePredictions> {
    dataset.require_both_arms()?;
    let assignment = match units {
        Some(u) => {
            if u.len() != dataset.len() {
                return Err(EcethError::Shape {
                    what: "units",
                    expected: dataset.len(),
                    found: u.len(),
                });
            }
            split_units(u, plan.folds, plan.seed)?
        }
        None => split_folds(dataset, plan.folds, plan.seed)?,
    };
    let known = matches!(plan.propensity, PropensitySpec::Known { .. });
    let need_outcome = method == ScoreMethod::Aipw;
    let outcome_spec = match (need_outcome, &plan.outcome) {
        (true, None) => {
            return Err(EcethError::InvalidConfig(
                "AIPW scores need an outcome learner".into(),
            ))
        }
        (true, Some(s)) => Some(s),
        (false, _) => None,
    };
    let n = dataset.len();
    let d = dataset.dim();

    type FoldOut = (Vec<usize>, Vec<f64>, Vec<(f64, f64)>);
    let per_fold: Vec<FoldOut> = (0..plan.folds)
        .into_par_iter()
        .map(|j| -> Result<FoldOut> {
            let held_out = assignment.members(j);
            if known && outcome_spec.is_none() {
                return Ok((held_out, Vec::new(), Vec::new()));
            }
            let train = dataset.select(&assignment.complement(j));
            let seed = child_seed(plan.seed, Stream::FoldModels, j as u64);
            let pi = if known {
                Vec::new()
            } else {
                let model = fit_propensity(
                    train.features(),
                    d,
                    train.treatment(),
                    &plan.propensity,
                    plan.clip,
                    child_seed(seed, Stream::FoldModels, 0),
                )
                .map_err(|e| e.in_fold(j))?;
                held_out.iter().map(|&i| model.predict(dataset.row(i))).collect()
            };
            let mu = match outcome_spec {
                Some(spec) => {
                    let model = fit_outcome(
                        train.features(),
                        d,
                        train.treatment(),
                        train.outcome(),
                        spec,
                        child_seed(seed, Stream::FoldModels, 1),
                    )
                    .map_err(|e| e.in_fold(j))?;
                    held_out
                        .iter()
                        .map(|&i| (model.predict(dataset.row(i), true), model.predict(dataset.row(i), false)))
                        .collect()
                }
                None => Vec::new(),
            };
            Ok((held_out, pi, mu))
        })
        .collect::<Result<_>>()?;

    let mut propensity = (!known).then(|| vec![0.0; n]);
    let mut mu1 = need_outcome.then(|| vec![0.0; n]);
    let mut mu0 = need_outcome.then(|| vec![0.0; n]);
    for (rows, pi, mu) in per_fold {
        for (k, &i) in rows.iter().enumerate() {
            if let Some(p) = propensity.as_mut() {
                p[i] = pi[k];
            }
            if let (Some(m1), Some(m0)) = (mu1.as_mut(), mu0.as_mut()) {
                m1[i] = mu[k].0;
                m0[i] = mu[k].1;
            }
        }
    }
    Ok(NuisancePredictions {
        propensity,
        mu1,
        mu0,
        fold_ids: assignment.fold_of().to_vec(),
    })
}

/// Cross-fit scores: every row's score uses nuisance models fit without
/// the row's fold. With a known propensity and IPW scores no model is fit.
pub fn cross_fit_scores(dataset: &Dataset, plan: &CrossFitPlan, method: ScoreMethod) -> Result<ScoreSet> {
    cross_fit_scores_units(dataset, plan, method, None)
}

/// [`cross_fit_scores`] over rows that may repeat; see
/// [`cross_fit_nuisance_units`]. The unit ids are kept on the score set.
pub fn cross_fit_scores_units(
    dataset: &Dataset,
    plan: &CrossFitPlan,
    method: ScoreMethod,
    units: Option<&[usize]>,
) -> Result<ScoreSet> {
    let kind = plan.score_kind(method);
    let nuisance = cross_fit_nuisance_units(dataset, plan, method, units)?;
    let propensity = match (&plan.propensity, &nuisance.propensity) {
        (PropensitySpec::Known { pi }, _) => PropensitySource::Constant(*pi),
        (_, Some(p)) => PropensitySource::PerRow(p),
        (_, None) => unreachable!("estimated propensities are always produced"),
    };
    let outcome = match (&nuisance.mu1, &nuisance.mu0) {
        (Some(mu1), Some(mu0)) => Some(OutcomePredictions { mu1, mu0 }),
        _ => None,
    };
    let mut set = build_scores(dataset, propensity, outcome, kind)?;
    set.fold_ids = Some(nuisance.fold_ids);
    set.pooling = plan.pooling;
    set.units = units.map(<[usize]>::to_vec);
    Ok(set)
}
