//! Estimation of the calibration error of conditional average treatment
//! effect (CATE) predictors.
//!
//! Given a dataset with outcomes, binary treatment, covariates and a CATE
//! prediction `Δ`, the crate builds cross-fitted pseudo-outcome scores,
//! bins the predictions, and estimates
//! `θ = E[(γ(Δ) − Δ)²]`, where `γ(δ) = E[Y(1) − Y(0) | Δ = δ]`.
//! A debiased ("robust") estimator and the naive plug-in are both provided,
//! together with bootstrap confidence intervals, a one-sided
//! miscalibration test, and a Monte-Carlo study harness.

pub mod calibration;
pub mod data;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod normal;
pub mod nuisance;
pub mod pipeline;
pub mod rng;
pub mod scores;
pub mod simbench;

pub use calibration::{calibration_curve, make_bins, BinPartition, BinStrategy, CalibrationCurve, PlotRow};
pub use data::{load_csv, read_csv, split_folds, ColumnSpec, Dataset, FoldAssignment, Observation};
pub use error::{EcethError, Result};
pub use estimator::{
    default_bin_count, estimate, theta_plugin, theta_robust, BinCount, BinSettings, EcethEstimate, Estimates,
    EstimatorKind,
};
pub use inference::{bootstrap, bootstrap_with_point, test_miscalibration, BootstrapOptions, BootstrapResult, TestResult};
pub use nuisance::{cross_fit_nuisance, cross_fit_scores, cross_fit_scores_units, CrossFitPlan, OutcomeSpec, PropensitySpec, ScoreMethod};
pub use pipeline::{run_pipeline, run_pipeline_units, PipelineConfig, PipelineOutput};
pub use scores::{build_scores, Pooling, ScoreKind, ScoreSet};
