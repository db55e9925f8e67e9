//! The three subcommands. Each returns its output as text; `run` decides
//! where it goes.

use std::fmt::Write as _;
use std::path::Path;

use eceth_core::calibration::PlotRow;
use eceth_core::data::{load_csv, write_text, Dataset};
use eceth_core::error::EcethError;
use eceth_core::estimator::{BinCount, EstimatorKind};
use eceth_core::inference::{bootstrap_with_point, test_miscalibration, BootstrapResult, TestResult};
use eceth_core::pipeline::run_pipeline;
use eceth_core::rng::derive_seed;
use eceth_core::scores::ScoreKind;
use eceth_core::simbench::{emit_tables, run_replicates_both, SimResult, SimScenario, TableFormat};
use serde::Serialize;

use crate::config::{RunConfig, SimGrid};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

fn load_input(config: &RunConfig) -> Result<Dataset, CliError> {
    let Some(path) = &config.input else {
        return Err(CliError::Validation("no input CSV; pass --input <path>".into()));
    };
    let Some(pred) = &config.columns.prediction else {
        return Err(missing_predictions("(none)"));
    };
    load_csv(path, &config.columns).map_err(|e| match e {
        EcethError::MissingColumn(ref c) if c == pred => missing_predictions(pred),
        other => other.into(),
    })
}

fn missing_predictions(name: &str) -> CliError {
    CliError::Validation(format!(
        "prediction column `{name}` not found. This tool evaluates CATE predictions produced \
         elsewhere; add them to the CSV and name the column with --prediction-col <name>"
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct BinReport {
    pub requested: BinCount,
    pub resolved: usize,
    pub used: usize,
    pub merged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaReport {
    pub raw: f64,
    pub truncated: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AteReport {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReport {
    pub estimator: EstimatorKind,
    pub resamples: usize,
    pub level: f64,
    pub se: f64,
    pub ci: Interval,
    pub truncated_ci: Interval,
    pub redraws: usize,
}

impl BootstrapReport {
    fn new(b: &BootstrapResult, estimator: EstimatorKind, level: f64) -> Self {
        BootstrapReport {
            estimator,
            resamples: b.resamples,
            level,
            se: b.se,
            ci: Interval {
                low: b.ci_low,
                high: b.ci_high,
            },
            truncated_ci: Interval {
                low: b.truncated_ci_low,
                high: b.truncated_ci_high,
            },
            redraws: b.redraws,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: RunConfig,
    pub n: usize,
    pub treated: usize,
    pub score_kind: ScoreKind,
    pub bins: BinReport,
    pub ate: AteReport,
    pub plug_in: ThetaReport,
    pub robust: ThetaReport,
    pub bootstrap: Option<BootstrapReport>,
    pub tests: Vec<TestResult>,
    pub calibration_table: Vec<PlotRow>,
}

pub fn evaluate(config: &RunConfig) -> Result<EvaluateReport, CliError> {
    let dataset = load_input(config)?;
    let pipeline = config.pipeline_config();
    let point = run_pipeline(&dataset, &pipeline)?;
    let est = &point.estimates;

    let boot = if config.bootstrap > 0 {
        Some(bootstrap_with_point(&dataset, &pipeline, &point, &config.bootstrap_options())?)
    } else {
        None
    };
    let tests = match &boot {
        Some(b) => config
            .epsilon
            .iter()
            .map(|&eps| test_miscalibration(b.point, b.se, eps, config.alpha()))
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };

    let theta = |kind| {
        let e = est.get(kind);
        ThetaReport {
            raw: e.theta,
            truncated: e.truncated_theta,
        }
    };
    Ok(EvaluateReport {
        schema_version: SCHEMA_VERSION,
        command: "evaluate",
        config: config.clone(),
        n: dataset.len(),
        treated: dataset.treated_count(),
        score_kind: point.scores.kind,
        bins: BinReport {
            requested: config.bins,
            resolved: est.requested_bins,
            used: est.robust.bins,
            merged: est.robust.merged_bins,
        },
        ate: AteReport {
            estimate: point.scores.mean(),
            se: point.scores.mean_se(),
        },
        plug_in: theta(EstimatorKind::PlugIn),
        robust: theta(EstimatorKind::Robust),
        bootstrap: boot.as_ref().map(|b| BootstrapReport::new(b, config.estimator, config.level)),
        tests,
        calibration_table: est.curve.plot_rows(),
    })
}

/// Calibration-plot CSV. `reference` is the 45° line (perfect calibration)
/// evaluated at the bin's mean prediction.
pub fn plot_data(config: &RunConfig) -> Result<String, CliError> {
    let dataset = load_input(config)?;
    let point = run_pipeline(&dataset, &config.pipeline_config())?;
    let mut out = String::from("bin_index,delta_low,delta_high,mean_delta,gamma_hat,count,reference\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in point.estimates.curve.plot_rows() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.bin_index,
            r.delta_low,
            r.delta_high,
            opt(r.mean_delta),
            opt(r.gamma_hat),
            r.count,
            opt(r.mean_delta),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: RunConfig,
    pub robust: Vec<SimResult>,
    pub plug_in: Vec<SimResult>,
}

impl SimulateReport {
    pub fn tables_markdown(&self) -> String {
        format!(
            "## Robust estimator\n\n{}\n## Plug-in estimator\n\n{}",
            emit_tables(&self.robust, TableFormat::Markdown),
            emit_tables(&self.plug_in, TableFormat::Markdown)
        )
    }
}

pub fn simulate(config: &RunConfig) -> Result<SimulateReport, CliError> {
    let grid: &SimGrid = config.simulate.as_ref().ok_or_else(|| {
        CliError::Validation("simulate needs a `simulate` grid in the --config file".into())
    })?;
    RunConfig::validate_grid(grid)?;
    let mut robust = Vec::new();
    let mut plug_in = Vec::new();
    for (cell, (alpha, n, p)) in grid.cells().into_iter().enumerate() {
        let scenario = SimScenario {
            setting: grid.setting,
            n,
            alpha,
            extra_dims: p,
            misspecify_propensity: grid.misspecify_propensity,
            score: grid.score,
            estimator: config.estimator,
            bins: config.bin_settings(),
            seed: derive_seed(config.seed(), cell as u64),
            replicates: grid.replicates,
            learners: grid.learners.clone(),
        };
        let (pl, rb) = run_replicates_both(&scenario).map_err(|e| {
            let msg = format!("grid cell (alpha={alpha}, n={n}, p={p}): {e}");
            if e.is_validation() {
                CliError::Validation(msg)
            } else {
                CliError::Runtime(msg)
            }
        })?;
        plug_in.push(pl);
        robust.push(rb);
    }
    Ok(SimulateReport {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        config: config.clone(),
        robust,
        plug_in,
    })
}

/// Writes `tables.md`, `tables_robust.csv`, `tables_plug_in.csv` and
/// `raw.json` into `dir`.
pub fn write_simulation(report: &SimulateReport, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_text(&dir.join("tables.md"), &report.tables_markdown())?;
    write_text(&dir.join("tables_robust.csv"), &emit_tables(&report.robust, TableFormat::Csv))?;
    write_text(&dir.join("tables_plug_in.csv"), &emit_tables(&report.plug_in, TableFormat::Csv))?;
    write_text(&dir.join("raw.json"), &to_json(report)?)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
