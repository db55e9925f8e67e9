//! Plug-in and robust (debiased) estimators of the ℓ2 calibration error
//! `θ = E[(γ(Δ) − Δ)²]`.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::calibration::{calibration_curve, loo_value, loo_values_by_unit, make_bins, BinStrategy, CalibrationCurve};
use crate::error::{EcethError, Result};
use crate::scores::{Pooling, ScoreKind, ScoreSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    PlugIn,
    Robust,
}

/// Rule-of-thumb bin count `nint(20 · (n/500)^(2/5))`, clamped to `[2, n]`.
pub fn default_bin_count(n: usize) -> usize {
    let k = (20.0 * (n as f64 / 500.0).powf(0.4)).round() as usize;
    k.max(2).min(n.max(1))
}

/// Requested number of bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinCount {
    /// Resolve with [`default_bin_count`] from the sample size.
    #[default]
    Auto,
    Fixed(usize),
}

impl BinCount {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BinCount::Auto => default_bin_count(n),
            BinCount::Fixed(k) => k,
        }
    }
}

impl fmt::Display for BinCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinCount::Auto => f.write_str("auto"),
            BinCount::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for BinCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BinCount::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(BinCount::Fixed(k)),
            _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
        }
    }
}

impl Serialize for BinCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BinCount::Auto => s.serialize_str("auto"),
            BinCount::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BinCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = BinCount;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"auto\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<BinCount, E> {
                if v == 0 {
                    return Err(E::custom("bin count must be at least 1"));
                }
                Ok(BinCount::Fixed(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<BinCount, E> {
                if v < 1 {
                    return Err(E::custom("bin count must be at least 1"));
                }
                Ok(BinCount::Fixed(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<BinCount, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcethEstimate {
    pub theta: f64,
    /// `max(theta, 0)`.
    pub truncated_theta: f64,
    pub kind: EstimatorKind,
    /// Bins actually used (after singleton merging). Under per-fold pooling
    /// this is the bin count of the first fold.
    pub bins: usize,
    pub merged_bins: usize,
    pub strategy: BinStrategy,
    pub score_kind: ScoreKind,
    pub pooling: Pooling,
    pub loo: bool,
    pub n: usize,
}

fn check_rows(curve: &CalibrationCurve, delta: &[f64]) -> Result<()> {
    let n = curve.partition.assignment.len();
    if delta.len() != n {
        return Err(EcethError::Shape {
            what: "predictions",
            expected: n,
            found: delta.len(),
        });
    }
    Ok(())
}

/// `(1/n) Σ (γ̂(Δᵢ) − Δᵢ)²` with the full-sample γ̂.
pub fn plugin_value(curve: &CalibrationCurve, delta: &[f64]) -> Result<f64> {
    check_rows(curve, delta)?;
    let sum: f64 = delta
        .iter()
        .enumerate()
        .map(|(i, &d)| (curve.value(i) - d).powi(2))
        .sum();
    Ok(sum / delta.len() as f64)
}

/// `(1/n) Σ (Γᵢ − Δᵢ)(γ̂⁻ⁱ(Δᵢ) − Δᵢ)`. With `loo = false` the full-sample
/// γ̂ replaces the leave-one-out mean (for ablation only).
pub fn robust_value(curve: &CalibrationCurve, delta: &[f64], loo: bool) -> Result<f64> {
    check_rows(curve, delta)?;
    let mut sum = 0.0;
    for (i, &d) in delta.iter().enumerate() {
        let gamma = if loo {
            loo_value(curve, i)?
        } else {
            curve.value(i)
        };
        sum += (curve.scores[i] - d) * (gamma - d);
    }
    Ok(sum / delta.len() as f64)
}

/// [`robust_value`] with leave-one-unit-out means: every row sharing the
/// focal row's unit is left out of its bin mean.
pub fn robust_value_by_unit(curve: &CalibrationCurve, delta: &[f64], units: &[usize]) -> Result<f64> {
    check_rows(curve, delta)?;
    let loo = loo_values_by_unit(curve, units)?;
    let sum: f64 = delta
        .iter()
        .enumerate()
        .map(|(i, &d)| (curve.scores[i] - d) * (loo[i] - d))
        .sum();
    Ok(sum / delta.len() as f64)
}

fn wrap(theta: f64, kind: EstimatorKind, curve: &CalibrationCurve, scores: &ScoreSet, loo: bool) -> EcethEstimate {
    EcethEstimate {
        theta,
        truncated_theta: theta.max(0.0),
        kind,
        bins: curve.bins(),
        merged_bins: 0,
        strategy: curve.partition.strategy,
        score_kind: scores.kind,
        pooling: scores.pooling,
        loo,
        n: scores.len(),
    }
}

/// Plug-in estimate on a single curve.
pub fn theta_plugin(scores: &ScoreSet, delta: &[f64], curve: &CalibrationCurve) -> Result<EcethEstimate> {
    let theta = plugin_value(curve, delta)?;
    Ok(wrap(theta, EstimatorKind::PlugIn, curve, scores, false))
}

/// Robust estimate with leave-one-out bin means on a single curve.
pub fn theta_robust(scores: &ScoreSet, delta: &[f64], curve: &CalibrationCurve) -> Result<EcethEstimate> {
    if scores.len() != delta.len() {
        return Err(EcethError::Shape {
            what: "scores",
            expected: delta.len(),
            found: scores.len(),
        });
    }
    let theta = robust_value(curve, delta, true)?;
    Ok(wrap(theta, EstimatorKind::Robust, curve, scores, true))
}

/// Binning choices shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSettings {
    pub bins: BinCount,
    pub strategy: BinStrategy,
    /// Use leave-one-out bin means in the robust estimator.
    pub loo: bool,
}

impl Default for BinSettings {
    fn default() -> Self {
        BinSettings {
            bins: BinCount::Auto,
            strategy: BinStrategy::EqualFrequency,
            loo: true,
        }
    }
}

/// Both estimates plus the pooled calibration curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub plugin: EcethEstimate,
    pub robust: EcethEstimate,
    /// Curve over all rows (singletons merged), used for reporting.
    pub curve: CalibrationCurve,
    /// Bin count requested after resolving `auto`.
    pub requested_bins: usize,
}

impl Estimates {
    pub fn get(&self, kind: EstimatorKind) -> &EcethEstimate {
        match kind {
            EstimatorKind::PlugIn => &self.plugin,
            EstimatorKind::Robust => &self.robust,
        }
    }
}

struct Fitted {
    curve: CalibrationCurve,
    merged: usize,
    plugin: f64,
    robust: f64,
}

fn fit_rows(
    scores: &[f64],
    delta: &[f64],
    bins: usize,
    settings: &BinSettings,
    units: Option<&[usize]>,
) -> Result<Fitted> {
    let mut partition = make_bins(delta, bins, settings.strategy)?;
    let merged = match units {
        Some(u) => partition.merge_single_unit_bins(delta, u)?,
        None => partition.merge_singletons(delta)?,
    };
    let curve = calibration_curve(scores, delta, &partition)?;
    let plugin = plugin_value(&curve, delta)?;
    let robust = match units {
        Some(u) if settings.loo => robust_value_by_unit(&curve, delta, u)?,
        _ => robust_value(&curve, delta, settings.loo)?,
    };
    Ok(Fitted {
        curve,
        merged,
        plugin,
        robust,
    })
}

/// Bins the predictions, merges singleton bins, and computes both
/// estimators. Honors the pooling mode recorded on `scores`: under
/// per-fold pooling each fold is binned and estimated separately and the
/// fold estimates are averaged.
pub fn estimate(scores: &ScoreSet, delta: &[f64], settings: &BinSettings) -> Result<Estimates> {
    let n = delta.len();
    if scores.len() != n {
        return Err(EcethError::Shape {
            what: "scores",
            expected: n,
            found: scores.len(),
        });
    }
    let requested = settings.bins.resolve(n);
    if let Some(u) = &scores.units {
        if u.len() != n {
            return Err(EcethError::Shape {
                what: "units",
                expected: n,
                found: u.len(),
            });
        }
    }
    let units = scores.units.as_deref();
    let pooled = fit_rows(&scores.scores, delta, requested, settings, units)?;

    let (plugin, robust, bins, merged) = match (scores.pooling, &scores.fold_ids) {
        (Pooling::PerFold, Some(folds)) => {
            let j = folds.iter().copied().max().map_or(0, |m| m + 1);
            let mut plug = 0.0;
            let mut rob = 0.0;
            let mut first_bins = 0;
            let mut merged = 0;
            for fold in 0..j {
                let rows: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
                let s: Vec<f64> = rows.iter().map(|&i| scores.scores[i]).collect();
                let d: Vec<f64> = rows.iter().map(|&i| delta[i]).collect();
                let u: Option<Vec<usize>> = units.map(|u| rows.iter().map(|&i| u[i]).collect());
                let k = settings.bins.resolve(rows.len());
                let fitted = fit_rows(&s, &d, k, settings, u.as_deref()).map_err(|e| e.in_fold(fold))?;
                if fold == 0 {
                    first_bins = fitted.curve.bins();
                }
                merged += fitted.merged;
                plug += fitted.plugin;
                rob += fitted.robust;
            }
            (plug / j as f64, rob / j as f64, first_bins, merged)
        }
        (Pooling::PerFold, None) => {
            return Err(EcethError::InvalidConfig(
                "per-fold pooling needs fold ids on the score set".into(),
            ))
        }
        (Pooling::Pooled, _) => (pooled.plugin, pooled.robust, pooled.curve.bins(), pooled.merged),
    };

    let make = |theta: f64, kind, loo| EcethEstimate {
        theta,
        truncated_theta: theta.max(0.0),
        kind,
        bins,
        merged_bins: merged,
        strategy: settings.strategy,
        score_kind: scores.kind,
        pooling: scores.pooling,
        loo,
        n,
    };
    Ok(Estimates {
        plugin: make(plugin, EstimatorKind::PlugIn, false),
        robust: make(robust, EstimatorKind::Robust, settings.loo),
        curve: pooled.curve,
        requested_bins: requested,
    })
}
