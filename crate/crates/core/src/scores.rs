//! Per-observation scores whose conditional mean given `X` is the CATE.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{EcethError, Result};

/// How the scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    IpwKnown,
    IpwEstimated,
    AipwKnownPi,
    AipwEstimated,
}

impl ScoreKind {
    pub fn is_aipw(self) -> bool {
        matches!(self, ScoreKind::AipwKnownPi | ScoreKind::AipwEstimated)
    }

    pub fn uses_known_propensity(self) -> bool {
        matches!(self, ScoreKind::IpwKnown | ScoreKind::AipwKnownPi)
    }
}

/// How cross-fit scores are turned into a single estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Pool all cross-fit scores, then bin and estimate once.
    #[default]
    Pooled,
    /// Estimate within each fold and average the per-fold estimates.
    PerFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
    pub fold_ids: Option<Vec<usize>>,
    pub pooling: Pooling,
    /// Source unit of each row when rows can repeat (bootstrap copies).
    /// Leave-one-out means then leave out every row of the same unit.
    #[serde(default)]
    pub units: Option<Vec<usize>>,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Sample mean of the scores, i.e. the ATE estimate.
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Standard error of [`ScoreSet::mean`].
    pub fn mean_se(&self) -> f64 {
        let n = self.scores.len() as f64;
        let m = self.mean();
        let var = self.scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

fn check_propensity(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(EcethError::InvalidPropensity(pi))
    }
}

/// Inverse-propensity-weighted score `w·y/π − (1−w)·y/(1−π)`.
pub fn ipw_score(y: f64, w: bool, pi: f64) -> Result<f64> {
    check_propensity(pi)?;
    Ok(if w { y / pi } else { -y / (1.0 - pi) })
}

/// Augmented IPW score
/// `(μ1 − μ0) + (w − π)/(π(1−π)) · (y − μ_w)`.
///
/// With `μ1 = μ0 = 0` this is exactly [`ipw_score`].
pub fn aipw_score(y: f64, w: bool, pi: f64, mu1: f64, mu0: f64) -> Result<f64> {
    check_propensity(pi)?;
    // Arm-wise form: (w−π)/(π(1−π)) is 1/π for treated and −1/(1−π) for
    // controls, which keeps the μ ≡ 0 case bit-identical to ipw_score.
    let correction = if w {
        (y - mu1) / pi
    } else {
        -(y - mu0) / (1.0 - pi)
    };
    Ok((mu1 - mu0) + correction)
}

/// Source of the propensity used in the scores.
#[derive(Debug, Clone, Copy)]
pub enum PropensitySource<'a> {
    Constant(f64),
    PerRow(&'a [f64]),
}

/// Per-row outcome-model predictions under treatment and control.
#[derive(Debug, Clone, Copy)]
pub struct OutcomePredictions<'a> {
    pub mu1: &'a [f64],
    pub mu0: &'a [f64],
}

/// Applies the score formula of `kind` row by row.
pub fn build_scores(
    dataset: &Dataset,
    propensity: PropensitySource<'_>,
    outcome: Option<OutcomePredictions<'_>>,
    kind: ScoreKind,
) -> Result<ScoreSet> {
    let n = dataset.len();
    if let PropensitySource::PerRow(p) = propensity {
        if p.len() != n {
            return Err(EcethError::Shape {
                what: "propensities",
                expected: n,
                found: p.len(),
            });
        }
    }
    if let Some(o) = outcome {
        for (what, v) in [("mu1", o.mu1), ("mu0", o.mu0)] {
            if v.len() != n {
                return Err(EcethError::Shape {
                    what,
                    expected: n,
                    found: v.len(),
                });
            }
        }
    }
    let known = matches!(propensity, PropensitySource::Constant(_));
    if kind.uses_known_propensity() != known {
        return Err(EcethError::InvalidConfig(format!(
            "score kind {kind:?} does not match the propensity source"
        )));
    }
    if kind.is_aipw() && outcome.is_none() {
        return Err(EcethError::InvalidConfig(
            "AIPW scores need outcome-model predictions".into(),
        ));
    }
    let pi_at = |i: usize| match propensity {
        PropensitySource::Constant(p) => p,
        PropensitySource::PerRow(p) => p[i],
    };
    let y = dataset.outcome();
    let w = dataset.treatment();
    let scores = (0..n)
        .map(|i| match (kind.is_aipw(), outcome) {
            (true, Some(o)) => aipw_score(y[i], w[i], pi_at(i), o.mu1[i], o.mu0[i]),
            _ => ipw_score(y[i], w[i], pi_at(i)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet {
        scores,
        kind,
        fold_ids: None,
        pooling: Pooling::Pooled,
        units: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ipw_examples() {
        assert_eq!(ipw_score(2.0, true, 0.5).unwrap(), 4.0);
        assert_eq!(ipw_score(2.0, false, 0.5).unwrap(), -4.0);
        assert_eq!(ipw_score(1.0, true, 0.25).unwrap(), 4.0);
    }

    #[test]
    fn aipw_examples() {
        assert_eq!(aipw_score(2.0, true, 0.5, 0.0, 0.0).unwrap(), 4.0);
        assert_eq!(aipw_score(2.0, true, 0.3, 2.0, 0.5).unwrap(), 1.5);
        assert_eq!(aipw_score(3.0, true, 0.5, 2.0, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn propensity_is_strict() {
        for pi in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                ipw_score(1.0, true, pi),
                Err(EcethError::InvalidPropensity(_))
            ));
            assert!(aipw_score(1.0, false, pi, 0.0, 0.0).is_err());
        }
    }

    /// X takes three values; W ~ Bernoulli(π) independent of X; Y given
    /// (X, W) takes two values with known probabilities. Enumerating every
    /// (W, Y) outcome gives E[Γ | X = x] exactly.
    #[test]
    fn conditional_unbiasedness_by_enumeration() {
        let pi = 0.3;
        // (y_low, y_high, P(high)) per arm, per x
        let table = [
            ((0.0, 1.0, 0.2), (1.0, 3.0, 0.5)),
            ((-1.0, 2.0, 0.6), (0.0, 4.0, 0.1)),
            ((5.0, 6.0, 0.5), (5.0, 6.0, 0.5)),
        ];
        for (ctrl, trt) in table {
            let mean = |(lo, hi, p): (f64, f64, f64)| lo * (1.0 - p) + hi * p;
            let tau = mean(trt) - mean(ctrl);
            let mut expect = 0.0;
            for (w, pw, (lo, hi, ph)) in [(true, pi, trt), (false, 1.0 - pi, ctrl)] {
                expect += pw * (1.0 - ph) * ipw_score(lo, w, pi).unwrap();
                expect += pw * ph * ipw_score(hi, w, pi).unwrap();
            }
            assert!((expect - tau).abs() < 1e-12, "{expect} vs {tau}");
        }
    }

    proptest! {
        #[test]
        fn aipw_reduces_to_ipw(y in -1e6f64..1e6, w: bool, pi in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert_eq!(
                aipw_score(y, w, pi, 0.0, 0.0).unwrap(),
                ipw_score(y, w, pi).unwrap()
            );
        }
    }

    fn toy() -> Dataset {
        Dataset::from_columns(
            vec!["x".into()],
            vec![0.0, 1.0, 2.0],
            vec![true, false, true],
            vec![0.0, 0.0, 0.0],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_outcomes_give_zero_scores() {
        let s = build_scores(&toy(), PropensitySource::Constant(0.4), None, ScoreKind::IpwKnown)
            .unwrap();
        assert!(s.scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_nuisance_gives_true_effect() {
        // μ(x,w) = x + 2w·x, noiseless, so y = μ(x, w) and Γ = μ1 − μ0 = 2x.
        let x = [0.5, -1.0, 2.0, 3.0];
        let w = [true, false, true, false];
        let y: Vec<f64> = x.iter().zip(&w).map(|(x, &w)| x + if w { 2.0 * x } else { 0.0 }).collect();
        let ds = Dataset::from_columns(vec!["x".into()], x.to_vec(), w.to_vec(), y, None).unwrap();
        let mu1: Vec<f64> = x.iter().map(|x| 3.0 * x).collect();
        let mu0 = x.to_vec();
        let pi = [0.2, 0.7, 0.5, 0.9];
        let s = build_scores(
            &ds,
            PropensitySource::PerRow(&pi),
            Some(OutcomePredictions { mu1: &mu1, mu0: &mu0 }),
            ScoreKind::AipwEstimated,
        )
        .unwrap();
        for (s, x) in s.scores.iter().zip(x) {
            assert_eq!(*s, 2.0 * x);
        }
    }

    #[test]
    fn shape_errors() {
        let err = build_scores(
            &toy(),
            PropensitySource::PerRow(&[0.5, 0.5]),
            None,
            ScoreKind::IpwEstimated,
        )
        .unwrap_err();
        assert!(matches!(err, EcethError::Shape { what: "propensities", expected: 3, found: 2 }));
        let err = build_scores(
            &toy(),
            PropensitySource::Constant(0.5),
            Some(OutcomePredictions { mu1: &[0.0; 3], mu0: &[0.0; 1] }),
            ScoreKind::AipwKnownPi,
        )
        .unwrap_err();
        assert!(matches!(err, EcethError::Shape { what: "mu0", .. }));
    }
}
