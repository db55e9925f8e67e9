//! Ridge-penalized linear outcome model and logistic propensity model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EcethError, Result};

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| EcethError::Singular(format!("{what}: normal equations are not positive definite")))?;
    Ok(chol.solve(&b))
}

/// Linear model on `[1, x, w, w·x]` fit by ridge regression with an
/// unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeOutcome {
    pub coefficients: Vec<f64>,
    dim: usize,
}

fn augmented_row(x: &[f64], w: bool, out: &mut [f64]) {
    let d = x.len();
    out[0] = 1.0;
    out[1..=d].copy_from_slice(x);
    let wv = if w { 1.0 } else { 0.0 };
    out[d + 1] = wv;
    for j in 0..d {
        out[d + 2 + j] = wv * x[j];
    }
}

impl RidgeOutcome {
    pub fn fit(x: &[f64], w: &[bool], y: &[f64], d: usize, lambda: f64) -> Result<RidgeOutcome> {
        let n = y.len();
        if n < d + 2 {
            return Err(EcethError::InsufficientData(format!(
                "ridge outcome model needs at least d + 2 = {} rows, got {n}",
                d + 2
            )));
        }
        let p = 2 * d + 2;
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            augmented_row(&x[i * d..(i + 1) * d], w[i], &mut row);
            for a in 0..p {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                xty[a] += ra * y[i];
                for b in a..p {
                    xtx[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
            if a > 0 {
                xtx[(a, a)] += lambda;
            }
        }
        let beta = solve_spd(xtx, xty, "ridge outcome model")?;
        Ok(RidgeOutcome {
            coefficients: beta.iter().copied().collect(),
            dim: d,
        })
    }

    pub fn predict(&self, x: &[f64], w: bool) -> f64 {
        let mut row = vec![0.0; 2 * self.dim + 2];
        augmented_row(x, w, &mut row);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_DIVERGENCE: f64 = 1e6;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression of `w` on `[1, x]` by iteratively reweighted least
/// squares (Newton's method), with an optional L2 penalty on the slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    /// Intercept first, then one slope per feature.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

impl Logistic {
    pub fn fit(x: &[f64], w: &[bool], d: usize, lambda: f64) -> Result<Logistic> {
        let n = w.len();
        let p = d + 1;
        let design = DMatrix::<f64>::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i * d + j - 1] });
        let target = DVector::<f64>::from_iterator(n, w.iter().map(|&t| if t { 1.0 } else { 0.0 }));
        let mut beta = DVector::<f64>::zeros(p);
        for iter in 1..=IRLS_MAX_ITER {
            let eta = &design * &beta;
            let prob = eta.map(sigmoid);
            let weight = prob.map(|q| q * (1.0 - q));
            let mut grad = design.transpose() * (&target - &prob);
            let mut weighted = design.clone();
            for (i, mut r) in weighted.row_iter_mut().enumerate() {
                r *= weight[i];
            }
            let mut hess = design.transpose() * weighted;
            for j in 1..p {
                hess[(j, j)] += lambda;
                grad[j] -= lambda * beta[j];
            }
            let step = match solve_spd(hess, grad, "logistic propensity model") {
                Ok(s) => s,
                Err(_) => {
                    return Err(EcethError::Separation {
                        max_coef: beta.amax(),
                    })
                }
            };
            beta += &step;
            let max_coef = beta.amax();
            if !max_coef.is_finite() || max_coef > IRLS_DIVERGENCE {
                return Err(EcethError::Separation { max_coef });
            }
            if step.amax() < IRLS_TOL {
                return Ok(Logistic {
                    coefficients: beta.iter().copied().collect(),
                    iterations: iter,
                });
            }
        }
        // Without convergence, a perfect fit of the labels means the
        // coefficients are drifting off to infinity.
        let fitted = (&design * &beta).map(sigmoid);
        let max_resid = (&target - &fitted).amax();
        if lambda == 0.0 && max_resid < 1e-6 {
            return Err(EcethError::Separation {
                max_coef: beta.amax(),
            });
        }
        Ok(Logistic {
            coefficients: beta.iter().copied().collect(),
            iterations: IRLS_MAX_ITER,
        })
    }

    /// Unclipped `P(W = 1 | x)`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.coefficients[0]
            + x.iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        sigmoid(eta)
    }
}
