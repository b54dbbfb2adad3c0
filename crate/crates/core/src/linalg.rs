//! Small regression fits shared by edge models, estimators and metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `intercept + coef · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearFit {
    pub fn predict_row(&self, x: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x.row(i).iter().copied())).collect()
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    a.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    a
}

/// Ordinary least squares by normal equations. When the Gram matrix is
/// numerically singular a ridge of `ridge·(1 + diag)` is added to the slope
/// terms; the intercept is never penalized.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<LinearFit> {
    if x.nrows() != y.len() {
        return Err(Error::validation(format!("design has {} rows, target {}", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::validation("least squares on zero rows"));
    }
    let a = with_intercept(x);
    let gram = a.transpose() * &a;
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let well_conditioned = |l: &DMatrix<f64>| {
        let diag: Vec<f64> = (0..l.nrows()).map(|k| l[(k, k)].abs()).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        lo > 1e-7 * hi
    };
    let beta = match gram.clone().cholesky() {
        Some(chol) if well_conditioned(&chol.l()) => chol.solve(&rhs),
        _ => {
            let mut g = gram;
            for k in 1..g.nrows() {
                g[(k, k)] += ridge * (1.0 + g[(k, k)]);
            }
            g.cholesky()
                .ok_or_else(|| Error::numeric("singular design matrix beyond ridge rescue"))?
                .solve(&rhs)
        }
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::numeric("non-finite least-squares coefficients"));
    }
    Ok(LinearFit { intercept: beta[0], coef: beta.iter().skip(1).copied().collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn score_row(&self, x: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| sigmoid(self.score_row(x.row(i).iter().copied()))).collect()
    }
}

fn penalized_loglik(a: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let s = a * beta;
    let mut ll = 0.0;
    for (z, &t) in s.iter().zip(y) {
        // log(1 + e^z) computed stably
        let softplus = if *z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        ll += t * z - softplus;
    }
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Logistic regression by damped Newton iterations, stopping when the
/// gradient norm falls to `tol` or after `max_iter` steps. Targets may be
/// fractional in `[0, 1]` (quasi-binomial).
pub fn logistic_regression(
    x: &DMatrix<f64>,
    y: &[f64],
    ridge: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LogisticFit> {
    if x.nrows() != y.len() {
        return Err(Error::validation(format!("design has {} rows, target {}", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::validation("logistic regression on zero rows"));
    }
    let a = with_intercept(x);
    let p = a.ncols();
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = penalized_loglik(&a, y, &beta, ridge);
    for it in 0..max_iter {
        iterations = it;
        let s = &a * &beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..a.nrows() {
            let mu = sigmoid(s[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let row = a.row(i);
            for k in 0..p {
                grad[k] += (y[i] - mu) * row[k];
            }
            for k in 0..p {
                let rk = row[k] * w;
                for l in k..p {
                    hess[(k, l)] += rk * row[l];
                }
            }
        }
        for k in 0..p {
            for l in 0..k {
                hess[(k, l)] = hess[(l, k)];
            }
        }
        for k in 1..p {
            grad[k] -= ridge * beta[k];
            hess[(k, k)] += ridge;
        }
        hess[(0, 0)] += 1e-12;
        if grad.norm() <= tol {
            converged = true;
            break;
        }
        let Some(chol) = hess.clone().cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_ll = penalized_loglik(&a, y, &cand, ridge);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::numeric("non-finite logistic coefficients"));
    }
    Ok(LogisticFit { intercept: beta[0], coef: beta.iter().skip(1).copied().collect(), converged, iterations })
}

/// Columns of `x` selected by index.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, k| x[(i, cols[k])])
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_fit() {
        let x = DMatrix::from_column_slice(5, 1, &[-2.0, -1.0, 0.0, 1.0, 3.0]);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = least_squares(&x, &y, DEFAULT_RIDGE).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-10);
        assert!(fit.intercept.abs() < 1e-10);
    }

    #[test]
    fn collinear_columns_survive_ridge() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = [1.0, 2.0, 3.0, 4.0];
        let fit = least_squares(&x, &y, DEFAULT_RIDGE).unwrap();
        assert!((fit.coef[0] + fit.coef[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_recovers_known_coefficients() {
        use rand::RngExt;
        let mut rng = crate::rng::seeded(3);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if rng.random::<f64>() < sigmoid(0.5 + 1.5 * x) { 1.0 } else { 0.0 }).collect();
        let fit = logistic_regression(&DMatrix::from_column_slice(n, 1, &xs), &ys, 1e-8, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept - 0.5).abs() < 0.1);
        assert!((fit.coef[0] - 1.5).abs() < 0.1);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[2.0, 4.0, 6.0]), 0.0);
    }
}
