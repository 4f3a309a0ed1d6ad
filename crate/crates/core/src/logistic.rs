//! Weighted logistic regression by iteratively reweighted least squares.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::expit;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence when the largest absolute score component falls below this.
    pub tol: f64,
    /// Ridge penalty on every coefficient except the first (intercept) column.
    pub ridge: f64,
    /// Report fits with extreme linear predictors as separated.
    pub separation_check: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
            ridge: 0.0,
            separation_check: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: DVector<f64>,
    pub fitted: Vec<f64>,
    pub iterations: usize,
    pub ridge: f64,
}

/// Linear predictor magnitude beyond which a fit is treated as separated.
const SEPARATION_ETA: f64 = 20.0;

fn deviance(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let mut dev = 0.0;
    for i in 0..y.len() {
        let e = eta[i];
        // log(1 + exp(e)) - y e, computed stably
        let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        dev += 2.0 * w[i] * (softplus - y[i] * e);
    }
    dev + ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Fits `logit P(y = 1) = X beta` with per-row weights.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64], opts: &LogisticOptions) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidArgument("design, outcome and weights disagree in length".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let mut beta = DVector::zeros(p);
    let mut dev = deviance(x, y, w, &beta, opts.ridge);
    for iter in 1..=opts.max_iter {
        let eta = x * &beta;
        let mut hess = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let mu = expit(eta[i]);
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            let v = wi * mu * (1.0 - mu);
            let r = wi * (y[i] - mu);
            for a in 0..p {
                let xa = x[(i, a)];
                if xa == 0.0 {
                    continue;
                }
                score[a] += xa * r;
                let vxa = v * xa;
                for b in 0..=a {
                    hess[(a, b)] += vxa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        if opts.ridge > 0.0 {
            for a in 1..p {
                hess[(a, a)] += opts.ridge;
                score[a] -= opts.ridge * beta[a];
            }
        }
        let max_score = score.amax();
        if max_score < opts.tol {
            let fitted = eta.iter().map(|&e| expit(e)).collect();
            if opts.separation_check && eta.amax() > SEPARATION_ETA {
                return Err(Error::Separation);
            }
            return Ok(LogisticFit {
                coef: beta,
                fitted,
                iterations: iter - 1,
                ridge: opts.ridge,
            });
        }
        let Some(chol) = Cholesky::new(hess) else {
            return Err(Error::Separation);
        };
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_dev = deviance(x, y, w, &candidate, opts.ridge);
        while !(cand_dev <= dev + 1e-12 * (1.0 + dev.abs())) && t > 1e-6 {
            t *= 0.5;
            candidate = &beta + &step * t;
            cand_dev = deviance(x, y, w, &candidate, opts.ridge);
        }
        beta = candidate;
        dev = cand_dev;
        if opts.separation_check && (x * &beta).amax() > SEPARATION_ETA * 4.0 {
            return Err(Error::Separation);
        }
    }
    let eta = x * &beta;
    if opts.separation_check && eta.amax() > SEPARATION_ETA {
        Err(Error::Separation)
    } else {
        Err(Error::NonConvergence(opts.max_iter))
    }
}

/// As [`fit_logistic`], refitting with a small ridge penalty when the plain
/// fit fails. The returned flag reports whether the fallback was used.
pub fn fit_logistic_stabilized(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<(LogisticFit, bool)> {
    match fit_logistic(x, y, w, &LogisticOptions::default()) {
        Ok(f) => Ok((f, false)),
        Err(Error::Separation) | Err(Error::NonConvergence(_)) => {
            for ridge in [1e-8, 1e-4, 1e-2, 1.0] {
                let opts = LogisticOptions {
                    ridge,
                    max_iter: 100,
                    ..LogisticOptions::default()
                };
                if let Ok(f) = fit_logistic(x, y, w, &opts) {
                    return Ok((f, true));
                }
            }
            Err(Error::Separation)
        }
        Err(e) => Err(e),
    }
}

/// For models used only through their fitted probabilities (propensity and
/// imputation models): as [`fit_logistic_stabilized`], but when every retry
/// separates, a penalised fit with extreme probabilities is returned instead.
pub fn fit_logistic_probabilities(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<(LogisticFit, bool)> {
    match fit_logistic_stabilized(x, y, w) {
        Err(Error::Separation) => {
            let opts = LogisticOptions {
                ridge: 1e-2,
                max_iter: 200,
                separation_check: false,
                ..LogisticOptions::default()
            };
            fit_logistic(x, y, w, &opts).map(|f| (f, true))
        }
        other => other,
    }
}

/// Weighted information matrix `sum w p (1 - p) x x'` (the bread).
pub fn information(x: &DMatrix<f64>, w: &[f64], beta: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let eta = x * beta;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..n {
        let mu = expit(eta[i]);
        let v = w[i] * mu * (1.0 - mu);
        for r in 0..p {
            for c in 0..p {
                a[(r, c)] += v * x[(i, r)] * x[(i, c)];
            }
        }
    }
    a
}

/// Robust covariance `A^-1 M A^-1` with `M = sum w^2 s s'`, `s = (y - p) x`.
pub fn sandwich_covariance(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let eta = x * beta;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let r = y[i] - expit(eta[i]);
        let f = w[i] * w[i] * r * r;
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += f * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let bread_inv = information(x, w, beta)
        .try_inverse()
        .ok_or(Error::Separation)?;
    Ok(&bread_inv * meat * &bread_inv)
}

/// Model-based covariance `A^-1`.
pub fn model_covariance(x: &DMatrix<f64>, w: &[f64], beta: &DVector<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let mut a = information(x, w, beta);
    for j in 1..a.nrows() {
        a[(j, j)] += ridge;
    }
    a.try_inverse().ok_or(Error::Separation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(a1_y1: usize, a1_n: usize, a0_y1: usize, a0_n: usize) -> (DMatrix<f64>, Vec<f64>) {
        let n = a1_n + a0_n;
        let mut x = DMatrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            x[(i, 0)] = 1.0;
            if i < a1_n {
                x[(i, 1)] = 1.0;
                y[i] = (i < a1_y1) as u8 as f64;
            } else {
                y[i] = (i - a1_n < a0_y1) as u8 as f64;
            }
        }
        (x, y)
    }

    #[test]
    fn wide_separated_predictor_still_gives_probabilities() {
        let n = 201;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 100.0 });
        let y: Vec<f64> = (0..n).map(|i| (i > 100) as u8 as f64).collect();
        let w = vec![1.0; n];
        assert!(matches!(fit_logistic_stabilized(&x, &y, &w), Err(Error::Separation)));
        let (fit, used) = fit_logistic_probabilities(&x, &y, &w).unwrap();
        assert!(used);
        assert!(fit.fitted[0] < 1e-6 && fit.fitted[n - 1] > 1.0 - 1e-6);
        assert!(fit.fitted.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn recovers_two_by_two_log_odds_ratio() {
        let (x, y) = two_by_two(30, 100, 10, 100);
        let fit = fit_logistic(&x, &y, &vec![1.0; 200], &LogisticOptions::default()).unwrap();
        let expected = ((30.0 / 70.0) / (10.0 / 90.0f64)).ln();
        assert!((fit.coef[1] - expected).abs() < 1e-8);
        assert!((fit.coef[0] - (10.0 / 90.0f64).ln()).abs() < 1e-8);
    }

    #[test]
    fn weight_scaling_leaves_coefficients_unchanged() {
        let (x, y) = two_by_two(30, 100, 10, 100);
        let w: Vec<f64> = (0..200).map(|i| 0.5 + (i % 7) as f64 * 0.3).collect();
        let a = fit_logistic(&x, &y, &w, &LogisticOptions::default()).unwrap();
        let w3: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
        let b = fit_logistic(&x, &y, &w3, &LogisticOptions::default()).unwrap();
        assert!((a.coef - b.coef).amax() < 1e-9);
    }

    #[test]
    fn separation_is_reported() {
        let (x, y) = two_by_two(100, 100, 10, 100);
        let err = fit_logistic(&x, &y, &vec![1.0; 200], &LogisticOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation), "{err:?}");
        let (fit, used) = fit_logistic_stabilized(&x, &y, &vec![1.0; 200]).unwrap();
        let (p, p_used) = fit_logistic_probabilities(&x, &y, &vec![1.0; 200]).unwrap();
        assert!(p_used);
        assert_eq!(p.coef, fit.coef);
        assert!(used);
        assert!(fit.coef[1] > 5.0);
    }

    #[test]
    fn fitted_mean_matches_outcome_mean() {
        let (x, y) = two_by_two(37, 120, 22, 80);
        let fit = fit_logistic(&x, &y, &vec![1.0; 200], &LogisticOptions::default()).unwrap();
        let m_fit: f64 = fit.fitted.iter().sum::<f64>() / 200.0;
        let m_y: f64 = y.iter().sum::<f64>() / 200.0;
        assert!((m_fit - m_y).abs() < 1e-10);
    }
}
