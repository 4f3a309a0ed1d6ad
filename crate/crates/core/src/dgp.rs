//! The simulation world: correlated covariates, a nonlinear exposure model,
//! a logistic outcome model with counterfactuals, and MCAR/MAR missingness.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta, ColumnRole, Dataset};
use crate::error::{Error, Result};
use crate::stats::{expit, sample_mvn, CovarianceSpec};

pub const N_COVARIATES: usize = 10;
/// Zero-based indices of the covariates dichotomized at zero (W1, W3, W5, W6, W8, W9).
pub const BINARY_COVARIATES: [usize; 6] = [0, 2, 4, 5, 7, 8];
/// Column index of W3 and W4 in generated datasets.
pub const W3: usize = 2;
pub const W4: usize = 3;
pub const EXPOSURE: usize = N_COVARIATES;
pub const OUTCOME: usize = N_COVARIATES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureModel {
    Nonlinear,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Main(usize),
    /// Product of two covariates; equal indices give a square.
    Product(usize, usize),
}

impl Term {
    #[inline]
    pub fn eval(&self, w: &[f64]) -> f64 {
        match *self {
            Term::Main(i) => w[i],
            Term::Product(i, j) => w[i] * w[j],
        }
    }
}

/// Exposure log-odds terms (zero-based covariate indices, no intercept).
pub const EXPOSURE_TERMS: [(f64, Term); 20] = [
    (0.8, Term::Main(0)),
    (-0.25, Term::Main(1)),
    (0.6, Term::Main(2)),
    (-0.4, Term::Main(3)),
    (-0.8, Term::Main(4)),
    (-0.5, Term::Main(5)),
    (0.7, Term::Main(6)),
    (-0.25, Term::Product(1, 1)),
    (-0.4, Term::Product(3, 3)),
    (0.7, Term::Product(6, 6)),
    (0.4, Term::Product(0, 2)),
    (-0.175, Term::Product(1, 3)),
    (0.3, Term::Product(2, 4)),
    (-0.28, Term::Product(3, 5)),
    (-0.4, Term::Product(4, 6)),
    (0.4, Term::Product(0, 5)),
    (-0.175, Term::Product(1, 2)),
    (0.3, Term::Product(2, 3)),
    (-0.2, Term::Product(3, 4)),
    (-0.4, Term::Product(4, 5)),
];

/// Outcome log-odds intercept and covariate coefficients; the exposure adds `gamma * A`.
pub const OUTCOME_INTERCEPT: f64 = -1.0;
pub const OUTCOME_COEF: [f64; N_COVARIATES] = [0.3, -0.36, -0.73, -0.2, 0.0, 0.0, 0.0, 0.71, -0.19, 0.26];

impl ExposureModel {
    /// Coefficient table of the model.
    pub fn terms(self) -> Vec<(f64, Term)> {
        EXPOSURE_TERMS
            .iter()
            .copied()
            .filter(|(_, t)| self == ExposureModel::Nonlinear || matches!(t, Term::Main(_)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub gamma: f64,
    pub mechanism: Mechanism,
    /// Probability that W3 is missing.
    pub p: f64,
    /// W4 missingness log-odds: intercept, W1, A, Y.
    pub alpha: [f64; 4],
    pub exposure_model: ExposureModel,
}

impl ScenarioConfig {
    pub const IDS: [&'static str; 9] = ["1", "2", "3", "4", "5", "6", "7", "8", "2L"];

    pub fn preset(id: &str) -> Option<Self> {
        let mcar = |gamma, p| (gamma, Mechanism::Mcar, p, [0.0; 4]);
        let mar = |gamma, p, alpha| (gamma, Mechanism::Mar, p, alpha);
        let (gamma, mechanism, p, alpha) = match id {
            "1" => mcar(1.0, 0.3),
            "2" | "2L" => mcar(1.0, 0.6),
            "3" => mar(1.0, 0.0, [-0.7, 0.0, 0.0, 1.5]),
            "4" => mar(-1.0, 0.0, [-1.0, 0.0, 0.0, 1.5]),
            "5" => mar(1.0, 0.1, [-1.6, 0.5, 0.5, 0.5]),
            "6" => mar(1.0, 0.1, [-2.1, 0.5, 0.5, 1.5]),
            "7" => mar(1.0, 0.1, [-2.3, 0.5, 1.5, 0.5]),
            "8" => mar(1.0, 0.1, [-2.2, 1.5, 0.5, 0.5]),
            _ => return None,
        };
        Some(Self {
            id: id.to_string(),
            gamma,
            mechanism,
            p,
            alpha,
            exposure_model: if id == "2L" {
                ExposureModel::Linear
            } else {
                ExposureModel::Nonlinear
            },
        })
    }

    pub fn all() -> Vec<Self> {
        Self::IDS.iter().map(|id| Self::preset(id).unwrap()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!("missingness probability {} outside [0, 1]", self.p)));
        }
        if !self.gamma.is_finite() || self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("scenario coefficients must be finite".into()));
        }
        Ok(())
    }
}

pub fn covariance() -> CovarianceSpec {
    CovarianceSpec {
        dim: N_COVARIATES,
        off_diagonal: vec![(0, 4, 0.2), (1, 5, 0.9), (2, 7, 0.2), (3, 8, 0.9)],
    }
}

/// `n` covariate rows, column-major, with the binary covariates dichotomized at zero.
pub fn generate_covariates<R: RngCore>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut w = sample_mvn(n, &covariance(), rng).expect("fixed covariance is positive definite");
    for &j in &BINARY_COVARIATES {
        for v in w[j].iter_mut() {
            *v = (*v > 0.0) as u8 as f64;
        }
    }
    w
}

pub fn exposure_log_odds(w: &[f64], model: ExposureModel) -> f64 {
    EXPOSURE_TERMS
        .iter()
        .filter(|(_, t)| model == ExposureModel::Nonlinear || matches!(t, Term::Main(_)))
        .map(|(c, t)| c * t.eval(w))
        .sum()
}

/// `Pr(A = 1 | W = w)`.
pub fn true_propensity(w: &[f64], model: ExposureModel) -> f64 {
    expit(exposure_log_odds(w, model))
}

pub fn outcome_log_odds(w: &[f64], a: f64, gamma: f64) -> f64 {
    OUTCOME_INTERCEPT + OUTCOME_COEF.iter().zip(w).map(|(c, x)| c * x).sum::<f64>() + gamma * a
}

/// Counterfactual outcomes `(Y0, Y1)` driven by the same uniform `eps`.
pub fn counterfactuals(w: &[f64], eps: f64, gamma: f64) -> (f64, f64) {
    let y = |a| (eps < expit(outcome_log_odds(w, a, gamma))) as u8 as f64;
    (y(0.0), y(1.0))
}

/// A simulated cohort. The dataset holds W1..W10, A and Y; the remaining
/// fields are oracle-only latents.
#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub data: Dataset,
    pub propensity: Vec<f64>,
    pub eps_y: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

pub fn columns() -> Vec<ColumnMeta> {
    let mut cols: Vec<ColumnMeta> = (0..N_COVARIATES)
        .map(|j| {
            let kind = if BINARY_COVARIATES.contains(&j) {
                ColumnKind::Binary
            } else {
                ColumnKind::Continuous
            };
            ColumnMeta::new(format!("W{}", j + 1), kind, ColumnRole::Covariate)
        })
        .collect();
    cols.push(ColumnMeta::new("A", ColumnKind::Binary, ColumnRole::Exposure));
    cols.push(ColumnMeta::new("Y", ColumnKind::Binary, ColumnRole::Outcome));
    cols
}

pub fn generate_cohort<R: RngCore>(n: usize, cfg: &ScenarioConfig, rng: &mut R) -> Result<GeneratedCohort> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("cohort size must be positive".into()));
    }
    let w = generate_covariates(n, rng);
    let mut a = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut propensity = vec![0.0; n];
    let mut eps_y = vec![0.0; n];
    let mut y0 = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut row = [0.0; N_COVARIATES];
    for i in 0..n {
        for j in 0..N_COVARIATES {
            row[j] = w[j][i];
        }
        propensity[i] = true_propensity(&row, cfg.exposure_model);
        a[i] = (rng.gen::<f64>() < propensity[i]) as u8 as f64;
        eps_y[i] = rng.gen::<f64>();
        (y0[i], y1[i]) = counterfactuals(&row, eps_y[i], cfg.gamma);
        y[i] = if a[i] == 1.0 { y1[i] } else { y0[i] };
    }
    let mut values = w;
    values.push(a);
    values.push(y);
    Ok(GeneratedCohort {
        data: Dataset::complete(columns(), values)?,
        propensity,
        eps_y,
        y0,
        y1,
    })
}

/// Marginal log odds ratio among the exposed, `log[odds(mean Y1 | A=1) / odds(mean Y0 | A=1)]`,
/// from a simulated population of `n_oracle` rows generated in chunks.
pub fn true_att_log_or<R: RngCore>(gamma: f64, model: ExposureModel, n_oracle: usize, rng: &mut R) -> f64 {
    const CHUNK: usize = 100_000;
    let (mut n1, mut s0, mut s1) = (0u64, 0u64, 0u64);
    let mut done = 0;
    let mut row = [0.0; N_COVARIATES];
    while done < n_oracle {
        let m = CHUNK.min(n_oracle - done);
        let w = generate_covariates(m, rng);
        for i in 0..m {
            for j in 0..N_COVARIATES {
                row[j] = w[j][i];
            }
            let exposed = rng.gen::<f64>() < true_propensity(&row, model);
            let eps = rng.gen::<f64>();
            if exposed {
                let (y0, y1) = counterfactuals(&row, eps, gamma);
                n1 += 1;
                s0 += y0 as u64;
                s1 += y1 as u64;
            }
        }
        done += m;
    }
    let odds = |s: u64| {
        let p = s as f64 / n1 as f64;
        p / (1.0 - p)
    };
    (odds(s1) / odds(s0)).ln()
}

/// Masks W3 (and W4 under MAR) according to the scenario. Other columns are
/// never touched. Uniforms are drawn for every row so the stream layout
/// does not depend on the data.
pub fn inject_missingness<R: RngCore>(cohort: &GeneratedCohort, cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let mut d = cohort.data.clone();
    let w1 = d.column(0).to_vec();
    let a = d.column(EXPOSURE).to_vec();
    let y = d.column(OUTCOME).to_vec();
    for i in 0..d.nrows() {
        if rng.gen::<f64>() < cfg.p {
            d.set_missing(i, W3);
        }
        if cfg.mechanism == Mechanism::Mar {
            let [a0, a1, a2, a3] = cfg.alpha;
            let prob = expit(a0 + a1 * w1[i] + a2 * a[i] + a3 * y[i]);
            if rng.gen::<f64>() < prob {
                d.set_missing(i, W4);
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{correlation, RngStream};

    #[test]
    fn presets_cover_every_scenario() {
        assert_eq!(ScenarioConfig::all().len(), 9);
        assert!(ScenarioConfig::preset("9").is_none());
        let s6 = ScenarioConfig::preset("6").unwrap();
        assert_eq!(s6.alpha, [-2.1, 0.5, 0.5, 1.5]);
        assert_eq!(s6.p, 0.1);
        assert_eq!(ScenarioConfig::preset("4").unwrap().gamma, -1.0);
    }

    #[test]
    fn linear_model_is_nonlinear_with_second_order_terms_zeroed() {
        let lin = ExposureModel::Linear.terms();
        let non = ExposureModel::Nonlinear.terms();
        assert_eq!(non.len(), 20);
        assert_eq!(lin.len(), 7);
        for (c, t) in &non {
            let in_lin = lin.iter().find(|(_, u)| u == t).map(|(c, _)| *c).unwrap_or(0.0);
            match t {
                Term::Main(_) => assert_eq!(in_lin, *c),
                Term::Product(..) => assert_eq!(in_lin, 0.0),
            }
        }
    }

    #[test]
    fn plug_in_evaluations() {
        let zero = [0.0; N_COVARIATES];
        assert_eq!(true_propensity(&zero, ExposureModel::Nonlinear), 0.5);
        let mut e1 = zero;
        e1[0] = 1.0;
        assert_eq!(true_propensity(&e1, ExposureModel::Nonlinear), expit(0.8));
        assert_eq!(outcome_log_odds(&e1, 0.0, 1.0), -0.7);
        assert_eq!(outcome_log_odds(&zero, 1.0, -1.0), -2.0);
        let mut w = zero;
        w[1] = 2.0;
        w[3] = 1.0;
        let expected = -0.25 * 2.0 - 0.4 - 0.25 * 4.0 - 0.4 - 0.175 * 2.0;
        assert!((exposure_log_odds(&w, ExposureModel::Nonlinear) - expected).abs() < 1e-15);
    }

    #[test]
    fn cohort_is_consistent_and_reproducible() {
        let cfg = ScenarioConfig::preset("1").unwrap();
        let a = generate_cohort(500, &cfg, &mut RngStream::from_seed(3)).unwrap();
        let b = generate_cohort(500, &cfg, &mut RngStream::from_seed(3)).unwrap();
        assert_eq!(a.data.column(OUTCOME), b.data.column(OUTCOME));
        let d = &a.data;
        for i in 0..500 {
            let expected = if d.column(EXPOSURE)[i] == 1.0 { a.y1[i] } else { a.y0[i] };
            assert_eq!(d.column(OUTCOME)[i], expected);
            assert!(a.y1[i] >= a.y0[i]);
        }
        for &j in &BINARY_COVARIATES {
            assert!(d.column(j).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn zero_effect_gives_identical_counterfactuals() {
        let mut cfg = ScenarioConfig::preset("1").unwrap();
        cfg.gamma = 0.0;
        let c = generate_cohort(300, &cfg, &mut RngStream::from_seed(5)).unwrap();
        assert_eq!(c.y0, c.y1);
    }

    #[test]
    fn latent_correlations() {
        let w = sample_mvn(100_000, &covariance(), &mut RngStream::from_seed(11)).unwrap();
        assert!((correlation(&w[3], &w[8]) - 0.9).abs() < 0.01);
        assert!((correlation(&w[1], &w[5]) - 0.9).abs() < 0.01);
        assert!((correlation(&w[0], &w[4]) - 0.2).abs() < 0.01);
        assert!(correlation(&w[0], &w[1]).abs() < 0.01);
    }

    #[test]
    fn missingness_touches_only_w3_and_w4() {
        let cfg = ScenarioConfig::preset("6").unwrap();
        let c = generate_cohort(2000, &cfg, &mut RngStream::from_seed(8)).unwrap();
        let d = inject_missingness(&c, &cfg, &mut RngStream::from_seed(9)).unwrap();
        for j in 0..d.ncols() {
            if j != W3 && j != W4 {
                assert!(!d.column_has_missing(j));
                assert_eq!(d.column(j), c.data.column(j));
            }
        }
        assert!(d.column_has_missing(W3) && d.column_has_missing(W4));
        for i in 0..2000 {
            for j in [W3, W4] {
                if !d.is_missing(i, j) {
                    assert_eq!(d.column(j)[i], c.data.column(j)[i]);
                }
            }
        }
    }

    #[test]
    fn mcar_scenario_leaves_w4_observed() {
        let cfg = ScenarioConfig::preset("2").unwrap();
        let c = generate_cohort(1000, &cfg, &mut RngStream::from_seed(1)).unwrap();
        let d = inject_missingness(&c, &cfg, &mut RngStream::from_seed(2)).unwrap();
        assert!(!d.column_has_missing(W4));
        let rate = d.missing_column(W3).iter().filter(|&&m| m).count() as f64 / 1000.0;
        assert!((rate - 0.6).abs() < 3.0 * (0.24f64 / 1000.0).sqrt());
    }
}
