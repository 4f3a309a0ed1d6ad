//! Multiple imputation by chained equations and Rubin's rules.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::cart::{grow, FitFrame, GrowInput, MissingMode, TreeControls, TreeKind};
use crate::data::{ColumnKind, ColumnRole, Dataset};
use crate::error::{Error, Result};
use crate::logistic::{fit_logistic_probabilities, model_covariance};
use crate::stats::{expit, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeMethod {
    /// Logistic regression with coefficients drawn from their approximate posterior.
    Logreg,
    /// Bayesian linear regression.
    Norm,
    /// Donor drawn from the matching leaf of a regression tree.
    Cart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub m: usize,
    pub cycles: usize,
    pub binary_method: ImputeMethod,
    pub continuous_method: ImputeMethod,
    /// Per-column method, by column name.
    pub methods: BTreeMap<String, ImputeMethod>,
    /// Per-column predictor names; a column absent here uses every other column.
    pub predictors: BTreeMap<String, Vec<String>>,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            m: 5,
            cycles: 5,
            binary_method: ImputeMethod::Logreg,
            continuous_method: ImputeMethod::Norm,
            methods: BTreeMap::new(),
            predictors: BTreeMap::new(),
        }
    }
}

impl MiceConfig {
    /// Same method for every column.
    pub fn uniform(method: ImputeMethod) -> Self {
        Self {
            binary_method: method,
            continuous_method: method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument("at least two imputations are required".into()));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidArgument("at least one cycle is required".into()));
        }
        Ok(())
    }

    fn method_for(&self, d: &Dataset, col: usize) -> ImputeMethod {
        let meta = d.meta(col);
        self.methods.get(&meta.name).copied().unwrap_or(match meta.kind {
            ColumnKind::Binary => self.binary_method,
            ColumnKind::Continuous => self.continuous_method,
        })
    }

    fn predictors_for(&self, d: &Dataset, col: usize) -> Result<Vec<usize>> {
        match self.predictors.get(&d.meta(col).name) {
            None => Ok((0..d.ncols()).filter(|&j| j != col).collect()),
            Some(names) => names
                .iter()
                .map(|name| match d.column_index(name) {
                    Some(j) if j != col => Ok(j),
                    Some(_) => Err(Error::InvalidArgument(format!("column `{name}` cannot predict itself"))),
                    None => Err(Error::Schema(format!("unknown predictor `{name}`"))),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeProvenance {
    pub config: MiceConfig,
    /// (imputation, column name) pairs where a logistic fit needed the ridge fallback.
    pub ridge_fallbacks: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct ImputedSet {
    pub datasets: Vec<Dataset>,
    pub provenance: ImputeProvenance,
}

struct Target {
    col: usize,
    method: ImputeMethod,
    predictors: Vec<usize>,
    missing_rows: Vec<usize>,
    observed_rows: Vec<usize>,
}

/// Imputes every incomplete column `cfg.m` times. Imputation `k` draws from `rng.child(k)`.
pub fn mice_impute(d: &Dataset, cfg: &MiceConfig, rng: &RngStream) -> Result<ImputedSet> {
    cfg.validate()?;
    let mut targets = Vec::new();
    for col in 0..d.ncols() {
        if !d.column_has_missing(col) {
            continue;
        }
        let meta = d.meta(col);
        if matches!(meta.role, ColumnRole::Exposure | ColumnRole::Outcome) {
            return Err(Error::InvalidArgument(format!("column `{}` must be fully observed", meta.name)));
        }
        let mask = d.missing_column(col);
        let observed_rows: Vec<usize> = (0..d.nrows()).filter(|&i| !mask[i]).collect();
        if observed_rows.is_empty() {
            return Err(Error::Degenerate(format!("column `{}` has no observed values", meta.name)));
        }
        let method = cfg.method_for(d, col);
        if method == ImputeMethod::Logreg && meta.kind != ColumnKind::Binary {
            return Err(Error::InvalidArgument(format!("logreg cannot impute continuous column `{}`", meta.name)));
        }
        targets.push(Target {
            col,
            method,
            predictors: cfg.predictors_for(d, col)?,
            missing_rows: (0..d.nrows()).filter(|&i| mask[i]).collect(),
            observed_rows,
        });
    }

    let mut datasets = Vec::with_capacity(cfg.m);
    let mut ridge_fallbacks = Vec::new();
    for k in 0..cfg.m {
        let mut stream = rng.child(k as u64);
        let (done, fallbacks) = impute_once(d, &targets, cfg.cycles, &mut stream)
            .map_err(|e| Error::Imputation { index: k, source: Box::new(e) })?;
        ridge_fallbacks.extend(fallbacks.into_iter().map(|c| (k, d.meta(c).name.clone())));
        datasets.push(done);
    }
    Ok(ImputedSet {
        datasets,
        provenance: ImputeProvenance {
            config: cfg.clone(),
            ridge_fallbacks,
        },
    })
}

fn impute_once(d: &Dataset, targets: &[Target], cycles: usize, rng: &mut RngStream) -> Result<(Dataset, Vec<usize>)> {
    // Fully observed working copy; the source mask lives in `targets`.
    let mut values: Vec<Vec<f64>> = (0..d.ncols()).map(|j| d.column(j).to_vec()).collect();
    for t in targets {
        for &i in &t.missing_rows {
            let donor = *t.observed_rows.choose(rng).expect("observed rows checked");
            values[t.col][i] = d.column(t.col)[donor];
        }
    }
    let mut fallbacks = Vec::new();
    if !targets.is_empty() {
        for _ in 0..cycles {
            for t in targets {
                let draws = match t.method {
                    ImputeMethod::Logreg => {
                        let (draws, ridge) = draw_logreg(&values, t, rng)?;
                        if ridge && !fallbacks.contains(&t.col) {
                            fallbacks.push(t.col);
                        }
                        draws
                    }
                    ImputeMethod::Norm => draw_norm(&values, t, rng)?,
                    ImputeMethod::Cart => draw_cart(d, &values, t, rng)?,
                };
                for (&i, v) in t.missing_rows.iter().zip(draws) {
                    values[t.col][i] = v;
                }
            }
        }
    }
    let mut out = d.clone();
    for t in targets {
        for &i in &t.missing_rows {
            out.fill_missing(i, t.col, values[t.col][i]);
        }
    }
    Ok((out, fallbacks))
}

fn design(values: &[Vec<f64>], predictors: &[usize], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), predictors.len() + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            values[predictors[c - 1]][rows[r]]
        }
    })
}

fn normal_vector<R: Rng>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| StandardNormal.sample(rng))
}

/// Lower Cholesky factor of a symmetric matrix, symmetrized first.
fn chol_lower(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (v + v.transpose()) * 0.5;
    Cholesky::new(sym).map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

fn draw_logreg(values: &[Vec<f64>], t: &Target, rng: &mut RngStream) -> Result<(Vec<f64>, bool)> {
    let x = design(values, &t.predictors, &t.observed_rows);
    let y: Vec<f64> = t.observed_rows.iter().map(|&i| values[t.col][i]).collect();
    let w = vec![1.0; y.len()];
    let (fit, used_ridge) = fit_logistic_probabilities(&x, &y, &w)?;
    let cov = model_covariance(&x, &w, &fit.coef, fit.ridge)?;
    let beta = &fit.coef + chol_lower(&cov)? * normal_vector(fit.coef.len(), rng);
    let xm = design(values, &t.predictors, &t.missing_rows);
    let eta = xm * beta;
    let draws = eta.iter().map(|&e| (rng.gen::<f64>() < expit(e)) as u8 as f64).collect();
    Ok((draws, used_ridge))
}

fn draw_norm(values: &[Vec<f64>], t: &Target, rng: &mut RngStream) -> Result<Vec<f64>> {
    let x = design(values, &t.predictors, &t.observed_rows);
    let y = DVector::from_iterator(t.observed_rows.len(), t.observed_rows.iter().map(|&i| values[t.col][i]));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let v = match xtx.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite())) {
        Some(v) => v,
        None => {
            let mut pen = xtx;
            for j in 0..pen.nrows() {
                pen[(j, j)] += 1e-5 * pen[(j, j)].max(1e-12);
            }
            pen.try_inverse().ok_or(Error::NotPositiveDefinite)?
        }
    };
    let coef = &v * xty;
    let resid = &y - &x * &coef;
    let df = (t.observed_rows.len() as f64 - x.ncols() as f64).max(1.0);
    let chi: f64 = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
    let sigma = (resid.norm_squared() / chi).sqrt();
    let beta = &coef + chol_lower(&v)? * normal_vector(coef.len(), rng) * sigma;
    let xm = design(values, &t.predictors, &t.missing_rows);
    let mean = xm * beta;
    Ok(mean
        .iter()
        .map(|&mu| {
            let z: f64 = StandardNormal.sample(rng);
            mu + sigma * z
        })
        .collect())
}

fn draw_cart(d: &Dataset, values: &[Vec<f64>], t: &Target, rng: &mut RngStream) -> Result<Vec<f64>> {
    let current = Dataset::complete(d.columns().to_vec(), values.to_vec())?;
    let frame = FitFrame::new(&current, t.predictors.clone());
    let mut count = vec![0.0; d.nrows()];
    for &i in &t.observed_rows {
        count[i] = 1.0;
    }
    let controls = TreeControls {
        min_bucket: 5,
        cp: 1e-4,
        missing_mode: MissingMode::Surrogate,
        max_surrogates: 0,
        ..TreeControls::default()
    };
    let (tree, assign) = grow(
        &frame,
        &GrowInput {
            target: &values[t.col],
            weight: &count,
            count: &count,
        },
        &controls,
        TreeKind::Regression,
    );
    let mut donors: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes().len()];
    for &i in &t.observed_rows {
        donors[assign[i] as usize].push(values[t.col][i]);
    }
    t.missing_rows
        .iter()
        .map(|&i| {
            let leaf = tree.leaf_of(&current, i);
            donors[leaf]
                .choose(rng)
                .copied()
                .ok_or_else(|| Error::Degenerate("empty donor leaf".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub point: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    /// Infinite when the between-imputation variance is zero.
    pub df: f64,
    pub level: f64,
    pub ci: (f64, f64),
}

impl PooledEstimate {
    pub fn se(&self) -> f64 {
        self.total.sqrt()
    }
}

const T_DF_CUTOFF: f64 = 1e6;

/// Rubin's rules over `(point, variance)` pairs.
pub fn rubin_pool(estimates: &[(f64, f64)], level: f64) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidArgument("pooling needs at least two estimates".into()));
    }
    if estimates.iter().any(|(q, u)| !q.is_finite() || !(u.is_finite() && *u >= 0.0)) {
        return Err(Error::InvalidArgument("estimates must be finite with nonnegative variance".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("level must lie in (0, 1)".into()));
    }
    let mf = m as f64;
    let point = estimates.iter().map(|e| e.0).sum::<f64>() / mf;
    let within = estimates.iter().map(|e| e.1).sum::<f64>() / mf;
    let between = estimates.iter().map(|e| (e.0 - point).powi(2)).sum::<f64>() / (mf - 1.0);
    let inflated = (1.0 + 1.0 / mf) * between;
    let total = within + inflated;
    let p = 0.5 + level / 2.0;
    let df = if between > 0.0 {
        (mf - 1.0) * (1.0 + within / inflated).powi(2)
    } else {
        f64::INFINITY
    };
    // statrs stalls for astronomically large df; the t and normal quantiles
    // agree to ~1e-6 from here on.
    let q = if df <= T_DF_CUTOFF {
        let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        t.inverse_cdf(p)
    } else {
        Normal::standard().inverse_cdf(p)
    };
    let half = q * total.sqrt();
    Ok(PooledEstimate {
        point,
        within,
        between,
        total,
        df,
        level,
        ci: (point - half, point + half),
    })
}
