//! ATT estimation from propensity scores: truncation, odds weights, greedy
//! caliper matching and a weighted logistic outcome model with robust SEs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cart::TreeControls;
use crate::data::Dataset;
use crate::dgp::{ExposureModel, EXPOSURE_TERMS, Term};
use crate::ensemble::{fit_bagged, fit_boosted, predict_ps_bagged, BoostConfig};
use crate::error::{Error, Result};
use crate::impute::{rubin_pool, ImputedSet};
use crate::logistic::{
    fit_logistic, fit_logistic_probabilities, fit_logistic_stabilized, sandwich_covariance, LogisticOptions,
};
use crate::stats::{empirical_sd, logit, RngStream};

pub const PS_LOWER: f64 = 0.001;
pub const PS_UPPER: f64 = 0.999;
/// Two-sided 90% normal quantile.
pub const Z_90: f64 = 1.6448536269514722;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PsMethod {
    #[serde(rename = "bacart")]
    BaCart,
    #[serde(rename = "bcart")]
    BCart,
    #[serde(rename = "lrc")]
    LrC,
    #[serde(rename = "lrm")]
    LrM,
}

impl PsMethod {
    pub const ALL: [PsMethod; 4] = [PsMethod::BaCart, PsMethod::BCart, PsMethod::LrC, PsMethod::LrM];

    pub fn label(self) -> &'static str {
        match self {
            PsMethod::BaCart => "baCART",
            PsMethod::BCart => "bCART",
            PsMethod::LrC => "LRc",
            PsMethod::LrM => "LRm",
        }
    }

    /// Whether the method can be fitted to data with missing covariates.
    pub fn handles_missing(self) -> bool {
        matches!(self, PsMethod::BaCart | PsMethod::BCart)
    }
}

impl fmt::Display for PsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PsMethod::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown propensity score method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    Ipw,
    Match,
}

impl EstimationMode {
    pub fn label(self) -> &'static str {
        match self {
            EstimationMode::Ipw => "ipw",
            EstimationMode::Match => "match",
        }
    }
}

impl fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(EstimationMode::Ipw),
            "match" => Ok(EstimationMode::Match),
            _ => Err(Error::InvalidArgument(format!("unknown estimation mode `{s}`"))),
        }
    }
}

/// Truncated propensity scores for the rows of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityScores {
    pub scores: Vec<f64>,
    pub method: PsMethod,
    /// True when the scores condition on the missingness pattern as well as the observed values.
    pub generalised: bool,
}

impl PropensityScores {
    pub fn from_raw(raw: &[f64], method: PsMethod, generalised: bool) -> Result<Self> {
        if raw.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("raw propensity scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            scores: truncate_scores(raw),
            method,
            generalised,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn truncate_scores(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|p| p.clamp(PS_LOWER, PS_UPPER)).collect()
}

/// 1 for exposed rows, `ps / (1 - ps)` for unexposed rows.
pub fn att_weights(ps: &[f64], exposure: &[f64]) -> Vec<f64> {
    ps.iter()
        .zip(exposure)
        .map(|(&p, &a)| if a == 1.0 { 1.0 } else { p / (1.0 - p) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    /// (exposed row, unexposed row).
    pub pairs: Vec<(usize, usize)>,
    pub caliper: f64,
}

/// Order-preserving integer key for a finite float.
fn float_key(x: f64) -> i64 {
    let b = x.to_bits() as i64;
    if b < 0 {
        b ^ i64::MAX
    } else {
        b
    }
}

/// Greedy 1:1 nearest-neighbour matching on the logit score without
/// replacement. Exposed rows are visited in a random order drawn from `rng`;
/// each takes the closest unmatched unexposed row within the caliper.
/// Equidistant candidates go to the lower row index.
pub fn greedy_match<R: Rng>(ps: &[f64], exposure: &[f64], caliper_mult: f64, rng: &mut R) -> Result<MatchedSample> {
    if ps.len() != exposure.len() {
        return Err(Error::InvalidArgument("one score per row required".into()));
    }
    if !(caliper_mult >= 0.0) {
        return Err(Error::InvalidArgument("caliper multiplier must be nonnegative".into()));
    }
    let lg: Vec<f64> = ps.iter().map(|&p| logit(p)).collect();
    if lg.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must lie strictly inside (0, 1)".into()));
    }
    let mut exposed: Vec<usize> = (0..ps.len()).filter(|&i| exposure[i] == 1.0).collect();
    let unexposed: Vec<usize> = (0..ps.len()).filter(|&i| exposure[i] != 1.0).collect();
    if exposed.is_empty() || unexposed.is_empty() {
        return Err(Error::Degenerate("both exposure groups must be non-empty".into()));
    }
    let caliper = caliper_mult * empirical_sd(&lg)?;
    let mut pool: BTreeMap<(i64, usize), ()> = unexposed.iter().map(|&j| ((float_key(lg[j]), j), ())).collect();
    exposed.shuffle(rng);
    let mut pairs = Vec::new();
    for i in exposed {
        let key = float_key(lg[i]);
        // lowest row at the nearest value on each side
        let above = pool.range((key, 0)..).next().map(|(&(k, j), _)| (k, j));
        let below = pool.range(..(key, 0)).next_back().map(|(&(k, _), _)| {
            let j = pool.range((k, 0)..).next().unwrap().0 .1;
            (k, j)
        });
        let best = [below, above]
            .into_iter()
            .flatten()
            .map(|(_, j)| ((lg[j] - lg[i]).abs(), j))
            .filter(|&(dist, _)| dist <= caliper)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, j)) = best {
            pool.remove(&(float_key(lg[j]), j));
            pairs.push((i, j));
        }
    }
    Ok(MatchedSample { pairs, caliper })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeFit {
    pub intercept: f64,
    /// Exposure log odds ratio.
    pub coef: f64,
    /// Sandwich standard error of `coef`.
    pub se: f64,
    pub iterations: usize,
    pub ridge: bool,
}

fn outcome_design(a: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { 1.0 } else { a[i] })
}

fn outcome_fit(x: &DMatrix<f64>, y: &[f64], w: &[f64], fit: crate::logistic::LogisticFit, ridge: bool) -> Result<OutcomeFit> {
    let cov = sandwich_covariance(x, y, w, &fit.coef)?;
    Ok(OutcomeFit {
        intercept: fit.coef[0],
        coef: fit.coef[1],
        se: cov[(1, 1)].max(0.0).sqrt(),
        iterations: fit.iterations,
        ridge,
    })
}

/// Weighted logistic regression of `y` on an intercept and `a` with an HC0 sandwich SE.
pub fn weighted_logistic(y: &[f64], a: &[f64], w: &[f64]) -> Result<OutcomeFit> {
    let x = outcome_design(a);
    let fit = fit_logistic(&x, y, w, &LogisticOptions::default())?;
    outcome_fit(&x, y, w, fit, false)
}

/// As [`weighted_logistic`], falling back to a ridge-stabilized fit on separation.
pub fn weighted_logistic_stabilized(y: &[f64], a: &[f64], w: &[f64]) -> Result<OutcomeFit> {
    let x = outcome_design(a);
    let (fit, ridge) = fit_logistic_stabilized(&x, y, w)?;
    outcome_fit(&x, y, w, fit, ridge)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// Degrees of freedom of the interval; infinite for a single dataset.
    pub df: f64,
    /// Matched pairs, or the effective sample size of the weighted unexposed arm.
    pub n_used: f64,
    /// Whether any outcome fit needed the ridge fallback.
    pub ridge: bool,
}

fn binary_column<'a>(d: &'a Dataset, col: usize) -> Result<&'a [f64]> {
    let v = d.observed_column(col)?;
    if let Some((row, &x)) = v.iter().enumerate().find(|(_, &x)| x != 0.0 && x != 1.0) {
        return Err(Error::NotBinary {
            column: d.meta(col).name.clone(),
            row,
            value: x,
        });
    }
    Ok(v)
}

/// ATT log odds ratio by odds weighting or by matching, with a 90% normal interval.
pub fn estimate_att<R: Rng>(d: &Dataset, ps: &PropensityScores, mode: EstimationMode, rng: &mut R) -> Result<EffectEstimate> {
    if ps.len() != d.nrows() {
        return Err(Error::InvalidArgument("propensity scores do not match the dataset".into()));
    }
    let a = binary_column(d, d.exposure_index())?;
    let y_col = d
        .outcome_index()
        .ok_or_else(|| Error::Schema("dataset has no outcome column".into()))?;
    let y = binary_column(d, y_col)?;
    let (fit, n_used) = match mode {
        EstimationMode::Ipw => {
            let w = att_weights(&ps.scores, a);
            let (s, s2) = w
                .iter()
                .zip(a)
                .filter(|(_, &ai)| ai == 0.0)
                .fold((0.0, 0.0), |(s, s2), (wi, _)| (s + wi, s2 + wi * wi));
            let ess = if s2 > 0.0 { s * s / s2 } else { 0.0 };
            (weighted_logistic_stabilized(y, a, &w)?, ess)
        }
        EstimationMode::Match => {
            let m = greedy_match(&ps.scores, a, 0.2, rng)?;
            if m.pairs.is_empty() {
                return Err(Error::NoMatches);
            }
            let rows: Vec<usize> = m.pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
            let ym: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            let am: Vec<f64> = rows.iter().map(|&r| a[r]).collect();
            let w = vec![1.0; rows.len()];
            (weighted_logistic_stabilized(&ym, &am, &w)?, m.pairs.len() as f64)
        }
    };
    Ok(EffectEstimate {
        point: fit.coef,
        se: fit.se,
        ci: (fit.coef - Z_90 * fit.se, fit.coef + Z_90 * fit.se),
        df: f64::INFINITY,
        n_used,
        ridge: fit.ridge,
    })
}

/// Pools per-imputation estimates with Rubin's rules at the 90% level.
pub fn pool_estimates(estimates: &[EffectEstimate]) -> Result<EffectEstimate> {
    let pairs: Vec<(f64, f64)> = estimates.iter().map(|e| (e.point, e.se * e.se)).collect();
    let pooled = rubin_pool(&pairs, 0.90)?;
    Ok(EffectEstimate {
        point: pooled.point,
        se: pooled.se(),
        ci: pooled.ci,
        df: pooled.df,
        n_used: estimates.iter().map(|e| e.n_used).sum::<f64>() / estimates.len() as f64,
        ridge: estimates.iter().any(|e| e.ridge),
    })
}

/// Propensity model settings shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsConfig {
    pub bag_trees: usize,
    pub tree: TreeControls,
    pub boost: BoostConfig,
    /// Exposure model used for the correctly specified logistic fit.
    pub true_form: ExposureModel,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            bag_trees: 100,
            tree: TreeControls::default(),
            boost: BoostConfig::full(),
            true_form: ExposureModel::Nonlinear,
        }
    }
}

impl PsConfig {
    pub fn desk() -> Self {
        Self {
            boost: BoostConfig::desk(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogisticDesign {
    MainEffects,
    /// The exposure model's own terms over the first ten covariates.
    TrueForm(ExposureModel),
}

/// Maximum-likelihood logistic propensity model on complete data.
pub fn logistic_ps(d: &Dataset, design: LogisticDesign) -> Result<PropensityScores> {
    let cov = d.covariate_indices();
    if cov.iter().any(|&j| d.column_has_missing(j)) {
        return Err(Error::InvalidArgument("logistic propensity models need complete covariates".into()));
    }
    let a = binary_column(d, d.exposure_index())?;
    let n = d.nrows();
    let (x, method) = match design {
        LogisticDesign::MainEffects => (
            DMatrix::from_fn(n, cov.len() + 1, |i, j| if j == 0 { 1.0 } else { d.column(cov[j - 1])[i] }),
            PsMethod::LrM,
        ),
        LogisticDesign::TrueForm(model) => {
            if cov.len() < 10 {
                return Err(Error::Schema("the true-form design needs ten covariates".into()));
            }
            let terms: Vec<Term> = EXPOSURE_TERMS
                .iter()
                .filter(|(_, t)| model == ExposureModel::Nonlinear || matches!(t, Term::Main(_)))
                .map(|(_, t)| *t)
                .collect();
            let mut row = [0.0; 10];
            let mut x = DMatrix::zeros(n, terms.len() + 1);
            for i in 0..n {
                for (k, &j) in cov.iter().take(10).enumerate() {
                    row[k] = d.column(j)[i];
                }
                x[(i, 0)] = 1.0;
                for (k, t) in terms.iter().enumerate() {
                    x[(i, k + 1)] = t.eval(&row);
                }
            }
            (x, PsMethod::LrC)
        }
    };
    let (fit, _) = fit_logistic_probabilities(&x, a, &vec![1.0; n])?;
    PropensityScores::from_raw(&fit.fitted, method, false)
}

/// Fits the requested propensity model to `d` and returns truncated in-sample scores.
pub fn fit_ps(d: &Dataset, method: PsMethod, cfg: &PsConfig, rng: &mut RngStream) -> Result<PropensityScores> {
    let a = d.exposure_index();
    let generalised = d.has_missing();
    match method {
        PsMethod::BaCart => {
            let m = fit_bagged(d, a, cfg.bag_trees, &cfg.tree, rng)?;
            PropensityScores::from_raw(&predict_ps_bagged(&m, d)?, method, false)
        }
        PsMethod::BCart => {
            let m = fit_boosted(d, a, &cfg.boost, rng)?;
            PropensityScores::from_raw(&m.fitted, method, generalised)
        }
        PsMethod::LrC => logistic_ps(d, LogisticDesign::TrueForm(cfg.true_form)),
        PsMethod::LrM => logistic_ps(d, LogisticDesign::MainEffects),
    }
}

/// Fits `method` within every completed dataset, estimates the ATT for each
/// mode and pools across imputations. Imputation `k` uses `rng.child(k)`.
pub fn estimate_att_mi_modes(
    imputed: &ImputedSet,
    method: PsMethod,
    modes: &[EstimationMode],
    cfg: &PsConfig,
    rng: &RngStream,
) -> Result<Vec<EffectEstimate>> {
    let mut per_mode: Vec<Vec<EffectEstimate>> = vec![Vec::new(); modes.len()];
    for (k, d) in imputed.datasets.iter().enumerate() {
        let wrap = |e| Error::Imputation {
            index: k,
            source: Box::new(e),
        };
        let stream = rng.child(k as u64);
        let ps = fit_ps(d, method, cfg, &mut stream.child(0)).map_err(wrap)?;
        for (slot, &mode) in per_mode.iter_mut().zip(modes) {
            let mut r = stream.child(1 + mode as u64);
            slot.push(estimate_att(d, &ps, mode, &mut r).map_err(wrap)?);
        }
    }
    per_mode.iter().map(|e| pool_estimates(e)).collect()
}

pub fn estimate_att_mi(
    imputed: &ImputedSet,
    method: PsMethod,
    mode: EstimationMode,
    cfg: &PsConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    Ok(estimate_att_mi_modes(imputed, method, &[mode], cfg, rng)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, ColumnMeta, ColumnRole};
    use crate::dgp::{generate_cohort, ScenarioConfig};
    use crate::impute::{ImputeProvenance, MiceConfig};
    use proptest::prelude::*;

    fn ay_dataset(a: &[f64], y: &[f64]) -> Dataset {
        let cols = vec![
            ColumnMeta::new("X", ColumnKind::Continuous, ColumnRole::Covariate),
            ColumnMeta::new("A", ColumnKind::Binary, ColumnRole::Exposure),
            ColumnMeta::new("Y", ColumnKind::Binary, ColumnRole::Outcome),
        ];
        Dataset::complete(cols, vec![vec![0.0; a.len()], a.to_vec(), y.to_vec()]).unwrap()
    }

    fn table(a1y1: usize, a1: usize, a0y1: usize, a0: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = Vec::new();
        let mut y = Vec::new();
        for i in 0..a1 {
            a.push(1.0);
            y.push((i < a1y1) as u8 as f64);
        }
        for i in 0..a0 {
            a.push(0.0);
            y.push((i < a0y1) as u8 as f64);
        }
        (a, y)
    }

    #[test]
    fn truncation_bounds() {
        assert_eq!(truncate_scores(&[0.0005, 0.5, 0.9999, 0.0, 1.0]), vec![0.001, 0.5, 0.999, 0.001, 0.999]);
        assert!(PropensityScores::from_raw(&[1.2], PsMethod::LrM, false).is_err());
    }

    #[test]
    fn att_weight_values() {
        let w = att_weights(&[0.3, 0.5, 0.8, 0.001, 0.999], &[1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 1.0);
        assert!((w[2] - 4.0).abs() < 1e-12);
        assert_eq!(w[3], 1.0);
        assert!((w[4] - 999.0).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_log_odds_ratio_and_woolf_se() {
        let (a, y) = table(30, 100, 10, 100);
        let fit = weighted_logistic(&y, &a, &vec![1.0; 200]).unwrap();
        let expected = ((30.0 / 70.0) / (10.0 / 90.0f64)).ln();
        assert!((fit.coef - expected).abs() < 1e-8);
        // saturated model: HC0 equals the Woolf variance
        let woolf = (1.0 / 30.0 + 1.0 / 70.0 + 1.0 / 10.0 + 1.0 / 90.0f64).sqrt();
        assert!((fit.se - woolf).abs() < 1e-8);
    }

    #[test]
    fn weight_scaling_keeps_the_coefficient() {
        let (a, y) = table(40, 120, 25, 150);
        let w: Vec<f64> = (0..270).map(|i| 0.2 + (i % 5) as f64).collect();
        let f1 = weighted_logistic(&y, &a, &w).unwrap();
        let w2: Vec<f64> = w.iter().map(|v| v * 17.0).collect();
        let f2 = weighted_logistic(&y, &a, &w2).unwrap();
        assert!((f1.coef - f2.coef).abs() < 1e-10);
    }

    #[test]
    fn constant_scores_give_the_crude_log_odds_ratio() {
        let (a, y) = table(30, 100, 10, 100);
        let d = ay_dataset(&a, &y);
        let ps = PropensityScores::from_raw(&[0.5; 200], PsMethod::LrM, false).unwrap();
        let est = estimate_att(&d, &ps, EstimationMode::Ipw, &mut RngStream::from_seed(1)).unwrap();
        assert!((est.point - ((30.0 / 70.0) / (10.0 / 90.0f64)).ln()).abs() < 1e-8);
        assert!((est.ci.1 - est.point - Z_90 * est.se).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_rows_do_not_change_the_fit() {
        let (a, y) = table(30, 100, 10, 100);
        let w = vec![1.0; 200];
        let base = weighted_logistic(&y, &a, &w).unwrap();
        let (mut a2, mut y2, mut w2) = (a.clone(), y.clone(), w.clone());
        for k in 0..20 {
            a2.push((k % 2) as f64);
            y2.push(((k / 2) % 2) as f64);
            w2.push(0.0);
        }
        let more = weighted_logistic(&y2, &a2, &w2).unwrap();
        assert!((base.coef - more.coef).abs() < 1e-12);
        assert!((base.se - more.se).abs() < 1e-12);
    }

    #[test]
    fn matching_hand_enumeration() {
        // exposed at logit 0; unexposed at logits 0.1 and 5
        let ps = [0.5, crate::stats::expit(0.1), crate::stats::expit(5.0)];
        let a = [1.0, 0.0, 0.0];
        let sd = empirical_sd(&[0.0, 0.1, 5.0]).unwrap();
        let m = greedy_match(&ps, &a, 1.0 / sd, &mut RngStream::from_seed(2)).unwrap();
        assert!((m.caliper - 1.0).abs() < 1e-12);
        assert_eq!(m.pairs, vec![(0, 1)]);
    }

    #[test]
    fn matching_identical_arms_and_zero_caliper() {
        let scores: Vec<f64> = (0..10).map(|i| 0.05 + 0.09 * i as f64).collect();
        let mut ps = scores.clone();
        ps.extend(&scores);
        let a: Vec<f64> = (0..20).map(|i| (i < 10) as u8 as f64).collect();
        let m = greedy_match(&ps, &a, 0.2, &mut RngStream::from_seed(3)).unwrap();
        assert_eq!(m.pairs.len(), 10);
        for &(i, j) in &m.pairs {
            assert_eq!(j, i + 10);
        }
        let ps0 = [0.3, 0.3, 0.4, 0.6];
        let m0 = greedy_match(&ps0, &[1.0, 0.0, 1.0, 0.0], 0.0, &mut RngStream::from_seed(4)).unwrap();
        assert_eq!(m0.pairs, vec![(0, 1)]);
    }

    #[test]
    fn matching_ties_go_to_the_lower_row() {
        // unexposed rows 1 and 2 share a score, row 3 mirrors them below the exposed row
        let ps = [0.5, 0.6, 0.6, 0.4];
        let m = greedy_match(&ps, &[1.0, 0.0, 0.0, 0.0], 10.0, &mut RngStream::from_seed(5)).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        let ps = [0.5, 0.6, 0.6, crate::stats::expit(-logit(0.6))];
        let m = greedy_match(&ps, &[1.0, 0.0, 0.0, 0.0], 10.0, &mut RngStream::from_seed(5)).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].1, 1);
    }

    proptest! {
        #[test]
        fn matches_respect_caliper_and_use_rows_once(
            rows in prop::collection::vec((0.01f64..0.99, any::<bool>()), 4..60),
            seed in 0u64..1000,
        ) {
            let ps: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let a: Vec<f64> = rows.iter().map(|r| r.1 as u8 as f64).collect();
            prop_assume!(a.iter().any(|&v| v == 1.0) && a.iter().any(|&v| v == 0.0));
            let m = greedy_match(&ps, &a, 0.2, &mut RngStream::from_seed(seed)).unwrap();
            let mut seen = std::collections::HashSet::new();
            for &(i, j) in &m.pairs {
                prop_assert!(a[i] == 1.0 && a[j] == 0.0);
                prop_assert!(seen.insert(i) && seen.insert(j));
                prop_assert!((logit(ps[i]) - logit(ps[j])).abs() <= m.caliper);
            }
        }
    }

    #[test]
    fn lr_main_effects_fitted_mean_equals_exposure_mean() {
        let cfg = ScenarioConfig::preset("1").unwrap();
        let c = generate_cohort(1500, &cfg, &mut RngStream::from_seed(6)).unwrap();
        for design in [LogisticDesign::MainEffects, LogisticDesign::TrueForm(ExposureModel::Nonlinear)] {
            let ps = logistic_ps(&c.data, design).unwrap();
            let mean_a = c.data.column(crate::dgp::EXPOSURE).iter().sum::<f64>() / 1500.0;
            let mean_ps = ps.scores.iter().sum::<f64>() / 1500.0;
            assert!((mean_a - mean_ps).abs() < 1e-3);
        }
    }

    #[test]
    fn mi_identical_copies_pool_to_the_single_estimate() {
        let cfg = ScenarioConfig::preset("1").unwrap();
        let c = generate_cohort(600, &cfg, &mut RngStream::from_seed(7)).unwrap();
        let set = ImputedSet {
            datasets: vec![c.data.clone(); 3],
            provenance: ImputeProvenance {
                config: MiceConfig::default(),
                ridge_fallbacks: Vec::new(),
            },
        };
        let pooled = estimate_att_mi(&set, PsMethod::LrM, EstimationMode::Ipw, &PsConfig::desk(), &RngStream::from_seed(8)).unwrap();
        let ps = logistic_ps(&c.data, LogisticDesign::MainEffects).unwrap();
        let single = estimate_att(&c.data, &ps, EstimationMode::Ipw, &mut RngStream::from_seed(9)).unwrap();
        assert!((pooled.point - single.point).abs() < 1e-12);
        assert!((pooled.se - single.se).abs() < 1e-12);
        assert!(pooled.df.is_infinite());
    }

    #[test]
    fn null_outcome_effect_is_near_zero() {
        let mut cfg = ScenarioConfig::preset("1").unwrap();
        cfg.gamma = 0.0;
        let c = generate_cohort(4000, &cfg, &mut RngStream::from_seed(10)).unwrap();
        let ps = PropensityScores::from_raw(&c.propensity, PsMethod::LrC, false).unwrap();
        for mode in [EstimationMode::Ipw, EstimationMode::Match] {
            let est = estimate_att(&c.data, &ps, mode, &mut RngStream::from_seed(11)).unwrap();
            assert!(est.point.abs() < 3.0 * est.se, "{mode}: {} ({})", est.point, est.se);
        }
    }

    #[test]
    fn lrc_cannot_run_on_incomplete_data() {
        let cfg = ScenarioConfig::preset("1").unwrap();
        let c = generate_cohort(200, &cfg, &mut RngStream::from_seed(12)).unwrap();
        let d = crate::dgp::inject_missingness(&c, &cfg, &mut RngStream::from_seed(13)).unwrap();
        assert!(fit_ps(&d, PsMethod::LrC, &PsConfig::desk(), &mut RngStream::from_seed(1)).is_err());
        assert!("bacart".parse::<PsMethod>().unwrap() == PsMethod::BaCart);
        assert!("MATCH".parse::<EstimationMode>().unwrap() == EstimationMode::Match);
    }
}
