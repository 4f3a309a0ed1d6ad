//! Monte Carlo driver. Each replication generates a cohort, estimates every
//! requested specification before and after missingness is injected, and
//! the estimates are scored against the true ATT log odds ratio.

mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{
    estimate_att, estimate_att_mi_modes, fit_ps, EffectEstimate, EstimationMode, PropensityScores, PsConfig, PsMethod,
};
use crate::data::Dataset;
use crate::dgp::{generate_cohort, inject_missingness, true_att_log_or, ScenarioConfig};
use crate::error::{Error, Result};
use crate::impute::{mice_impute, MiceConfig};
use crate::stats::{Purpose, RngStream};

pub use report::{emit_report, read_report_csv, write_csv, write_markdown, ReportFormat};

/// How missing covariate data are dealt with before the propensity model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handling {
    /// Fully observed cohort, before missingness is injected.
    None,
    /// Incomplete data passed straight to the tree ensemble.
    Direct,
    /// Complete cases only.
    Cca,
    /// Multiple imputation, estimates pooled by Rubin's rules.
    Mi,
}

impl Handling {
    const ALL: [Handling; 4] = [Handling::None, Handling::Direct, Handling::Cca, Handling::Mi];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub ps: PsMethod,
    pub handling: Handling,
    pub mode: EstimationMode,
}

impl EstimatorSpec {
    pub fn new(ps: PsMethod, handling: Handling, mode: EstimationMode) -> Result<Self> {
        if !ps.handles_missing() && matches!(handling, Handling::Direct | Handling::Cca) {
            return Err(Error::InvalidArgument(format!(
                "{} needs complete data: use it before missingness or after imputation",
                ps.label()
            )));
        }
        Ok(Self { ps, handling, mode })
    }

    /// "Without" for the fully observed cohort, "With" otherwise.
    pub fn data_label(&self) -> &'static str {
        if self.handling == Handling::None {
            "Without"
        } else {
            "With"
        }
    }

    pub fn method_label(&self) -> String {
        match self.handling {
            Handling::None | Handling::Direct => self.ps.label().to_string(),
            Handling::Cca => format!("CCA+{}", self.ps.label()),
            Handling::Mi => format!("MI+{}", self.ps.label()),
        }
    }

    /// Parses `[before+|cca+|mi+]method`; a bare method means direct use on incomplete data.
    pub fn parse(s: &str, mode: EstimationMode) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (handling, rest) = match lower.split_once('+') {
            None => (Handling::Direct, lower.as_str()),
            Some(("before", r)) => (Handling::None, r),
            Some(("cca", r)) => (Handling::Cca, r),
            Some(("mi", r)) => (Handling::Mi, r),
            Some((p, _)) => return Err(Error::InvalidArgument(format!("unknown missing-data handling `{p}`"))),
        };
        Self::new(PsMethod::from_str(rest)?, handling, mode)
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({})", self.data_label(), self.method_label(), self.mode)
    }
}

/// The ten standard estimators (five before and five after missingness), for each mode.
pub fn study_estimators(modes: &[EstimationMode]) -> Vec<EstimatorSpec> {
    use Handling::*;
    use PsMethod::*;
    let rows = [
        (BaCart, None),
        (BCart, None),
        (BaCart, Direct),
        (BCart, Direct),
        (BaCart, Cca),
        (BCart, Cca),
        (BaCart, Mi),
        (BCart, Mi),
        (LrC, Mi),
        (LrM, Mi),
    ];
    modes
        .iter()
        .flat_map(|&mode| rows.iter().map(move |&(ps, h)| EstimatorSpec { ps, handling: h, mode }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub ps: PsConfig,
    pub mice: MiceConfig,
    /// Population size of the true-effect oracle.
    pub truth_n: usize,
    /// Known true effect; skips the oracle when set.
    pub truth: Option<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl HarnessConfig {
    pub fn preset(p: Preset) -> Self {
        let (reps, ps) = match p {
            Preset::Desk => (500, PsConfig::desk()),
            Preset::Full => (5000, PsConfig::default()),
        };
        Self {
            n: 2000,
            reps,
            seed: 20180101,
            ps,
            mice: MiceConfig::default(),
            truth_n: 10_000_000,
            truth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidArgument("at least two replications are required".into()));
        }
        if self.n < 10 {
            return Err(Error::InvalidArgument("cohort size is too small".into()));
        }
        self.mice.validate()?;
        self.ps.boost.validate()?;
        self.ps.tree.validate()
    }
}

/// Performance of one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub data: String,
    pub method: String,
    pub mode: EstimationMode,
    pub bias: f64,
    pub emp_se: f64,
    pub mean_se: f64,
    pub mse: f64,
    pub coverage: f64,
    pub n_ok: usize,
    pub failures: usize,
    /// Replications whose outcome fit needed the ridge fallback.
    pub ridge: usize,
    /// Bias minus the bias of the same method on the fully observed cohort.
    pub bias_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub truth: f64,
    pub reps: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    /// Failure threshold: more than 1% failed replications invalidates a row.
    pub fn is_valid(&self) -> bool {
        self.rows.iter().all(|r| (r.failures as f64) <= 0.01 * self.reps as f64)
    }

    pub fn row(&self, data: &str, method: &str, mode: EstimationMode) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.data == data && r.method == method && r.mode == mode)
    }

    pub fn row_for(&self, spec: &EstimatorSpec) -> Option<&MetricRow> {
        self.row(spec.data_label(), &spec.method_label(), spec.mode)
    }
}

/// Monte Carlo standard error of a coverage proportion.
pub fn coverage_mc_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Per-replication outcome of every specification, in specification order.
pub type Replication = Vec<std::result::Result<EffectEstimate, String>>;

fn stream_tag(h: Handling, ps: PsMethod) -> u64 {
    (h as u64) * 16 + ps as u64
}

/// Runs all specifications on one replication.
pub fn run_replication(cfg: &ScenarioConfig, specs: &[EstimatorSpec], h: &HarnessConfig, rep: u64) -> Replication {
    let mut out: Replication = vec![Err("not run".into()); specs.len()];
    let mut ps_cfg = h.ps.clone();
    ps_cfg.true_form = cfg.exposure_model;
    let cohort = match generate_cohort(h.n, cfg, &mut RngStream::new(h.seed, rep, Purpose::Cohort)) {
        Ok(c) => c,
        Err(e) => return vec![Err(e.to_string()); specs.len()],
    };
    let needs = |hd: Handling| specs.iter().any(|s| s.handling == hd);
    let incomplete = if Handling::ALL[1..].iter().any(|&hd| needs(hd)) {
        match inject_missingness(&cohort, cfg, &mut RngStream::new(h.seed, rep, Purpose::Missingness)) {
            Ok(d) => Some(d),
            Err(e) => return vec![Err(e.to_string()); specs.len()],
        }
    } else {
        None
    };
    let est_root = RngStream::new(h.seed, rep, Purpose::Estimator);
    let match_root = RngStream::new(h.seed, rep, Purpose::Matching);

    for handling in Handling::ALL {
        let methods: BTreeSet<PsMethod> = specs.iter().filter(|s| s.handling == handling).map(|s| s.ps).collect();
        if methods.is_empty() {
            continue;
        }
        let data = match handling {
            Handling::None => Ok(Some(cohort.data.clone())),
            Handling::Direct => Ok(incomplete.clone()),
            Handling::Cca => incomplete.as_ref().unwrap().complete_cases().map(Some),
            Handling::Mi => Ok(None),
        };
        let imputed = if handling == Handling::Mi {
            Some(mice_impute(
                incomplete.as_ref().unwrap(),
                &h.mice,
                &RngStream::new(h.seed, rep, Purpose::Imputation),
            ))
        } else {
            None
        };
        for ps in methods {
            let idx: Vec<usize> = (0..specs.len())
                .filter(|&i| specs[i].handling == handling && specs[i].ps == ps)
                .collect();
            let modes: Vec<EstimationMode> = idx.iter().map(|&i| specs[i].mode).collect();
            let tag = stream_tag(handling, ps);
            let results: Vec<std::result::Result<EffectEstimate, String>> = match (&data, &imputed) {
                (_, Some(Ok(set))) => match estimate_att_mi_modes(set, ps, &modes, &ps_cfg, &est_root.child(tag)) {
                    Ok(v) => v.into_iter().map(Ok).collect(),
                    Err(e) => vec![Err(e.to_string()); modes.len()],
                },
                (_, Some(Err(e))) => vec![Err(e.to_string()); modes.len()],
                (Ok(Some(d)), None) => match fit_ps(d, ps, &ps_cfg, &mut est_root.child(tag)) {
                    Ok(scores) => modes
                        .iter()
                        .map(|&mode| {
                            let mut r = match_root.child(tag * 4 + mode as u64);
                            estimate_att(d, &scores, mode, &mut r).map_err(|e| e.to_string())
                        })
                        .collect(),
                    Err(e) => vec![Err(e.to_string()); modes.len()],
                },
                (Ok(None), None) => vec![Err("no data".into()); modes.len()],
                (Err(e), None) => vec![Err(e.to_string()); modes.len()],
            };
            for (i, r) in idx.into_iter().zip(results) {
                out[i] = r;
            }
        }
    }
    out
}

/// Estimates one specification on a given dataset, with the random streams a
/// replication would use at index `rep`. Scores are returned unless the
/// specification pools over imputations.
pub fn estimate_dataset(
    d: &Dataset,
    spec: &EstimatorSpec,
    ps: &PsConfig,
    mice: &MiceConfig,
    seed: u64,
    rep: u64,
) -> Result<(EffectEstimate, Option<PropensityScores>)> {
    let tag = stream_tag(spec.handling, spec.ps);
    let est = RngStream::new(seed, rep, Purpose::Estimator).child(tag);
    let data = match spec.handling {
        Handling::None | Handling::Direct => d.clone(),
        Handling::Cca => d.complete_cases()?,
        Handling::Mi => {
            let set = mice_impute(d, mice, &RngStream::new(seed, rep, Purpose::Imputation))?;
            let mut v = estimate_att_mi_modes(&set, spec.ps, &[spec.mode], ps, &est)?;
            return Ok((v.remove(0), None));
        }
    };
    let scores = fit_ps(&data, spec.ps, ps, &mut est.clone())?;
    let mut r = RngStream::new(seed, rep, Purpose::Matching).child(tag * 4 + spec.mode as u64);
    let e = estimate_att(&data, &scores, spec.mode, &mut r)?;
    Ok((e, Some(scores)))
}

/// Summary metrics for each specification. `truth` is the true log OR.
pub fn summarize(scenario: &str, truth: f64, specs: &[EstimatorSpec], reps: &[Replication]) -> MetricsReport {
    let mut rows: Vec<MetricRow> = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let ok: Vec<&EffectEstimate> = reps.iter().filter_map(|r| r[k].as_ref().ok()).collect();
            let n = ok.len();
            let nf = n as f64;
            let dev: Vec<f64> = ok.iter().map(|e| e.point - truth).collect();
            let bias = dev.iter().sum::<f64>() / nf;
            let mean_point = ok.iter().map(|e| e.point).sum::<f64>() / nf;
            let emp_se = if n > 1 {
                (ok.iter().map(|e| (e.point - mean_point).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            MetricRow {
                data: spec.data_label().to_string(),
                method: spec.method_label(),
                mode: spec.mode,
                bias,
                emp_se,
                mean_se: ok.iter().map(|e| e.se).sum::<f64>() / nf,
                mse: dev.iter().map(|d| d * d).sum::<f64>() / nf,
                coverage: ok.iter().filter(|e| e.ci.0 <= truth && truth <= e.ci.1).count() as f64 / nf,
                n_ok: n,
                failures: reps.len() - n,
                ridge: ok.iter().filter(|e| e.ridge).count(),
                bias_diff: None,
            }
        })
        .collect();
    for k in 0..specs.len() {
        if specs[k].handling == Handling::None {
            continue;
        }
        let base = specs
            .iter()
            .position(|s| s.handling == Handling::None && s.ps == specs[k].ps && s.mode == specs[k].mode);
        rows[k].bias_diff = base.map(|b| rows[k].bias - rows[b].bias);
    }
    MetricsReport {
        scenario: scenario.to_string(),
        truth,
        reps: reps.len(),
        rows,
    }
}

/// True ATT log OR of a scenario from the oracle, or the configured value.
pub fn scenario_truth(cfg: &ScenarioConfig, h: &HarnessConfig) -> f64 {
    h.truth.unwrap_or_else(|| {
        let mut rng = RngStream::new(h.seed, 0, Purpose::Oracle);
        true_att_log_or(cfg.gamma, cfg.exposure_model, h.truth_n, &mut rng)
    })
}

pub fn run_scenario(cfg: &ScenarioConfig, specs: &[EstimatorSpec], h: &HarnessConfig) -> Result<MetricsReport> {
    run_scenario_with_progress(cfg, specs, h, &|_| {})
}

/// As [`run_scenario`], calling `progress` with each finished replication index.
pub fn run_scenario_with_progress(
    cfg: &ScenarioConfig,
    specs: &[EstimatorSpec],
    h: &HarnessConfig,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<MetricsReport> {
    h.validate()?;
    cfg.validate()?;
    let truth = scenario_truth(cfg, h);
    let reps: Vec<Replication> = (0..h.reps)
        .into_par_iter()
        .map(|r| {
            let out = run_replication(cfg, specs, h, r as u64);
            progress(r);
            out
        })
        .collect();
    Ok(summarize(&cfg.id, truth, specs, &reps))
}
