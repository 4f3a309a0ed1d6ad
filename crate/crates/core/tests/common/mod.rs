//! Checks shared by the property suite and the acceptance runner. Each
//! returns a one-line summary on success and the offending detail on failure.
#![allow(dead_code)]

use cartps::causal::{att_weights, EstimationMode, PsMethod};
use cartps::data::Dataset;
use cartps::dgp::{generate_cohort, inject_missingness, ScenarioConfig, EXPOSURE, N_COVARIATES, OUTCOME};
use cartps::harness::{run_scenario, write_csv, EstimatorSpec, Handling, HarnessConfig, MetricsReport};
use cartps::impute::{mice_impute, ImputeMethod, MiceConfig};
use cartps::stats::{Purpose, RngStream};

pub type Outcome = Result<String, String>;

fn scenario(id: &str) -> ScenarioConfig {
    ScenarioConfig::preset(id).unwrap()
}

pub fn consistency(n: usize, seed: u64) -> Outcome {
    for id in ["1", "4", "2L"] {
        let c = generate_cohort(n, &scenario(id), &mut RngStream::new(seed, 0, Purpose::Cohort)).unwrap();
        let a = c.data.column(EXPOSURE);
        let y = c.data.column(OUTCOME);
        for i in 0..n {
            let ya = if a[i] == 1.0 { c.y1[i] } else { c.y0[i] };
            if y[i] != ya {
                return Err(format!("scenario {id} row {i}: Y = {} but Y_A = {ya}", y[i]));
            }
        }
    }
    Ok(format!("Y = Y_A on all rows of scenarios 1, 4, 2L (n = {n})"))
}

/// Mean Y0 by arm within 20 quantile bins of the true propensity.
pub fn binned_exchangeability(n: usize, seed: u64) -> Outcome {
    let c = generate_cohort(n, &scenario("1"), &mut RngStream::new(seed, 0, Purpose::Cohort)).unwrap();
    let a = c.data.column(EXPOSURE);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| c.propensity[i].total_cmp(&c.propensity[j]));
    let mut worst = 0.0f64;
    for b in 0..20 {
        let rows = &order[b * n / 20..(b + 1) * n / 20];
        let (mut n1, mut n0, mut s1, mut s0) = (0.0, 0.0, 0.0, 0.0);
        for &i in rows {
            if a[i] == 1.0 {
                n1 += 1.0;
                s1 += c.y0[i];
            } else {
                n0 += 1.0;
                s0 += c.y0[i];
            }
        }
        if n1 == 0.0 || n0 == 0.0 {
            continue;
        }
        let p = (s1 + s0) / (n1 + n0);
        let se = (p * (1.0 - p) * (1.0 / n1 + 1.0 / n0)).sqrt();
        let z = if se > 0.0 { (s1 / n1 - s0 / n0).abs() / se } else { 0.0 };
        worst = worst.max(z);
        if z >= 4.0 {
            return Err(format!("bin {b}: mean Y0 differs by {z:.2} binomial SEs"));
        }
    }
    Ok(format!("max |z| over 20 bins = {worst:.2} (n = {n})"))
}

/// Weighted covariate mean differences (exposed minus weighted unexposed)
/// under ATT weights from the true scores, with linearized standard errors.
fn true_score_differences(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let c = generate_cohort(n, &scenario("1"), &mut RngStream::new(seed, 0, Purpose::Cohort)).unwrap();
    let a = c.data.column(EXPOSURE);
    let w = att_weights(&c.propensity, a);
    (0..N_COVARIATES)
        .map(|j| {
            let x = c.data.column(j);
            let arm = |exposed: bool| {
                let rows = (0..n).filter(|&i| (a[i] == 1.0) == exposed);
                let (s, sw) = rows.clone().fold((0.0, 0.0), |(s, sw), i| (s + w[i] * x[i], sw + w[i]));
                let m = s / sw;
                let v = rows.map(|i| (w[i] * (x[i] - m)).powi(2)).sum::<f64>() / (sw * sw);
                (m, v)
            };
            let ((mt, vt), (mu, vu)) = (arm(true), arm(false));
            (mt - mu, (vt + vu).sqrt())
        })
        .collect()
}

/// ATT weights from the true scores balance every covariate mean within 4/sqrt(n).
pub fn true_score_balance(n: usize, seed: u64) -> Outcome {
    let tol = 4.0 / (n as f64).sqrt();
    let diffs = true_score_differences(n, seed);
    let worst = diffs.iter().map(|d| d.0.abs()).fold(0.0, f64::max);
    for (j, &(diff, se)) in diffs.iter().enumerate() {
        if diff.abs() >= tol {
            return Err(format!("W{}: |weighted mean difference| {:.4} >= {tol:.4} (its SE is {se:.4})", j + 1, diff.abs()));
        }
    }
    Ok(format!("max |mean difference| = {worst:.4} < 4/sqrt(n) = {tol:.4}"))
}

/// As [`true_score_balance`], with the tolerance at four linearized SEs of each difference.
pub fn true_score_balance_se(n: usize, seed: u64) -> Outcome {
    let mut worst = 0.0f64;
    for (j, &(diff, se)) in true_score_differences(n, seed).iter().enumerate() {
        let z = diff.abs() / se;
        worst = worst.max(z);
        if z >= 4.0 {
            return Err(format!("W{}: difference {diff:.4} is {z:.2} SEs", j + 1));
        }
    }
    Ok(format!("max |difference| / SE = {worst:.2} < 4"))
}

pub fn tiny_harness(seed: u64) -> HarnessConfig {
    let mut h = HarnessConfig {
        n: 300,
        reps: 6,
        seed,
        truth: Some(0.906),
        ..HarnessConfig::default()
    };
    h.ps.bag_trees = 5;
    h.ps.boost.iters = 50;
    h.mice = MiceConfig {
        m: 2,
        cycles: 1,
        ..MiceConfig::default()
    };
    h
}

pub fn tiny_specs() -> Vec<EstimatorSpec> {
    let mut specs = Vec::new();
    for mode in [EstimationMode::Ipw, EstimationMode::Match] {
        for (ps, handling) in [
            (PsMethod::BaCart, Handling::None),
            (PsMethod::BaCart, Handling::Direct),
            (PsMethod::BCart, Handling::Direct),
            (PsMethod::BaCart, Handling::Cca),
            (PsMethod::LrM, Handling::Mi),
        ] {
            specs.push(EstimatorSpec::new(ps, handling, mode).unwrap());
        }
    }
    specs
}

fn tiny_report(seed: u64) -> MetricsReport {
    run_scenario(&scenario("5"), &tiny_specs(), &tiny_harness(seed)).unwrap()
}

pub fn metrics_identity(seed: u64) -> Outcome {
    let r = tiny_report(seed);
    let mut worst = 0.0f64;
    for row in &r.rows {
        let k = row.n_ok as f64;
        let rhs = row.bias * row.bias + (k - 1.0) / k * row.emp_se * row.emp_se;
        let gap = (row.mse - rhs).abs();
        worst = worst.max(gap);
        if !(gap <= 1e-10) {
            return Err(format!("{} {} {}: mse {} vs {}", row.data, row.method, row.mode, row.mse, rhs));
        }
    }
    Ok(format!("{} rows, max gap {worst:.1e}", r.rows.len()))
}

fn observed_cells_kept(orig: &Dataset, imp: &Dataset) -> Result<(), String> {
    for j in 0..orig.ncols() {
        if imp.column_has_missing(j) {
            return Err(format!("column {j} still has missing cells"));
        }
        for i in 0..orig.nrows() {
            if !orig.is_missing(i, j) && orig.column(j)[i].to_bits() != imp.column(j)[i].to_bits() {
                return Err(format!("observed cell ({i}, {j}) changed"));
            }
        }
    }
    Ok(())
}

pub fn imputation_keeps_observed(seed: u64) -> Outcome {
    let mut checked = 0;
    for id in ["2", "6"] {
        let cfg = scenario(id);
        let c = generate_cohort(400, &cfg, &mut RngStream::new(seed, 0, Purpose::Cohort)).unwrap();
        let d = inject_missingness(&c, &cfg, &mut RngStream::new(seed, 0, Purpose::Missingness)).unwrap();
        for method in [None, Some(ImputeMethod::Cart)] {
            let mut mice = method.map(MiceConfig::uniform).unwrap_or_default();
            mice.m = 3;
            mice.cycles = 2;
            let set = mice_impute(&d, &mice, &RngStream::new(seed, 0, Purpose::Imputation)).map_err(|e| e.to_string())?;
            for imp in &set.datasets {
                observed_cells_kept(&d, imp)?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} completed datasets keep every observed cell"))
}

fn csv_bytes(r: &MetricsReport) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&mut buf, std::slice::from_ref(r), &["seed".into()]).unwrap();
    buf
}

/// Identical seeds give identical reports, also across thread counts.
pub fn determinism(seed: u64) -> Outcome {
    let a = csv_bytes(&tiny_report(seed));
    let b = csv_bytes(&tiny_report(seed));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = csv_bytes(&pool.install(|| tiny_report(seed)));
    if a != b || a != c {
        return Err("reports differ between runs".into());
    }
    let other = csv_bytes(&tiny_report(seed + 1));
    if other == a {
        return Err("a different seed gave the same report".into());
    }
    Ok(format!("{} identical bytes over 3 runs", a.len()))
}
