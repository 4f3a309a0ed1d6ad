use crate::data::Dataset;
use crate::error::{Error, Result};

/// Mean weighted Kolmogorov-Smirnov distance between exposed rows (unit
/// weight) and unexposed rows weighted by `e / (1 - e)`, averaged over
/// covariates. Covariate orderings are computed once and reused.
pub struct BalanceEvaluator {
    exposed: Vec<bool>,
    /// Per covariate: (observed row, value) sorted by value.
    sorted: Vec<Vec<(u32, f64)>>,
}

impl BalanceEvaluator {
    pub fn new(d: &Dataset) -> Result<Self> {
        let a = d.observed_column(d.exposure_index())?;
        let exposed: Vec<bool> = a.iter().map(|&v| v == 1.0).collect();
        let n1 = exposed.iter().filter(|&&e| e).count();
        if n1 == 0 || n1 == exposed.len() {
            return Err(Error::Degenerate("both exposure groups must be non-empty".into()));
        }
        let sorted = d
            .covariate_indices()
            .into_iter()
            .map(|col| {
                let vals = d.column(col);
                let miss = d.missing_column(col);
                let mut rows: Vec<(u32, f64)> = (0..d.nrows())
                    .filter(|&r| !miss[r])
                    .map(|r| (r as u32, vals[r]))
                    .collect();
                rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                rows
            })
            .collect();
        Ok(Self { exposed, sorted })
    }

    /// KS distance for each covariate; `None` where an arm has no observed values.
    pub fn per_covariate(&self, scores: &[f64]) -> Vec<Option<f64>> {
        self.sorted
            .iter()
            .map(|rows| {
                let mut t1 = 0.0;
                let mut t0 = 0.0;
                for &(r, _) in rows {
                    let r = r as usize;
                    if self.exposed[r] {
                        t1 += 1.0;
                    } else {
                        t0 += odds(scores[r]);
                    }
                }
                if t1 <= 0.0 || t0 <= 0.0 {
                    return None;
                }
                let mut diff = 0.0f64;
                let mut best = 0.0f64;
                for (k, &(r, v)) in rows.iter().enumerate() {
                    let r = r as usize;
                    if self.exposed[r] {
                        diff += 1.0 / t1;
                    } else {
                        diff -= odds(scores[r]) / t0;
                    }
                    if rows.get(k + 1).map_or(true, |nx| nx.1 != v) {
                        best = best.max(diff.abs());
                    }
                }
                Some(best.min(1.0))
            })
            .collect()
    }

    pub fn mean_ks(&self, scores: &[f64]) -> f64 {
        let vals: Vec<f64> = self.per_covariate(scores).into_iter().flatten().collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

#[inline]
fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// Mean KS balance statistic for ATT odds weights derived from `scores`.
pub fn mean_ks_balance(d: &Dataset, scores: &[f64]) -> Result<f64> {
    if scores.len() != d.nrows() {
        return Err(Error::InvalidArgument("one score per row required".into()));
    }
    if scores.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument("scores must lie in (0, 1)".into()));
    }
    Ok(BalanceEvaluator::new(d)?.mean_ks(scores))
}
