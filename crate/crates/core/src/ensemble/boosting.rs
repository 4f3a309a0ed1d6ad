use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::balance::BalanceEvaluator;
use crate::cart::{grow, FitFrame, GrowInput, MissingMode, NodeKind, Tree, TreeControls, TreeKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::{expit, logit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub iters: usize,
    pub shrinkage: f64,
    /// Splits per base tree.
    pub depth: usize,
    pub min_leaf: usize,
    pub bag_fraction: f64,
    /// Balance is evaluated at iteration 0, every `eval_stride` iterations and at the end.
    pub eval_stride: usize,
    /// Bound on the magnitude of a leaf's Newton step.
    pub max_step: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl BoostConfig {
    pub fn full() -> Self {
        Self {
            iters: 20_000,
            shrinkage: 0.0005,
            depth: 3,
            min_leaf: 10,
            bag_fraction: 0.5,
            eval_stride: 100,
            max_step: 8.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            iters: 5_000,
            eval_stride: 25,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::InvalidArgument("shrinkage must be positive".into()));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::InvalidArgument("bag fraction must lie in (0, 1]".into()));
        }
        if self.depth == 0 || self.min_leaf == 0 || self.eval_stride == 0 {
            return Err(Error::InvalidArgument("depth, min_leaf and eval_stride must be positive".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidArgument("max_step must be positive".into()));
        }
        Ok(())
    }

    fn tree_controls(&self) -> TreeControls {
        TreeControls {
            min_split: 2 * self.min_leaf,
            min_bucket: self.min_leaf,
            cp: 0.0,
            max_depth: 30,
            max_surrogates: 0,
            missing_mode: MissingMode::Branch,
            max_splits: Some(self.depth),
        }
    }
}

/// One boosting stage: a branch-mode regression tree and the Newton
/// increment of each node (only leaf entries are used).
#[derive(Debug, Clone)]
pub struct Stage {
    pub tree: Tree,
    pub increments: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoostedModel {
    pub f0: f64,
    pub shrinkage: f64,
    pub stages: Vec<Stage>,
    pub selected_iter: usize,
    /// (iteration, mean KS) at every evaluation point.
    pub ks_trace: Vec<(usize, f64)>,
    /// Mean training Bernoulli deviance after each iteration, index 0 = initial.
    pub deviance_trace: Vec<f64>,
    /// Training-row scores at the selected iteration.
    pub fitted: Vec<f64>,
}

fn mean_deviance(a: &[f64], f: &[f64]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(f)
        .map(|(&y, &e)| {
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            2.0 * (softplus - y * e)
        })
        .sum();
    total / a.len() as f64
}

/// Newton increments per node from per-leaf sums; a leaf without in-bag rows
/// borrows the step of its nearest populated ancestor.
fn node_increments(tree: &Tree, num: &mut [f64], den: &mut [f64], max_step: f64) -> Vec<f64> {
    let nodes = tree.nodes();
    let mut parent = vec![usize::MAX; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        if let NodeKind::Split { left, right, missing, .. } = &node.kind {
            parent[*left] = i;
            parent[*right] = i;
            if let Some(m) = missing {
                parent[*m] = i;
            }
        }
    }
    // children always follow their parent in node order
    for i in (1..nodes.len()).rev() {
        let p = parent[i];
        num[p] += num[i];
        den[p] += den[i];
    }
    let step = |i: usize| (num[i] / den[i]).clamp(-max_step, max_step);
    (0..nodes.len())
        .map(|i| {
            if !nodes[i].is_leaf() {
                return 0.0;
            }
            let mut at = i;
            while den[at] <= 0.0 && parent[at] != usize::MAX {
                at = parent[at];
            }
            if den[at] > 0.0 {
                step(at)
            } else {
                0.0
            }
        })
        .collect()
}

/// Bernoulli gradient boosting of the exposure on all covariates, keeping the
/// iteration with the best mean KS balance under ATT odds weights.
pub fn fit_boosted<R: Rng>(d: &Dataset, exposure: usize, config: &BoostConfig, rng: &mut R) -> Result<BoostedModel> {
    config.validate()?;
    let a = d.observed_column(exposure)?;
    if let Some((row, &v)) = a.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NotBinary {
            column: d.meta(exposure).name.clone(),
            row,
            value: v,
        });
    }
    let n = d.nrows();
    let mean_a = a.iter().sum::<f64>() / n as f64;
    if mean_a == 0.0 || mean_a == 1.0 {
        return Err(Error::Degenerate("exposure takes a single value".into()));
    }
    let f0 = logit(mean_a);
    let controls = config.tree_controls();
    let frame = FitFrame::new(d, d.covariate_indices());
    let balance = BalanceEvaluator::new(d)?;
    let in_bag = ((config.bag_fraction * n as f64).floor() as usize).max(1);

    let mut f = vec![f0; n];
    let mut p = vec![mean_a; n];
    let mut z = vec![0.0; n];
    let mut counts = vec![0.0; n];
    let mut stages = Vec::with_capacity(config.iters);
    let mut deviance_trace = Vec::with_capacity(config.iters + 1);
    deviance_trace.push(mean_deviance(a, &f));
    let mut ks_trace = vec![(0, balance.mean_ks(&p))];
    let mut best = (0, ks_trace[0].1);
    let mut fitted = p.clone();

    for t in 1..=config.iters {
        for i in 0..n {
            z[i] = a[i] - p[i];
        }
        counts.iter_mut().for_each(|c| *c = 0.0);
        for i in index::sample(rng, n, in_bag) {
            counts[i] = 1.0;
        }
        let (tree, assign) = grow(
            &frame,
            &GrowInput {
                target: &z,
                weight: &counts,
                count: &counts,
            },
            &controls,
            TreeKind::Regression,
        );
        let mut num = vec![0.0; tree.nodes().len()];
        let mut den = vec![0.0; tree.nodes().len()];
        for i in 0..n {
            let leaf = assign[i];
            if leaf != u32::MAX {
                num[leaf as usize] += z[i];
                den[leaf as usize] += p[i] * (1.0 - p[i]);
            }
        }
        let increments = node_increments(&tree, &mut num, &mut den, config.max_step);
        for i in 0..n {
            let leaf = if assign[i] != u32::MAX {
                assign[i] as usize
            } else {
                tree.leaf_of(d, i)
            };
            f[i] += config.shrinkage * increments[leaf];
            p[i] = expit(f[i]);
        }
        stages.push(Stage { tree, increments });
        deviance_trace.push(mean_deviance(a, &f));
        if t % config.eval_stride == 0 || t == config.iters {
            let ks = balance.mean_ks(&p);
            ks_trace.push((t, ks));
            if ks < best.1 {
                best = (t, ks);
                fitted.copy_from_slice(&p);
            }
        }
    }

    Ok(BoostedModel {
        f0,
        shrinkage: config.shrinkage,
        stages,
        selected_iter: best.0,
        ks_trace,
        deviance_trace,
        fitted,
    })
}

/// `expit(F0 + shrinkage * sum of stage increments)` over stages up to the selected iteration.
pub fn predict_ps_boosted(m: &BoostedModel, d: &Dataset) -> Result<Vec<f64>> {
    let used = &m.stages[..m.selected_iter];
    if let Some(s) = used.first() {
        s.tree.check_schema(d)?;
    }
    Ok((0..d.nrows())
        .map(|i| {
            let f: f64 = used.iter().map(|s| s.increments[s.tree.leaf_of(d, i)]).sum();
            expit(m.f0 + m.shrinkage * f)
        })
        .collect())
}
