use rand::Rng;

use crate::cart::{grow, FitFrame, GrowInput, Tree, TreeControls, TreeKind};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BaggedModel {
    pub trees: Vec<Tree>,
}

impl BaggedModel {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

fn binary_exposure(d: &Dataset, exposure: usize) -> Result<&[f64]> {
    let a = d.observed_column(exposure)?;
    if let Some((row, &v)) = a.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NotBinary {
            column: d.meta(exposure).name.clone(),
            row,
            value: v,
        });
    }
    Ok(a)
}

/// Fits `b` classification trees, each on an `n`-row bootstrap resample.
pub fn fit_bagged<R: Rng>(
    d: &Dataset,
    exposure: usize,
    b: usize,
    controls: &TreeControls,
    rng: &mut R,
) -> Result<BaggedModel> {
    if b == 0 {
        return Err(Error::InvalidArgument("bagging needs at least one tree".into()));
    }
    let n = d.nrows();
    let resamples: Vec<Vec<u32>> = (0..b)
        .map(|_| {
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1;
            }
            counts
        })
        .collect();
    fit_bagged_on_resamples(d, exposure, &resamples, controls)
}

/// Fits one tree per resample, each given as per-row draw counts.
pub fn fit_bagged_on_resamples(
    d: &Dataset,
    exposure: usize,
    resamples: &[Vec<u32>],
    controls: &TreeControls,
) -> Result<BaggedModel> {
    controls.validate()?;
    let a = binary_exposure(d, exposure)?;
    let frame = FitFrame::new(d, d.covariate_indices());
    let mut trees = Vec::with_capacity(resamples.len());
    for counts in resamples {
        if counts.len() != d.nrows() {
            return Err(Error::InvalidArgument("resample length differs from row count".into()));
        }
        let count: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        if count.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidWeights("empty resample".into()));
        }
        let (tree, _) = grow(
            &frame,
            &GrowInput {
                target: a,
                weight: &count,
                count: &count,
            },
            controls,
            TreeKind::Classification,
        );
        trees.push(tree);
    }
    Ok(BaggedModel { trees })
}

/// Per-row average of the tree predictions.
pub fn predict_ps_bagged(m: &BaggedModel, d: &Dataset) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; d.nrows()];
    for tree in &m.trees {
        tree.check_schema(d)?;
        for (i, s) in sum.iter_mut().enumerate() {
            *s += tree.predict_row(d, i);
        }
    }
    let b = m.trees.len() as f64;
    Ok(sum.into_iter().map(|s| s / b).collect())
}
