//! Classification and regression trees with two strategies for missing
//! covariate values.
//!
//! * [`MissingMode::Surrogate`]: splits are scored on the rows whose splitting
//!   variable is observed; rows missing it are routed by ranked surrogate
//!   splits, falling back to the majority direction.
//! * [`MissingMode::Branch`]: every internal node gets a third child that
//!   receives the rows missing the splitting variable.
//!
//! For a binary target the Gini impurity of a node equals twice its weighted
//! sum of squares, so classification and regression share one growth engine.

mod grow;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub(crate) use grow::{grow, FitFrame, GrowInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    Surrogate,
    Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    /// Binary target, Gini impurity, leaf value = class-1 proportion.
    Classification,
    /// Real target, squared-error impurity, leaf value = weighted mean.
    Regression,
}

/// Growth controls. Defaults mirror rpart's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeControls {
    pub min_split: usize,
    pub min_bucket: usize,
    /// Minimum improvement relative to root impurity for a split to be kept.
    pub cp: f64,
    pub max_depth: usize,
    pub max_surrogates: usize,
    pub missing_mode: MissingMode,
    /// Cap on the number of splits; growth is best-first when set.
    pub max_splits: Option<usize>,
}

impl Default for TreeControls {
    fn default() -> Self {
        Self {
            min_split: 20,
            min_bucket: 7,
            cp: 0.01,
            max_depth: 30,
            max_surrogates: 5,
            missing_mode: MissingMode::Surrogate,
            max_splits: None,
        }
    }
}

impl TreeControls {
    pub fn validate(&self) -> Result<()> {
        if self.min_bucket > self.min_split {
            return Err(Error::InvalidArgument("min_bucket must not exceed min_split".into()));
        }
        if !(self.cp >= 0.0) {
            return Err(Error::InvalidArgument("cp must be nonnegative".into()));
        }
        if self.min_bucket == 0 {
            return Err(Error::InvalidArgument("min_bucket must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// Dataset column index.
    pub var: usize,
    pub threshold: f64,
    /// If true, `x < threshold` follows the primary left child.
    pub less_goes_left: bool,
    /// Weighted fraction of rows (both variables observed) routed as the primary split routes them.
    pub agreement: f64,
}

impl Surrogate {
    fn goes_left(&self, x: f64) -> bool {
        (x < self.threshold) == self.less_goes_left
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRule {
    /// Dataset column index; `x < threshold` goes left.
    pub var: usize,
    pub threshold: f64,
    /// Impurity decrease achieved by the split (Gini or sum-of-squares units).
    pub improvement: f64,
    /// Ranked by descending agreement; empty in branch mode.
    pub surrogates: Vec<Surrogate>,
    /// Direction for rows not routable by any surrogate.
    pub default_left: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf,
    Split {
        rule: SplitRule,
        left: usize,
        right: usize,
        /// Third child, branch mode only.
        missing: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Class-1 proportion or weighted mean of the training rows in the node.
    pub value: f64,
    /// Total case weight.
    pub weight: f64,
    /// Number of training cases (with multiplicity).
    pub count: f64,
    pub depth: usize,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

/// A fitted tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) kind: TreeKind,
    pub(crate) mode: MissingMode,
    pub(crate) column_names: Vec<String>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn missing_mode(&self) -> MissingMode {
        self.mode
    }

    pub fn leaf_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_indices().count()
    }

    pub(crate) fn check_schema(&self, d: &Dataset) -> Result<()> {
        let same = d.ncols() == self.column_names.len()
            && d.columns().iter().zip(&self.column_names).all(|(c, n)| &c.name == n);
        if same {
            Ok(())
        } else {
            Err(Error::Schema("dataset columns do not match the training schema".into()))
        }
    }

    /// Leaf reached by a row. Does not check the schema.
    pub fn leaf_of(&self, d: &Dataset, row: usize) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at].kind {
                NodeKind::Leaf => return at,
                NodeKind::Split {
                    rule,
                    left,
                    right,
                    missing,
                } => {
                    at = match d.get(row, rule.var) {
                        Some(x) => {
                            if x < rule.threshold {
                                *left
                            } else {
                                *right
                            }
                        }
                        None => match missing {
                            Some(m) => *m,
                            None => {
                                let by_surrogate = rule
                                    .surrogates
                                    .iter()
                                    .find_map(|s| d.get(row, s.var).map(|x| s.goes_left(x)));
                                if by_surrogate.unwrap_or(rule.default_left) {
                                    *left
                                } else {
                                    *right
                                }
                            }
                        },
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, d: &Dataset, row: usize) -> f64 {
        self.nodes[self.leaf_of(d, row)].value
    }

    pub fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(d)?;
        Ok((0..d.nrows()).map(|i| self.predict_row(d, i)).collect())
    }

    /// Indented text rendering of the tree.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(0, 0, "root", &mut out);
        out
    }

    fn dump_node(&self, at: usize, indent: usize, label: &str, out: &mut String) {
        let node = &self.nodes[at];
        let pad = "  ".repeat(indent);
        match &node.kind {
            NodeKind::Leaf => {
                let _ = writeln!(
                    out,
                    "{pad}{label}: leaf n={} value={:.6}",
                    node.count, node.value
                );
            }
            NodeKind::Split {
                rule,
                left,
                right,
                missing,
            } => {
                let name = &self.column_names[rule.var];
                let _ = writeln!(
                    out,
                    "{pad}{label}: {name} < {} n={} value={:.6} improve={:.6}",
                    rule.threshold, node.count, node.value, rule.improvement
                );
                for s in &rule.surrogates {
                    let _ = writeln!(
                        out,
                        "{pad}  surrogate {} {} {} agree={:.4}",
                        self.column_names[s.var],
                        if s.less_goes_left { "<" } else { ">=" },
                        s.threshold,
                        s.agreement
                    );
                }
                self.dump_node(*left, indent + 1, "left", out);
                self.dump_node(*right, indent + 1, "right", out);
                if let Some(m) = missing {
                    self.dump_node(*m, indent + 1, "missing", out);
                }
            }
        }
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} rows",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidWeights("weights must have a positive sum".into()));
    }
    Ok(())
}

/// Fits a classification tree for a fully observed binary column, using all
/// covariate columns as candidate splitters.
pub fn fit_tree(d: &Dataset, target: usize, weights: &[f64], controls: &TreeControls) -> Result<Tree> {
    controls.validate()?;
    check_weights(weights, d.nrows())?;
    let y = d.observed_column(target)?;
    if let Some((row, &v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NotBinary {
            column: d.meta(target).name.clone(),
            row,
            value: v,
        });
    }
    let frame = FitFrame::new(d, d.covariate_indices());
    let counts = vec![1.0; d.nrows()];
    let (tree, _) = grow(
        &frame,
        &GrowInput {
            target: y,
            weight: weights,
            count: &counts,
        },
        controls,
        TreeKind::Classification,
    );
    Ok(tree)
}

/// Fits a regression tree to a real target over all covariate columns.
pub fn fit_regression_tree(
    d: &Dataset,
    target: &[f64],
    weights: &[f64],
    controls: &TreeControls,
) -> Result<Tree> {
    controls.validate()?;
    check_weights(weights, d.nrows())?;
    if target.len() != d.nrows() || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("target must be finite with one value per row".into()));
    }
    let frame = FitFrame::new(d, d.covariate_indices());
    let counts = vec![1.0; d.nrows()];
    let (tree, _) = grow(
        &frame,
        &GrowInput {
            target,
            weight: weights,
            count: &counts,
        },
        controls,
        TreeKind::Regression,
    );
    Ok(tree)
}

#[cfg(test)]
mod tests;
