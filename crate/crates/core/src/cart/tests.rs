use super::*;
use crate::data::{ColumnKind, ColumnMeta, ColumnRole};
use crate::stats::RngStream;
use rand::Rng;

/// Covariates `x` (column-major, `None` = missing) plus binary target as exposure.
fn dataset(x: &[Vec<Option<f64>>], y: &[f64]) -> Dataset {
    let mut cols: Vec<ColumnMeta> = (0..x.len())
        .map(|j| ColumnMeta::new(format!("X{}", j + 1), ColumnKind::Continuous, ColumnRole::Covariate))
        .collect();
    cols.push(ColumnMeta::new("A", ColumnKind::Binary, ColumnRole::Exposure));
    let mut values: Vec<Vec<f64>> = x.iter().map(|c| c.iter().map(|v| v.unwrap_or(0.0)).collect()).collect();
    let mut missing: Vec<Vec<bool>> = x.iter().map(|c| c.iter().map(Option::is_none).collect()).collect();
    values.push(y.to_vec());
    missing.push(vec![false; y.len()]);
    Dataset::new(cols, values, missing).unwrap()
}

fn small_controls() -> TreeControls {
    TreeControls {
        min_split: 2,
        min_bucket: 1,
        cp: 0.0,
        ..TreeControls::default()
    }
}

fn gini(n1: f64, n: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else {
        let p = n1 / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    }
}

/// Exhaustive root-split search over observed rows, independent of the grower.
fn brute_force_root(x: &[Vec<Option<f64>>], y: &[f64], min_bucket: usize) -> Option<(usize, f64, f64)> {
    let mut cands: Vec<(usize, f64, f64)> = Vec::new();
    for (j, col) in x.iter().enumerate() {
        let obs: Vec<(f64, f64)> = col.iter().zip(y).filter_map(|(v, &t)| v.map(|v| (v, t))).collect();
        let mut distinct: Vec<f64> = obs.iter().map(|o| o.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let n = obs.len() as f64;
        let n1: f64 = obs.iter().map(|o| o.1).sum();
        for w in distinct.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let left: Vec<&(f64, f64)> = obs.iter().filter(|o| o.0 < thr).collect();
            let nl = left.len() as f64;
            if (left.len()) < min_bucket || obs.len() - left.len() < min_bucket {
                continue;
            }
            let nl1: f64 = left.iter().map(|o| o.1).sum();
            let imp = gini(n1, n) - gini(nl1, nl) - gini(n1 - nl1, n - nl);
            cands.push((j, thr, imp));
        }
    }
    let max = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 1e-12) {
        return None;
    }
    cands.into_iter().find(|c| c.2 > max - 1e-9)
}

#[test]
fn pure_target_gives_single_leaf() {
    let x = vec![(0..10).map(|i| Some(i as f64)).collect::<Vec<_>>()];
    let d = dataset(&x, &[1.0; 10]);
    let t = fit_tree(&d, 1, &[1.0; 10], &small_controls()).unwrap();
    assert_eq!(t.nodes().len(), 1);
    assert_eq!(t.root().value, 1.0);
}

#[test]
fn no_signal_with_cp_stays_a_leaf() {
    // 1,0,0,1 repeating along the covariate: every admissible cut gains little.
    let y: Vec<f64> = (0..20).map(|i| (i % 4 == 0 || i % 4 == 3) as u8 as f64).collect();
    let x = vec![(0..20).map(|i| Some(i as f64)).collect::<Vec<_>>()];
    let d = dataset(&x, &y);
    let controls = TreeControls {
        cp: 0.5,
        ..TreeControls::default()
    };
    let t = fit_tree(&d, 1, &[1.0; 20], &controls).unwrap();
    assert_eq!(t.nodes().len(), 1);
    let mean = y.iter().sum::<f64>() / 20.0;
    assert!((t.root().value - mean).abs() < 1e-15);
}

#[test]
fn root_split_matches_exhaustive_enumeration() {
    let mut rng = RngStream::from_seed(99);
    for _ in 0..50 {
        let n = rng.gen_range(4..=12);
        let p = rng.gen_range(1..=2);
        let x: Vec<Vec<Option<f64>>> = (0..p)
            .map(|_| (0..n).map(|_| Some(rng.gen_range(0..2) as f64)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let d = dataset(&x, &y);
        let t = fit_tree(&d, p, &vec![1.0; n], &small_controls()).unwrap();
        let expected = brute_force_root(&x, &y, 1);
        match (&t.root().kind, expected) {
            (NodeKind::Leaf, None) => {}
            (NodeKind::Split { rule, .. }, Some((j, thr, imp))) => {
                assert_eq!(rule.var, j);
                assert_eq!(rule.threshold, thr);
                assert!((rule.improvement - imp).abs() < 1e-10);
            }
            (kind, exp) => panic!("tree root {kind:?} vs oracle {exp:?}"),
        }
    }
}

#[test]
fn perfect_surrogate_routes_missing_rows_as_if_observed() {
    // X2 is an exact copy of X1; target is a step in X1.
    let base: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = base.iter().map(|&v| (v >= 15.0) as u8 as f64).collect();
    let x = vec![base.iter().map(|&v| Some(v)).collect::<Vec<_>>(), base.iter().map(|&v| Some(v)).collect()];
    let d = dataset(&x, &y);
    let t = fit_tree(&d, 2, &[1.0; 30], &TreeControls::default()).unwrap();
    let NodeKind::Split { rule, .. } = &t.root().kind else { panic!("expected a split") };
    assert_eq!(rule.var, 0);
    assert_eq!(rule.surrogates[0].var, 1);
    assert_eq!(rule.surrogates[0].agreement, 1.0);
    let mut probe = d.clone();
    for row in [3, 14, 15, 27] {
        let leaf_obs = t.leaf_of(&d, row);
        probe.set_missing(row, 0);
        assert_eq!(t.leaf_of(&probe, row), leaf_obs);
    }
}

#[test]
fn hand_traced_surrogate_with_reversed_direction() {
    // X2 = -X1, so the surrogate must send large X2 values left.
    let base: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = base.iter().map(|&v| (v >= 10.0) as u8 as f64).collect();
    let x = vec![base.iter().map(|&v| Some(v)).collect::<Vec<_>>(), base.iter().map(|&v| Some(-v)).collect()];
    let d = dataset(&x, &y);
    let t = fit_tree(&d, 2, &[1.0; 30], &TreeControls::default()).unwrap();
    let NodeKind::Split { rule, left, right, .. } = &t.root().kind else { panic!() };
    assert_eq!((rule.var, rule.threshold), (0, 9.5));
    let s = &rule.surrogates[0];
    assert_eq!((s.var, s.threshold, s.less_goes_left), (1, -9.5, false));
    let mut probe = d.clone();
    probe.set_missing(4, 0);
    probe.set_missing(20, 0);
    assert_eq!(t.leaf_of(&probe, 4), *left);
    assert_eq!(t.leaf_of(&probe, 20), *right);
}

#[test]
fn no_usable_surrogate_falls_back_to_majority() {
    let base: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = base.iter().map(|&v| (v >= 20.0) as u8 as f64).collect();
    // X2 constant: no surrogate can beat the majority rule.
    let x = vec![base.iter().map(|&v| Some(v)).collect::<Vec<_>>(), vec![Some(1.0); 30]];
    let d = dataset(&x, &y);
    let t = fit_tree(&d, 2, &[1.0; 30], &TreeControls::default()).unwrap();
    let NodeKind::Split { rule, left, .. } = &t.root().kind else { panic!() };
    assert!(rule.surrogates.is_empty());
    assert!(rule.default_left);
    let mut probe = d.clone();
    probe.set_missing(25, 0);
    assert_eq!(t.leaf_of(&probe, 25), *left);
}

#[test]
fn branch_mode_missing_child_holds_rows_missing_the_splitter() {
    let n = 40;
    let mut x1: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
    let y: Vec<f64> = (0..n).map(|i| (i >= 20) as u8 as f64).collect();
    for i in [2, 5, 22, 30, 33] {
        x1[i] = None;
    }
    let d = dataset(&[x1.clone()], &y);
    let controls = TreeControls {
        missing_mode: MissingMode::Branch,
        ..TreeControls::default()
    };
    let t = fit_tree(&d, 1, &vec![1.0; n], &controls).unwrap();
    let NodeKind::Split { rule, missing: Some(m), .. } = &t.root().kind else { panic!() };
    assert_eq!(rule.var, 0);
    let expected = [2, 5, 22, 30, 33].iter().map(|&i| y[i]).sum::<f64>() / 5.0;
    assert!((t.nodes()[*m].value - expected).abs() < 1e-15);
    assert_eq!(t.nodes()[*m].count, 5.0);
    for i in [2, 5, 22, 30, 33] {
        assert_eq!(t.leaf_of(&d, i), *m);
    }
}

#[test]
fn regression_tree_constant_target_is_a_leaf() {
    let x = vec![(0..25).map(|i| Some(i as f64)).collect::<Vec<_>>()];
    let d = dataset(&x, &[0.0; 25]);
    let t = fit_regression_tree(&d, &[2.5; 25], &[1.0; 25], &TreeControls::default()).unwrap();
    assert_eq!(t.nodes().len(), 1);
    assert_eq!(t.root().value, 2.5);
}

#[test]
fn regression_tree_finds_step() {
    let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
    let target: Vec<f64> = xs.iter().map(|&v| if v < 7.2 { -1.0 } else { 3.0 }).collect();
    let x = vec![xs.iter().map(|&v| Some(v)).collect::<Vec<_>>()];
    let d = dataset(&x, &[0.0; 40]);
    let t = fit_regression_tree(&d, &target, &[1.0; 40], &TreeControls::default()).unwrap();
    let NodeKind::Split { rule, .. } = &t.root().kind else { panic!() };
    // Data resolution 0.5: the step lies between 7.0 and 7.5.
    assert_eq!(rule.threshold, 7.25);
    assert_eq!(t.n_leaves(), 2);
}

#[test]
fn regression_branch_missing_child_is_mean_of_missing_rows() {
    let n = 40;
    let mut x1: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
    let target: Vec<f64> = (0..n).map(|i| if i < 20 { 0.0 } else { 10.0 } + i as f64 * 0.01).collect();
    let gone = [1, 7, 25, 39];
    for &i in &gone {
        x1[i] = None;
    }
    let d = dataset(&[x1], &[0.0; 40]);
    let controls = TreeControls {
        missing_mode: MissingMode::Branch,
        max_splits: Some(1),
        ..TreeControls::default()
    };
    let t = fit_regression_tree(&d, &target, &[1.0; 40], &controls).unwrap();
    let NodeKind::Split { missing: Some(m), .. } = &t.root().kind else { panic!() };
    let expected = gone.iter().map(|&i| target[i]).sum::<f64>() / gone.len() as f64;
    assert!((t.nodes()[*m].value - expected).abs() < 1e-12);
}

#[test]
fn max_splits_limits_growth() {
    let mut rng = RngStream::from_seed(5);
    let x: Vec<Vec<Option<f64>>> = (0..3).map(|_| (0..200).map(|_| Some(rng.gen::<f64>())).collect()).collect();
    let target: Vec<f64> = (0..200).map(|i| x[0][i].unwrap() * 3.0 + x[1][i].unwrap().powi(2)).collect();
    let d = dataset(&x, &[0.0; 200]);
    let controls = TreeControls {
        cp: 0.0,
        max_splits: Some(3),
        ..TreeControls::default()
    };
    let t = fit_regression_tree(&d, &target, &[1.0; 200], &controls).unwrap();
    let splits = t.nodes().iter().filter(|n| !n.is_leaf()).count();
    assert_eq!(splits, 3);
}

fn random_incomplete_weighted(seed: u64, n: usize, mode: MissingMode) -> (Dataset, Tree, Vec<u32>, Vec<f64>) {
    let mut rng = RngStream::from_seed(seed);
    let x: Vec<Vec<Option<f64>>> = (0..4)
        .map(|j| {
            (0..n)
                .map(|_| {
                    if rng.gen::<f64>() < 0.2 {
                        None
                    } else if j % 2 == 0 {
                        Some(rng.gen_range(0..2) as f64)
                    } else {
                        Some(rng.gen::<f64>())
                    }
                })
                .collect()
        })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let s = x[0][i].unwrap_or(0.5) + x[1][i].unwrap_or(0.5);
            (rng.gen::<f64>() < s / 2.0) as u8 as f64
        })
        .collect();
    let d = dataset(&x, &y);
    let controls = TreeControls {
        missing_mode: mode,
        ..TreeControls::default()
    };
    let frame = FitFrame::new(&d, d.covariate_indices());
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let counts = vec![1.0; n];
    let (t, assign) = grow(
        &frame,
        &GrowInput {
            target: d.column(4),
            weight: &w,
            count: &counts,
        },
        &controls,
        TreeKind::Classification,
    );
    (d, t, assign, w)
}

fn random_incomplete(seed: u64, n: usize, mode: MissingMode) -> (Dataset, Tree, Vec<u32>) {
    let (d, t, a, _) = random_incomplete_weighted(seed, n, mode);
    (d, t, a)
}

#[test]
fn leaf_predictions_average_to_target_mean() {
    for (seed, mode) in [(1, MissingMode::Surrogate), (2, MissingMode::Branch), (3, MissingMode::Surrogate)] {
        let (_, t, _) = random_incomplete(seed, 300, mode);
        let leaves: Vec<&TreeNode> = t.nodes().iter().filter(|n| n.is_leaf()).collect();
        let total_w: f64 = leaves.iter().map(|n| n.weight).sum();
        let avg = leaves.iter().map(|n| n.weight * n.value).sum::<f64>() / total_w;
        assert!((avg - t.root().value).abs() < 1e-10);
        assert!((total_w - t.root().weight).abs() < 1e-9);
    }
}

#[test]
fn accepted_splits_clear_the_complexity_bar() {
    for mode in [MissingMode::Surrogate, MissingMode::Branch] {
        let (_, t, _) = random_incomplete(17, 400, mode);
        let root_imp = 2.0 * t.root().weight * t.root().value * (1.0 - t.root().value);
        for node in t.nodes() {
            if let NodeKind::Split { rule, .. } = &node.kind {
                assert!(rule.improvement >= 0.01 * root_imp - 1e-12);
            }
        }
    }
}

#[test]
fn surrogates_beat_majority_rule_and_are_ranked() {
    let (d, t, assign, w) = random_incomplete_weighted(23, 400, MissingMode::Surrogate);
    let mut checked = 0;
    for (id, node) in t.nodes().iter().enumerate() {
        let NodeKind::Split { rule, .. } = &node.kind else { continue };
        // Training rows in this node: those whose leaf lies in its subtree.
        let in_node: Vec<usize> = (0..d.nrows())
            .filter(|&r| subtree_contains(&t, id, assign[r] as usize))
            .collect();
        for w in rule.surrogates.windows(2) {
            assert!(w[0].agreement >= w[1].agreement);
        }
        for s in &rule.surrogates {
            let both: Vec<usize> = in_node
                .iter()
                .copied()
                .filter(|&r| d.get(r, rule.var).is_some() && d.get(r, s.var).is_some())
                .collect();
            let total: f64 = both.iter().map(|&r| w[r]).sum();
            let lefts: f64 = both
                .iter()
                .filter(|&&r| d.get(r, rule.var).unwrap() < rule.threshold)
                .map(|&r| w[r])
                .sum();
            let majority = lefts.max(total - lefts) / total;
            assert!(s.agreement >= majority, "{} < {}", s.agreement, majority);
            let agree: f64 = both
                .iter()
                .filter(|&&r| {
                    let primary_left = d.get(r, rule.var).unwrap() < rule.threshold;
                    s.goes_left(d.get(r, s.var).unwrap()) == primary_left
                })
                .map(|&r| w[r])
                .sum();
            assert!((agree / total - s.agreement).abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

fn subtree_contains(t: &Tree, root: usize, target: usize) -> bool {
    if root == target {
        return true;
    }
    match &t.nodes()[root].kind {
        NodeKind::Leaf => false,
        NodeKind::Split { left, right, missing, .. } => {
            subtree_contains(t, *left, target)
                || subtree_contains(t, *right, target)
                || missing.map_or(false, |m| subtree_contains(t, m, target))
        }
    }
}

#[test]
fn every_training_row_reaches_exactly_one_leaf() {
    for mode in [MissingMode::Surrogate, MissingMode::Branch] {
        let (d, t, assign) = random_incomplete(31, 300, mode);
        for r in 0..d.nrows() {
            assert_ne!(assign[r], u32::MAX);
            assert!(t.nodes()[assign[r] as usize].is_leaf());
            assert_eq!(t.leaf_of(&d, r), assign[r] as usize, "row {r}");
        }
        let leaf_counts: f64 = t.nodes().iter().filter(|n| n.is_leaf()).map(|n| n.count).sum();
        assert_eq!(leaf_counts, d.nrows() as f64);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = vec![(0..4).map(|i| Some(i as f64)).collect::<Vec<_>>()];
    let d = dataset(&x, &[0.0, 1.0, 0.0, 1.0]);
    assert!(matches!(fit_tree(&d, 1, &[1.0, -1.0, 1.0, 1.0], &small_controls()), Err(Error::InvalidWeights(_))));
    assert!(matches!(fit_tree(&d, 1, &[0.0; 4], &small_controls()), Err(Error::InvalidWeights(_))));
    let bad = TreeControls {
        min_bucket: 30,
        ..TreeControls::default()
    };
    assert!(fit_tree(&d, 1, &[1.0; 4], &bad).is_err());
}

#[test]
fn dump_mentions_split_variable() {
    let base: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = base.iter().map(|&v| (v >= 15.0) as u8 as f64).collect();
    let d = dataset(&[base.iter().map(|&v| Some(v)).collect()], &y);
    let t = fit_tree(&d, 1, &[1.0; 30], &TreeControls::default()).unwrap();
    let text = t.dump();
    assert!(text.starts_with("root: X1 < 14.5"));
    assert!(text.contains("leaf"));
}
