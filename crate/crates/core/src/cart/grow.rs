use super::{MissingMode, NodeKind, SplitRule, Surrogate, Tree, TreeControls, TreeKind, TreeNode};
use crate::data::Dataset;

/// Dataset view with candidate columns presorted once, shared across the
/// many trees of an ensemble.
pub(crate) struct FitFrame<'a> {
    pub d: &'a Dataset,
    /// Candidate splitter columns (dataset indices).
    pub features: Vec<usize>,
    /// Per feature: observed rows sorted by value, ties by row index.
    pub sorted: Vec<Vec<u32>>,
}

impl<'a> FitFrame<'a> {
    pub fn new(d: &'a Dataset, features: Vec<usize>) -> Self {
        let sorted = features
            .iter()
            .map(|&col| {
                let vals = d.column(col);
                let miss = d.missing_column(col);
                let mut rows: Vec<u32> = (0..d.nrows() as u32).filter(|&r| !miss[r as usize]).collect();
                rows.sort_by(|&a, &b| vals[a as usize].total_cmp(&vals[b as usize]).then(a.cmp(&b)));
                rows
            })
            .collect();
        Self { d, features, sorted }
    }
}

/// Per-row inputs. Rows with zero `count` do not take part in the fit.
pub(crate) struct GrowInput<'a> {
    pub target: &'a [f64],
    /// Case weight, multiplicity included.
    pub weight: &'a [f64],
    /// Multiplicity, used for the `min_split` / `min_bucket` rules.
    pub count: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    w: f64,
    s: f64,
    q: f64,
    n: f64,
}

impl Stats {
    #[inline]
    fn add(&mut self, input: &GrowInput, r: usize) {
        let w = input.weight[r];
        let y = input.target[r];
        self.w += w;
        self.s += w * y;
        self.q += w * y * y;
        self.n += input.count[r];
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            w: self.w - o.w,
            s: self.s - o.s,
            q: self.q - o.q,
            n: self.n - o.n,
        }
    }

    /// Weighted sum of squares about the mean.
    #[inline]
    fn sse(&self) -> f64 {
        if self.w > 0.0 {
            (self.q - self.s * self.s / self.w).max(0.0)
        } else {
            0.0
        }
    }

    fn of_rows(input: &GrowInput, rows: &[u32]) -> Stats {
        let mut st = Stats::default();
        for &r in rows {
            st.add(input, r as usize);
        }
        st
    }
}

struct Work {
    node: usize,
    rows: Vec<u32>,
    lists: Vec<Vec<u32>>,
    stats: Stats,
    depth: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    improvement: f64,
}

struct Grower<'f, 'a, 'i> {
    frame: &'f FitFrame<'a>,
    input: &'i GrowInput<'i>,
    controls: &'f TreeControls,
    root_sse: f64,
    tol: f64,
    nodes: Vec<TreeNode>,
    assign: Vec<u32>,
    side: Vec<u8>,
}

const LEFT: u8 = 0;
const RIGHT: u8 = 1;
const MISSING: u8 = 2;

/// Grows a tree; returns it with the leaf index of every participating row
/// (`u32::MAX` for rows with zero count).
pub(crate) fn grow(
    frame: &FitFrame,
    input: &GrowInput,
    controls: &TreeControls,
    kind: TreeKind,
) -> (Tree, Vec<u32>) {
    let nrows = frame.d.nrows();
    let active = |r: u32| input.count[r as usize] > 0.0;
    let rows: Vec<u32> = (0..nrows as u32).filter(|&r| active(r)).collect();
    let lists: Vec<Vec<u32>> = frame
        .sorted
        .iter()
        .map(|l| l.iter().copied().filter(|&r| active(r)).collect())
        .collect();
    let stats = Stats::of_rows(input, &rows);
    let root_sse = stats.sse();
    let mut g = Grower {
        frame,
        input,
        controls,
        root_sse,
        tol: 1e-12 * (1.0 + root_sse),
        nodes: vec![leaf_node(&stats, 0.0, 0)],
        assign: vec![u32::MAX; nrows],
        side: vec![LEFT; nrows],
    };
    let root = Work {
        node: 0,
        rows,
        lists,
        stats,
        depth: 0,
    };
    let budget = controls.max_splits.unwrap_or(usize::MAX);
    let mut pending: Vec<(Work, Option<Candidate>)> = Vec::new();
    let cand = g.evaluate(&root);
    pending.push((root, cand));
    let mut splits = 0usize;
    while splits < budget {
        let best = pending
            .iter()
            .enumerate()
            .filter_map(|(k, (w, c))| c.map(|c| (k, w.node, c.improvement)))
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
        let Some((k, _, _)) = best else { break };
        let (work, cand) = pending.swap_remove(k);
        let last = splits + 1 == budget;
        for child in g.split(work, cand.expect("filtered above")) {
            let c = if last { None } else { g.evaluate(&child) };
            pending.push((child, c));
        }
        splits += 1;
    }
    for (work, _) in pending {
        for &r in &work.rows {
            g.assign[r as usize] = work.node as u32;
        }
    }
    let scale = match kind {
        TreeKind::Classification => 2.0,
        TreeKind::Regression => 1.0,
    };
    let mut nodes = g.nodes;
    for node in &mut nodes {
        if let NodeKind::Split { rule, .. } = &mut node.kind {
            rule.improvement *= scale;
        }
    }
    let tree = Tree {
        nodes,
        kind,
        mode: controls.missing_mode,
        column_names: frame.d.columns().iter().map(|c| c.name.clone()).collect(),
    };
    (tree, g.assign)
}

fn leaf_node(st: &Stats, fallback: f64, depth: usize) -> TreeNode {
    TreeNode {
        value: if st.w > 0.0 { st.s / st.w } else { fallback },
        weight: st.w,
        count: st.n,
        depth,
        kind: NodeKind::Leaf,
    }
}

impl Grower<'_, '_, '_> {
    /// Best admissible split of a node, or `None` if it should stay a leaf.
    fn evaluate(&self, work: &Work) -> Option<Candidate> {
        let c = self.controls;
        let st = &work.stats;
        if st.n < c.min_split as f64 || work.depth >= c.max_depth {
            return None;
        }
        let sse = st.sse();
        if sse <= 1e-12 * st.q.abs() {
            return None;
        }
        let best = self.best_split(work)?;
        if best.improvement <= self.tol || best.improvement < c.cp * self.root_sse {
            return None;
        }
        Some(best)
    }

    fn best_split(&self, work: &Work) -> Option<Candidate> {
        let min_bucket = self.controls.min_bucket as f64;
        let node_sse = work.stats.sse();
        let mut best: Option<Candidate> = None;
        for (f, list) in work.lists.iter().enumerate() {
            if list.len() < 2 {
                continue;
            }
            let obs = Stats::of_rows(self.input, list);
            if obs.n < 2.0 * min_bucket {
                continue;
            }
            let (base, miss_sse) = match self.controls.missing_mode {
                MissingMode::Surrogate => (obs.sse(), 0.0),
                MissingMode::Branch => {
                    let m = work.stats.minus(&obs);
                    (node_sse, if m.n > 0.0 { m.sse() } else { 0.0 })
                }
            };
            let vals = self.frame.d.column(self.frame.features[f]);
            let mut acc = Stats::default();
            for k in 0..list.len() - 1 {
                let r = list[k] as usize;
                acc.add(self.input, r);
                if obs.n - acc.n < min_bucket {
                    break;
                }
                let x = vals[r];
                let xn = vals[list[k + 1] as usize];
                if !(x < xn) || acc.n < min_bucket {
                    continue;
                }
                let right = obs.minus(&acc);
                let imp = base - acc.sse() - right.sse() - miss_sse;
                let better = match best {
                    None => true,
                    Some(b) => imp > b.improvement + self.tol,
                };
                if better {
                    let mut thr = 0.5 * (x + xn);
                    if !(thr > x) {
                        thr = xn;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold: thr,
                        improvement: imp,
                    });
                }
            }
        }
        best
    }

    fn split(&mut self, work: Work, cand: Candidate) -> Vec<Work> {
        let frame = self.frame;
        let col = frame.features[cand.feature];
        let vals = frame.d.column(col);
        let miss = frame.d.missing_column(col);
        let mut wl = 0.0;
        let mut wr = 0.0;
        let mut any_missing = false;
        for &r in &work.rows {
            let r = r as usize;
            self.side[r] = if miss[r] {
                any_missing = true;
                MISSING
            } else if vals[r] < cand.threshold {
                wl += self.input.weight[r];
                LEFT
            } else {
                wr += self.input.weight[r];
                RIGHT
            };
        }
        let default_left = wl >= wr;
        let mode = self.controls.missing_mode;
        let surrogates = match mode {
            MissingMode::Surrogate => self.surrogates(&work, cand.feature),
            MissingMode::Branch => Vec::new(),
        };
        if mode == MissingMode::Surrogate && any_missing {
            for &r in &work.rows {
                let r = r as usize;
                if self.side[r] != MISSING {
                    continue;
                }
                let left = surrogates
                    .iter()
                    .find_map(|s| frame.d.get(r, s.var).map(|x| s.goes_left(x)))
                    .unwrap_or(default_left);
                self.side[r] = if left { LEFT } else { RIGHT };
            }
        }
        let n_children = if mode == MissingMode::Branch { 3 } else { 2 };
        let mut child_rows: Vec<Vec<u32>> = vec![Vec::new(); n_children];
        for &r in &work.rows {
            child_rows[self.side[r as usize] as usize].push(r);
        }
        let mut child_lists: Vec<Vec<Vec<u32>>> = vec![Vec::with_capacity(work.lists.len()); n_children];
        for list in &work.lists {
            let mut parts: Vec<Vec<u32>> = child_rows.iter().map(|c| Vec::with_capacity(c.len().min(list.len()))).collect();
            for &r in list {
                parts[self.side[r as usize] as usize].push(r);
            }
            for (c, p) in parts.into_iter().enumerate() {
                child_lists[c].push(p);
            }
        }
        let parent_value = self.nodes[work.node].value;
        let depth = work.depth + 1;
        let mut out = Vec::with_capacity(n_children);
        let mut ids = Vec::with_capacity(n_children);
        for (rows, lists) in child_rows.into_iter().zip(child_lists) {
            let stats = Stats::of_rows(self.input, &rows);
            let id = self.nodes.len();
            self.nodes.push(leaf_node(&stats, parent_value, depth));
            ids.push(id);
            out.push(Work {
                node: id,
                rows,
                lists,
                stats,
                depth,
            });
        }
        self.nodes[work.node].kind = NodeKind::Split {
            rule: SplitRule {
                var: col,
                threshold: cand.threshold,
                improvement: cand.improvement,
                surrogates,
                default_left,
            },
            left: ids[0],
            right: ids[1],
            missing: ids.get(2).copied(),
        };
        out
    }

    /// Ranked surrogate splits for a node whose primary sides are in `self.side`.
    fn surrogates(&self, work: &Work, primary: usize) -> Vec<Surrogate> {
        let max = self.controls.max_surrogates;
        if max == 0 {
            return Vec::new();
        }
        let mut found = Vec::new();
        for (f, list) in work.lists.iter().enumerate() {
            if f == primary {
                continue;
            }
            let col = self.frame.features[f];
            let vals = self.frame.d.column(col);
            let (mut tot_l, mut tot_r) = (0.0, 0.0);
            for &r in list {
                let r = r as usize;
                match self.side[r] {
                    LEFT => tot_l += self.input.weight[r],
                    RIGHT => tot_r += self.input.weight[r],
                    _ => {}
                }
            }
            let total = tot_l + tot_r;
            if tot_l <= 0.0 || tot_r <= 0.0 {
                continue;
            }
            let baseline = tot_l.max(tot_r) / total;
            let (mut a_l, mut a_r) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            let mut best: Option<(f64, f64, bool)> = None;
            for &r in list {
                let r = r as usize;
                let side = self.side[r];
                if side == MISSING {
                    continue;
                }
                let x = vals[r];
                if let Some(p) = prev {
                    if p < x {
                        let mut thr = 0.5 * (p + x);
                        if !(thr > p) {
                            thr = x;
                        }
                        let keep_dir = a_l + (tot_r - a_r);
                        let flip_dir = a_r + (tot_l - a_l);
                        for (agree, less_left) in [(keep_dir, true), (flip_dir, false)] {
                            if best.map_or(true, |b| agree > b.0 + 1e-12 * total) {
                                best = Some((agree, thr, less_left));
                            }
                        }
                    }
                }
                if side == LEFT {
                    a_l += self.input.weight[r];
                } else {
                    a_r += self.input.weight[r];
                }
                prev = Some(x);
            }
            if let Some((agree, threshold, less_goes_left)) = best {
                let agreement = agree / total;
                if agreement > baseline + 1e-12 {
                    found.push(Surrogate {
                        var: col,
                        threshold,
                        less_goes_left,
                        agreement,
                    });
                }
            }
        }
        found.sort_by(|a, b| b.agreement.total_cmp(&a.agreement).then(a.var.cmp(&b.var)));
        found.truncate(max);
        found
    }
}
