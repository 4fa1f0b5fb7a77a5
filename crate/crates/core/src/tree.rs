//! Tree structure, routing, and a CART grower that is generic over the
//! node-splitting criterion.
//!
//! A criterion reduces every row to a fixed-width vector of additive
//! statistics. Candidate partitions are then scored from the summed
//! statistics of each side, so a sorted prefix sum evaluates any number of
//! thresholds on a continuous covariate in one pass.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Covariates};

/// Routing rule of an internal node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `x <= threshold` goes left.
    Threshold(f64),
    /// Level indices (sorted) that go left. Any value that is not a known
    /// level index, such as a level unseen in training, also goes left.
    Levels(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub var: usize,
    pub rule: SplitRule,
}

impl SplitSpec {
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        match &self.rule {
            SplitRule::Threshold(t) => value <= *t,
            SplitRule::Levels(levels) => {
                if !(value >= 0.0) || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return true;
                }
                levels.binary_search(&(value as u32)).is_ok()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<SplitSpec>,
    pub children: Option<(u32, u32)>,
    start: u32,
    end: u32,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        self.children.is_none()
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A grown tree. In-bag rows are stored reordered so that the rows reaching
/// any node form one contiguous range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    order: Vec<u32>,
    inbag: Vec<u32>,
    oob: Vec<u32>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// In-bag rows reaching `node`.
    pub fn node_rows(&self, node: usize) -> &[u32] {
        let nd = &self.nodes[node];
        &self.order[nd.start as usize..nd.end as usize]
    }

    /// Sorted in-bag row indices.
    pub fn inbag(&self) -> &[u32] {
        &self.inbag
    }

    /// Sorted out-of-bag row indices.
    pub fn oob(&self) -> &[u32] {
        &self.oob
    }

    pub fn terminal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_terminal())
            .map(|(i, _)| i)
    }

    /// Terminal node reached by a covariate row.
    pub fn terminal_node(&self, x_row: &[f64]) -> usize {
        self.route(|c| x_row[c])
    }

    /// Terminal node reached when covariate `c` reads `value(c)`.
    #[inline]
    pub fn route<F: Fn(usize) -> f64>(&self, value: F) -> usize {
        let mut node = 0usize;
        loop {
            let nd = &self.nodes[node];
            match (&nd.split, nd.children) {
                (Some(split), Some((l, r))) => {
                    node = if split.goes_left(value(split.var)) {
                        l as usize
                    } else {
                        r as usize
                    };
                }
                _ => return node,
            }
        }
    }

    /// Whether any split uses covariate `var`.
    pub fn uses_var(&self, var: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| n.split.as_ref().is_some_and(|s| s.var == var))
    }

    /// Checks structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let root = &self.nodes[0];
        if root.start != 0 || root.end as usize != self.order.len() {
            return Err("root does not hold every in-bag row".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match (&n.split, n.children) {
                (Some(_), Some((l, r))) => {
                    let (l, r) = (&self.nodes[l as usize], &self.nodes[r as usize]);
                    if l.start != n.start || l.end != r.start || r.end != n.end {
                        return Err(format!("children of node {i} do not partition it"));
                    }
                    if l.is_empty() || r.is_empty() {
                        return Err(format!("node {i} has an empty child"));
                    }
                }
                (None, None) => {}
                _ => return Err(format!("node {i} has a split without children")),
            }
        }
        let mut sorted = self.order.clone();
        sorted.sort_unstable();
        if sorted != self.inbag {
            return Err("node rows are not the in-bag set".into());
        }
        Ok(())
    }
}

/// A node-splitting criterion over additive per-row statistics.
pub(crate) trait Criterion: Sync {
    /// Per-node state computed once before candidates are scored.
    type Ctx;

    /// Length of the per-row statistic vector.
    fn width(&self) -> usize;

    /// `None` makes the node terminal.
    fn node_context(&self, rows: &[u32]) -> Option<Self::Ctx>;

    /// Adds the statistics of `row` into `acc`.
    fn accumulate(&self, ctx: &Self::Ctx, row: u32, acc: &mut [f64]);

    /// Score of a partition from each side's summed statistics. Larger is better.
    fn score(
        &self,
        ctx: &Self::Ctx,
        left: &[f64],
        n_left: usize,
        right: &[f64],
        n_right: usize,
    ) -> f64;
}

/// How cut points are proposed for each candidate covariate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutSearch {
    /// Random thresholds / level subsets per covariate.
    Random(usize),
    /// Every midpoint between distinct sorted values and every level
    /// bipartition.
    Exhaustive,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowSettings {
    pub mtry: usize,
    pub cuts: CutSearch,
    pub nodesize: usize,
    pub min_child: usize,
}

struct Candidate {
    spec: SplitSpec,
    value: f64,
}

/// Reusable buffers for split search.
#[derive(Default)]
pub(crate) struct Scratch {
    pairs: Vec<(f64, u32)>,
    prefix: Vec<f64>,
    total: Vec<f64>,
    right: Vec<f64>,
    levels: Vec<f64>,
    counts: Vec<usize>,
    present: Vec<u32>,
    thresholds: Vec<f64>,
    partition: Vec<u32>,
}

/// Best split of `rows` over `vars`, or `None` if no candidate has both
/// sides with at least `min_child` rows and a positive score.
pub(crate) fn best_split<C: Criterion, R: Rng + ?Sized>(
    x: &Covariates,
    crit: &C,
    ctx: &C::Ctx,
    rows: &[u32],
    vars: &[usize],
    settings: &GrowSettings,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Option<(SplitSpec, f64)> {
    let w = crit.width();
    let m = rows.len();
    scratch.total.clear();
    scratch.total.resize(w, 0.0);
    for &r in rows {
        crit.accumulate(ctx, r, &mut scratch.total);
    }
    let mut best: Option<Candidate> = None;
    for &var in vars {
        let found = match &x.columns()[var].kind {
            ColumnKind::Continuous => {
                best_threshold(x, crit, ctx, rows, var, settings, rng, scratch)
            }
            ColumnKind::Categorical { levels } => best_levels(
                x,
                crit,
                ctx,
                rows,
                var,
                levels.len(),
                settings,
                rng,
                scratch,
            ),
        };
        if let Some(c) = found {
            if best.as_ref().is_none_or(|b| c.value > b.value) {
                best = Some(c);
            }
        }
    }
    debug_assert!(m >= 2 * settings.min_child || best.is_none());
    best.map(|c| (c.spec, c.value))
}

#[allow(clippy::too_many_arguments)]
fn best_threshold<C: Criterion, R: Rng + ?Sized>(
    x: &Covariates,
    crit: &C,
    ctx: &C::Ctx,
    rows: &[u32],
    var: usize,
    settings: &GrowSettings,
    rng: &mut R,
    s: &mut Scratch,
) -> Option<Candidate> {
    let col = x.column(var);
    let m = rows.len();
    let w = crit.width();
    s.pairs.clear();
    s.pairs.extend(rows.iter().map(|&r| (col[r as usize], r)));
    s.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lo = s.pairs[0].0;
    let hi = s.pairs[m - 1].0;
    if lo >= hi {
        return None;
    }

    s.prefix.clear();
    s.prefix.resize((m + 1) * w, 0.0);
    for (k, &(_, r)) in s.pairs.iter().enumerate() {
        let (done, rest) = s.prefix.split_at_mut((k + 1) * w);
        let next = &mut rest[..w];
        next.copy_from_slice(&done[k * w..]);
        crit.accumulate(ctx, r, next);
    }

    s.thresholds.clear();
    match settings.cuts {
        CutSearch::Random(k) => {
            for _ in 0..k {
                let u: f64 = rng.random();
                s.thresholds.push(lo + (hi - lo) * u);
            }
        }
        CutSearch::Exhaustive => {
            for k in 1..m {
                let (a, b) = (s.pairs[k - 1].0, s.pairs[k].0);
                if a < b {
                    let mid = a + (b - a) / 2.0;
                    s.thresholds.push(if mid < b { mid } else { a });
                }
            }
        }
    }

    let mut best: Option<(f64, f64)> = None;
    s.right.resize(w, 0.0);
    for &t in &s.thresholds {
        let n_left = s.pairs.partition_point(|p| p.0 <= t);
        let n_right = m - n_left;
        if n_left < settings.min_child || n_right < settings.min_child {
            continue;
        }
        let left = &s.prefix[n_left * w..(n_left + 1) * w];
        for ((r, tot), l) in s.right.iter_mut().zip(&s.total).zip(left) {
            *r = tot - l;
        }
        let value = crit.score(ctx, left, n_left, &s.right, n_right);
        if value > 0.0 && best.is_none_or(|(_, v)| value > v) {
            best = Some((t, value));
        }
    }
    best.map(|(t, value)| Candidate {
        spec: SplitSpec {
            var,
            rule: SplitRule::Threshold(t),
        },
        value,
    })
}

#[allow(clippy::too_many_arguments)]
fn best_levels<C: Criterion, R: Rng + ?Sized>(
    x: &Covariates,
    crit: &C,
    ctx: &C::Ctx,
    rows: &[u32],
    var: usize,
    n_levels: usize,
    settings: &GrowSettings,
    rng: &mut R,
    s: &mut Scratch,
) -> Option<Candidate> {
    let col = x.column(var);
    let w = crit.width();
    let m = rows.len();
    s.levels.clear();
    s.levels.resize(n_levels * w, 0.0);
    s.counts.clear();
    s.counts.resize(n_levels, 0);
    for &r in rows {
        let l = col[r as usize] as usize;
        s.counts[l] += 1;
        crit.accumulate(ctx, r, &mut s.levels[l * w..(l + 1) * w]);
    }
    s.present.clear();
    s.present
        .extend((0..n_levels as u32).filter(|&l| s.counts[l as usize] > 0));
    let k = s.present.len();
    if k < 2 {
        return None;
    }

    let mut left = vec![0.0; w];
    s.right.resize(w, 0.0);
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut evaluate = |mask: &[bool], s: &mut Scratch| {
        left.iter_mut().for_each(|v| *v = 0.0);
        let mut n_left = 0;
        for (i, &lvl) in s.present.iter().enumerate() {
            if mask[i] {
                let l = lvl as usize;
                n_left += s.counts[l];
                for (a, b) in left.iter_mut().zip(&s.levels[l * w..(l + 1) * w]) {
                    *a += b;
                }
            }
        }
        let n_right = m - n_left;
        if n_left < settings.min_child || n_right < settings.min_child {
            return;
        }
        for ((r, tot), l) in s.right.iter_mut().zip(&s.total).zip(&left) {
            *r = tot - l;
        }
        let value = crit.score(ctx, &left, n_left, &s.right, n_right);
        if value > 0.0 && best.as_ref().is_none_or(|(_, v)| value > *v) {
            let subset = s
                .present
                .iter()
                .zip(mask)
                .filter(|(_, &on)| on)
                .map(|(&l, _)| l)
                .collect();
            best = Some((subset, value));
        }
    };

    let mut mask = vec![false; k];
    match settings.cuts {
        CutSearch::Random(draws) => {
            for _ in 0..draws {
                loop {
                    for b in mask.iter_mut() {
                        *b = rng.random();
                    }
                    let on = mask.iter().filter(|&&b| b).count();
                    if on > 0 && on < k {
                        break;
                    }
                }
                evaluate(&mask, s);
            }
        }
        CutSearch::Exhaustive => {
            // the last present level always goes right, so each
            // bipartition is visited once
            assert!(
                k <= 32,
                "exhaustive level search supports at most 32 levels"
            );
            for bits in 1u64..(1u64 << (k - 1)) {
                for (i, b) in mask.iter_mut().enumerate() {
                    *b = bits >> i & 1 == 1;
                }
                evaluate(&mask, s);
            }
        }
    }
    best.map(|(subset, value)| Candidate {
        spec: SplitSpec {
            var,
            rule: SplitRule::Levels(subset),
        },
        value,
    })
}

/// Grows one tree on the in-bag rows.
pub(crate) fn grow<C: Criterion, R: Rng + ?Sized>(
    x: &Covariates,
    crit: &C,
    mut inbag: Vec<u32>,
    oob: Vec<u32>,
    settings: &GrowSettings,
    rng: &mut R,
) -> Tree {
    inbag.sort_unstable();
    let mut order = inbag.clone();
    let mut nodes = vec![Node {
        split: None,
        children: None,
        start: 0,
        end: order.len() as u32,
    }];
    let mut scratch = Scratch::default();
    let mut stack = vec![0usize];
    let p = x.p();
    let mtry = settings.mtry.min(p);

    while let Some(id) = stack.pop() {
        let (start, end) = (nodes[id].start as usize, nodes[id].end as usize);
        let m = end - start;
        if m < 2 * settings.nodesize || m < 2 * settings.min_child {
            continue;
        }
        let rows = &order[start..end];
        let Some(ctx) = crit.node_context(rows) else {
            continue;
        };
        let vars = index::sample(rng, p, mtry).into_vec();
        let Some((spec, _)) = best_split(x, crit, &ctx, rows, &vars, settings, rng, &mut scratch)
        else {
            continue;
        };

        let col = x.column(spec.var);
        scratch.partition.clear();
        let seg = &mut order[start..end];
        scratch.partition.extend(
            seg.iter()
                .copied()
                .filter(|&r| spec.goes_left(col[r as usize])),
        );
        let n_left = scratch.partition.len();
        scratch.partition.extend(
            seg.iter()
                .copied()
                .filter(|&r| !spec.goes_left(col[r as usize])),
        );
        seg.copy_from_slice(&scratch.partition);

        let mid = (start + n_left) as u32;
        let l = nodes.len() as u32;
        nodes.push(Node {
            split: None,
            children: None,
            start: start as u32,
            end: mid,
        });
        nodes.push(Node {
            split: None,
            children: None,
            start: mid,
            end: end as u32,
        });
        nodes[id].split = Some(spec);
        nodes[id].children = Some((l, l + 1));
        stack.push(l as usize + 1);
        stack.push(l as usize);
    }

    Tree {
        nodes,
        order,
        inbag,
        oob,
    }
}
