//! Covariance-splitting random forest.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::linalg::{sample_cov, tri_distance};
use crate::seeds::{self, stream};
use crate::tree::{self, Criterion, CutSearch, GrowSettings, SplitSpec, Tree};

/// How many cut points to try per candidate covariate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSearch {
    /// `max(⌈n/50⌉, 10)` random cuts.
    #[default]
    Auto,
    Random(usize),
    /// All midpoints and all level bipartitions (deterministic).
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    /// Covariates tried per node; `None` means `⌈p/3⌉`.
    pub mtry: Option<usize>,
    pub nsplit: SplitSearch,
    /// Target average terminal-node size.
    pub nodesize: usize,
    /// Fraction of rows drawn without replacement for each tree.
    pub sampfrac: f64,
    /// Minimum rows on each side of a split.
    pub min_child: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 1000,
            mtry: None,
            nsplit: SplitSearch::Auto,
            nodesize: 5,
            sampfrac: 0.632,
            min_child: 2,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_nodesize(mut self, nodesize: usize) -> Self {
        self.nodesize = nodesize;
        self
    }

    pub fn with_ntree(mut self, ntree: usize) -> Self {
        self.ntree = ntree;
        self
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1))
    }

    pub fn nsplit_for(&self, n: usize) -> CutSearch {
        match self.nsplit {
            SplitSearch::Auto => CutSearch::Random(n.div_ceil(50).max(10)),
            SplitSearch::Random(k) => CutSearch::Random(k),
            SplitSearch::Exhaustive => CutSearch::Exhaustive,
        }
    }

    /// In-bag sample size for `n` training rows.
    pub fn sample_size(&self, n: usize) -> usize {
        (self.sampfrac * n as f64).round() as usize
    }

    /// Checks the parameters against a training set of `n` rows and `p`
    /// covariates.
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.ntree == 0 {
            return bad("ntree must be positive".into());
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return bad(format!("mtry must be in 1..={p}, got {m}"));
            }
        }
        if let SplitSearch::Random(0) = self.nsplit {
            return bad("nsplit must be positive".into());
        }
        if self.nodesize == 0 {
            return bad("nodesize must be positive".into());
        }
        if !(self.sampfrac > 0.0 && self.sampfrac <= 1.0) {
            return bad(format!("sampfrac must be in (0, 1], got {}", self.sampfrac));
        }
        if self.min_child < 2 {
            return bad("min_child must be at least 2".into());
        }
        if n < 2 * self.min_child {
            return bad(format!(
                "need at least {} rows for min_child={}, got {n}",
                2 * self.min_child,
                self.min_child
            ));
        }
        if self.sample_size(n) < 2 {
            return bad("subsample must contain at least 2 rows".into());
        }
        Ok(())
    }

    /// Parameters with `mtry` and `nsplit` fixed to the values used for a
    /// training set of `n` rows and `p` covariates.
    pub fn resolved(&self, n: usize, p: usize) -> ForestParams {
        let mut out = self.clone();
        out.mtry = Some(self.mtry_for(p));
        out.nsplit = match self.nsplit_for(n) {
            CutSearch::Random(k) => SplitSearch::Random(k),
            CutSearch::Exhaustive => SplitSearch::Exhaustive,
        };
        out
    }

    pub(crate) fn grow_settings(&self, n: usize, p: usize) -> GrowSettings {
        GrowSettings {
            mtry: self.mtry_for(p),
            cuts: self.nsplit_for(n),
            nodesize: self.nodesize,
            min_child: self.min_child,
        }
    }
}

/// Ensemble of covariance-splitting trees with its training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: ForestParams,
    trees: Vec<Tree>,
    data: Dataset,
}

impl Forest {
    /// Reassembles a forest from stored parts.
    pub fn from_parts(params: ForestParams, trees: Vec<Tree>, data: Dataset) -> Result<Forest> {
        if trees.len() != params.ntree {
            return Err(Error::InvalidParams(format!(
                "expected {} trees, found {}",
                params.ntree,
                trees.len()
            )));
        }
        let n = data.n() as u32;
        for (b, t) in trees.iter().enumerate() {
            t.validate()
                .map_err(|e| Error::InvalidData(format!("tree {b}: {e}")))?;
            if t.inbag().iter().chain(t.oob()).any(|&r| r >= n) {
                return Err(Error::InvalidData(format!(
                    "tree {b} references unknown rows"
                )));
            }
        }
        Ok(Forest {
            params,
            trees,
            data,
        })
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn ntree(&self) -> usize {
        self.trees.len()
    }

    /// Terminal node of training row `row` in tree `b`.
    pub fn training_terminal(&self, b: usize, row: usize) -> usize {
        let x = self.data.x();
        self.trees[b].route(|c| x.value(row, c))
    }
}

/// Splitting criterion `√(n_L n_R) · d(Σ_L, Σ_R)` computed from centred
/// first and second moments.
pub(crate) struct CovCriterion<'a> {
    y: &'a Matrix,
}

impl<'a> CovCriterion<'a> {
    pub(crate) fn new(y: &'a Matrix) -> Self {
        CovCriterion { y }
    }

    fn q(&self) -> usize {
        self.y.ncols()
    }
}

impl Criterion for CovCriterion<'_> {
    // node mean, used as the centring shift
    type Ctx = Vec<f64>;

    fn width(&self) -> usize {
        let q = self.q();
        q + q * (q + 1) / 2
    }

    fn node_context(&self, rows: &[u32]) -> Option<Vec<f64>> {
        let q = self.q();
        let mut mean = vec![0.0; q];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(self.y.row(r as usize)) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }

    #[inline]
    fn accumulate(&self, mean: &Vec<f64>, row: u32, acc: &mut [f64]) {
        let q = self.q();
        let y = self.y.row(row as usize);
        let (first, second) = acc.split_at_mut(q);
        let mut k = 0;
        for i in 0..q {
            let ci = y[i] - mean[i];
            first[i] += ci;
            for j in i..q {
                second[k] += ci * (y[j] - mean[j]);
                k += 1;
            }
        }
    }

    #[inline]
    fn score(
        &self,
        _: &Vec<f64>,
        left: &[f64],
        n_left: usize,
        right: &[f64],
        n_right: usize,
    ) -> f64 {
        let q = self.q();
        let (nl, nr) = (n_left as f64, n_right as f64);
        let (s1l, s2l) = left.split_at(q);
        let (s1r, s2r) = right.split_at(q);
        let mut dist = 0.0;
        let mut k = 0;
        for i in 0..q {
            for j in i..q {
                let cl = (s2l[k] - s1l[i] * s1l[j] / nl) / (nl - 1.0);
                let cr = (s2r[k] - s1r[i] * s1r[j] / nr) / (nr - 1.0);
                dist += (cl - cr) * (cl - cr);
                k += 1;
            }
        }
        (nl * nr).sqrt() * dist.sqrt()
    }
}

/// Splitting criterion of one candidate partition, computed directly from
/// sample covariances.
pub fn split_value(left_rows: &[usize], right_rows: &[usize], y: &Matrix) -> Result<f64> {
    let l = sample_cov(left_rows, y)?;
    let r = sample_cov(right_rows, y)?;
    let n = (left_rows.len() * right_rows.len()) as f64;
    Ok(n.sqrt() * tri_distance(&l, &r)?)
}

/// Best root-node split over `vars` for the given rows.
pub fn best_split(
    data: &Dataset,
    rows: &[usize],
    vars: &[usize],
    params: &ForestParams,
    rng: &mut seeds::Rng,
) -> Option<(SplitSpec, f64)> {
    let crit = CovCriterion::new(data.y());
    let rows: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    let settings = params.grow_settings(data.n(), data.p());
    if rows.len() < 2 * settings.min_child {
        return None;
    }
    let ctx = crit.node_context(&rows)?;
    tree::best_split(
        data.x(),
        &crit,
        &ctx,
        &rows,
        vars,
        &settings,
        rng,
        &mut tree::Scratch::default(),
    )
}

/// Grows one tree on `inbag` (OOB rows are the complement within `0..n`).
pub fn grow_tree(
    data: &Dataset,
    params: &ForestParams,
    inbag: &[usize],
    rng: &mut seeds::Rng,
) -> Tree {
    let n = data.n();
    let mut in_set = vec![false; n];
    for &r in inbag {
        in_set[r] = true;
    }
    let oob = (0..n as u32).filter(|&r| !in_set[r as usize]).collect();
    let crit = CovCriterion::new(data.y());
    let settings = params.grow_settings(n, data.p());
    tree::grow(
        data.x(),
        &crit,
        inbag.iter().map(|&r| r as u32).collect(),
        oob,
        &settings,
        rng,
    )
}

/// Draws the in-bag subsample of tree `b` without replacement.
pub(crate) fn draw_inbag(n: usize, size: usize, rng: &mut seeds::Rng) -> Vec<usize> {
    let mut v = index::sample(rng, n, size).into_vec();
    v.sort_unstable();
    v
}

/// Grows `ntree` trees, each from its own subsample and random stream
/// derived from `(seed, tree index)`.
pub fn grow_forest(data: &Dataset, params: &ForestParams) -> Result<Forest> {
    params.validate(data.n(), data.p())?;
    let n = data.n();
    let size = params.sample_size(n);
    let trees = (0..params.ntree)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeds::derived_rng(params.seed, stream::TREE, b as u64);
            let inbag = draw_inbag(n, size, &mut rng);
            grow_tree(data, params, &inbag, &mut rng)
        })
        .collect();
    Ok(Forest {
        params: params.resolved(n, data.p()),
        trees,
        data: data.clone(),
    })
}
