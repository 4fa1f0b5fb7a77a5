//! Out-of-bag neighbourhoods and conditional covariance estimates, plus
//! nodesize tuning.
//!
//! The neighbourhood of an observation is a multiset: every tree in which
//! the observation is eligible contributes the OOB rows sharing its terminal
//! node, and rows that co-occur in several trees carry that many copies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::forest::{grow_forest, Forest, ForestParams};
use crate::linalg::{mad_distance, multiset_cov, sample_cov, SymMat};

/// Bag of observations for prediction: training row → multiplicity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bop {
    counts: BTreeMap<usize, u32>,
}

impl Bop {
    pub fn add(&mut self, row: usize, times: u32) {
        *self.counts.entry(row).or_insert(0) += times;
    }

    pub fn counts(&self) -> &BTreeMap<usize, u32> {
        &self.counts
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.counts.contains_key(&row)
    }

    /// `(row, multiplicity)` pairs in row order.
    pub fn members(&self) -> Vec<(usize, u32)> {
        self.counts.iter().map(|(&r, &c)| (r, c)).collect()
    }

    /// Rows repeated by multiplicity.
    pub fn expand(&self) -> Vec<usize> {
        self.counts
            .iter()
            .flat_map(|(&r, &c)| std::iter::repeat_n(r, c as usize))
            .collect()
    }
}

/// Covariance estimates aligned with a list of target rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovEstimates {
    pub estimates: Vec<SymMat>,
    /// Neighbourhood had fewer than 2 distinct rows; the estimate is the
    /// whole-sample covariance.
    pub fallback: Vec<bool>,
    /// Neighbourhood had at most `q` distinct rows, so the estimate is
    /// singular.
    pub low_support: Vec<bool>,
    pub bop_distinct: Vec<usize>,
}

impl CovEstimates {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Same estimate for every row, e.g. a no-covariate baseline.
    pub fn constant(sigma: &SymMat, n: usize) -> CovEstimates {
        CovEstimates {
            estimates: vec![sigma.clone(); n],
            fallback: vec![false; n],
            low_support: vec![false; n],
            bop_distinct: vec![0; n],
        }
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

/// OOB rows grouped by terminal node, per tree, for fast neighbourhood
/// assembly.
pub struct OobNeighbours<'a> {
    forest: &'a Forest,
    // per tree: CSR offsets by node id into `members`
    offsets: Vec<Vec<u32>>,
    members: Vec<Vec<u32>>,
    // per training row: (tree, terminal node) for trees where it is OOB
    oob_leaves: Vec<Vec<(u32, u32)>>,
    root_cov: SymMat,
}

impl<'a> OobNeighbours<'a> {
    pub fn new(forest: &'a Forest) -> Result<Self> {
        let n = forest.data().n();
        let per_tree: Vec<(Vec<u32>, Vec<u32>, Vec<u32>)> = (0..forest.ntree())
            .into_par_iter()
            .map(|b| {
                let tree = &forest.trees()[b];
                let leaves: Vec<u32> = tree
                    .oob()
                    .iter()
                    .map(|&r| forest.training_terminal(b, r as usize) as u32)
                    .collect();
                let n_nodes = tree.nodes().len();
                let mut offsets = vec![0u32; n_nodes + 1];
                for &l in &leaves {
                    offsets[l as usize + 1] += 1;
                }
                for i in 0..n_nodes {
                    offsets[i + 1] += offsets[i];
                }
                let mut fill = offsets.clone();
                let mut members = vec![0u32; leaves.len()];
                for (&r, &l) in tree.oob().iter().zip(&leaves) {
                    members[fill[l as usize] as usize] = r;
                    fill[l as usize] += 1;
                }
                (offsets, members, leaves)
            })
            .collect();

        let mut oob_leaves = vec![Vec::new(); n];
        let mut offsets = Vec::with_capacity(per_tree.len());
        let mut members = Vec::with_capacity(per_tree.len());
        for (b, (off, mem, leaves)) in per_tree.into_iter().enumerate() {
            for (&r, &l) in forest.trees()[b].oob().iter().zip(&leaves) {
                oob_leaves[r as usize].push((b as u32, l));
            }
            offsets.push(off);
            members.push(mem);
        }
        let all: Vec<usize> = (0..n).collect();
        let root_cov = sample_cov(&all, forest.data().y())?;
        Ok(OobNeighbours {
            forest,
            offsets,
            members,
            oob_leaves,
            root_cov,
        })
    }

    /// Whole-training-sample covariance.
    pub fn root_cov(&self) -> &SymMat {
        &self.root_cov
    }

    fn leaf_members(&self, b: usize, leaf: usize) -> &[u32] {
        let off = &self.offsets[b];
        &self.members[b][off[leaf] as usize..off[leaf + 1] as usize]
    }

    fn collect_training(&self, row: usize, counts: &mut [u32], touched: &mut Vec<u32>) {
        for &(b, leaf) in &self.oob_leaves[row] {
            for &m in self.leaf_members(b as usize, leaf as usize) {
                if m as usize != row {
                    if counts[m as usize] == 0 {
                        touched.push(m);
                    }
                    counts[m as usize] += 1;
                }
            }
        }
    }

    fn collect_new(&self, x_row: &[f64], counts: &mut [u32], touched: &mut Vec<u32>) {
        for (b, tree) in self.forest.trees().iter().enumerate() {
            let leaf = tree.terminal_node(x_row);
            for &m in self.leaf_members(b, leaf) {
                if counts[m as usize] == 0 {
                    touched.push(m);
                }
                counts[m as usize] += 1;
            }
        }
    }

    /// Neighbourhood of training row `row`, from the trees where it is OOB.
    pub fn bop_training(&self, row: usize) -> Bop {
        let mut counts = vec![0u32; self.forest.data().n()];
        let mut touched = Vec::new();
        self.collect_training(row, &mut counts, &mut touched);
        to_bop(&counts, &touched)
    }

    /// Neighbourhood of a new observation, from every tree.
    pub fn bop_new(&self, x_row: &[f64]) -> Bop {
        let mut counts = vec![0u32; self.forest.data().n()];
        let mut touched = Vec::new();
        self.collect_new(x_row, &mut counts, &mut touched);
        to_bop(&counts, &touched)
    }

    /// Estimate from a neighbourhood, falling back to the root covariance
    /// when it has fewer than 2 distinct rows.
    pub fn estimate_from(&self, bop: &Bop) -> (SymMat, bool, bool) {
        self.estimate_members(&bop.members())
    }

    fn estimate_members(&self, members: &[(usize, u32)]) -> (SymMat, bool, bool) {
        let q = self.forest.data().q();
        if members.len() < 2 {
            return (self.root_cov.clone(), true, true);
        }
        let est =
            multiset_cov(members, self.forest.data().y()).expect("at least two distinct rows");
        (est, false, members.len() <= q)
    }

    fn estimate_rows<F>(&self, count: usize, collect: F) -> CovEstimates
    where
        F: Fn(usize, &mut [u32], &mut Vec<u32>) + Sync,
    {
        let n = self.forest.data().n();
        let results: Vec<(SymMat, bool, bool, usize)> = (0..count)
            .into_par_iter()
            .map_init(
                || (vec![0u32; n], Vec::new()),
                |(counts, touched), i| {
                    touched.clear();
                    collect(i, counts, touched);
                    touched.sort_unstable();
                    let members: Vec<(usize, u32)> = touched
                        .iter()
                        .map(|&r| (r as usize, counts[r as usize]))
                        .collect();
                    for &r in touched.iter() {
                        counts[r as usize] = 0;
                    }
                    let (est, fb, low) = self.estimate_members(&members);
                    (est, fb, low, members.len())
                },
            )
            .collect();
        let mut out = CovEstimates {
            estimates: Vec::with_capacity(count),
            fallback: Vec::with_capacity(count),
            low_support: Vec::with_capacity(count),
            bop_distinct: Vec::with_capacity(count),
        };
        for (e, f, l, d) in results {
            out.estimates.push(e);
            out.fallback.push(f);
            out.low_support.push(l);
            out.bop_distinct.push(d);
        }
        out
    }

    /// OOB estimates for every training row.
    pub fn oob_estimates(&self) -> CovEstimates {
        self.estimate_rows(self.forest.data().n(), |i, c, t| {
            self.collect_training(i, c, t)
        })
    }

    /// Estimates for new observations.
    pub fn estimate_new(&self, x: &Covariates) -> Result<CovEstimates> {
        check_schema(self.forest, x)?;
        Ok(self.estimate_rows(x.n(), |i, c, t| {
            let row = x.row(i);
            self.collect_new(&row, c, t)
        }))
    }
}

fn to_bop(counts: &[u32], touched: &[u32]) -> Bop {
    let mut bop = Bop::default();
    for &r in touched {
        bop.add(r as usize, counts[r as usize]);
    }
    bop
}

fn check_schema(forest: &Forest, x: &Covariates) -> Result<()> {
    let train = forest.data().x();
    if x.p() != train.p() {
        return Err(Error::DimensionMismatch {
            expected: train.p(),
            found: x.p(),
        });
    }
    if x.n() > 0 && !train.same_schema(x) {
        return Err(Error::InvalidData(
            "covariate schema differs from the training schema".into(),
        ));
    }
    Ok(())
}

/// Neighbourhood of one observation. With `training_index`, only trees in
/// which that row is OOB contribute and the row itself is excluded.
pub fn bop_for(forest: &Forest, x_row: &[f64], training_index: Option<usize>) -> Result<Bop> {
    let nb = OobNeighbours::new(forest)?;
    Ok(match training_index {
        Some(i) => nb.bop_training(i),
        None => nb.bop_new(x_row),
    })
}

/// One row to estimate: a training row (OOB branch) or a new observation.
#[derive(Clone, Debug)]
pub enum Target<'a> {
    Training(usize),
    New(&'a [f64]),
}

pub fn estimate_cov(forest: &Forest, targets: &[Target<'_>]) -> Result<CovEstimates> {
    let nb = OobNeighbours::new(forest)?;
    let n = forest.data().n();
    Ok(nb.estimate_rows(targets.len(), |i, c, t| match targets[i] {
        Target::Training(r) => {
            assert!(r < n, "training index out of range");
            nb.collect_training(r, c, t)
        }
        Target::New(row) => nb.collect_new(row, c, t),
    }))
}

/// OOB estimates for all training rows.
pub fn oob_estimates(forest: &Forest) -> Result<CovEstimates> {
    Ok(OobNeighbours::new(forest)?.oob_estimates())
}

/// Estimates for new observations from every tree.
pub fn estimate_new(forest: &Forest, x: &Covariates) -> Result<CovEstimates> {
    OobNeighbours::new(forest)?.estimate_new(x)
}

/// Candidate nodesizes `⌊sampfrac·n·2^{-k}⌋` for `k = 1, 2, …` that exceed
/// `q`, in increasing order.
pub fn nodesize_candidates(n: usize, q: usize, sampfrac: f64) -> Vec<usize> {
    let sampsize = sampfrac * n as f64;
    let mut out = Vec::new();
    let mut k = 1;
    loop {
        let s = (sampsize / 2f64.powi(k) + 1e-9).floor() as usize;
        if s <= q {
            break;
        }
        if out.last() != Some(&s) {
            out.push(s);
        }
        k += 1;
    }
    out.reverse();
    out
}

/// Nodesize used by a pipeline: tuned on the data, or pinned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodesizeChoice {
    Tune,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub nodesize: usize,
    pub candidates: Vec<usize>,
    /// `mad[j]` compares candidates `j` and `j + 1`.
    pub mad: Vec<f64>,
}

/// Index of the smallest value; ties go to the earliest.
fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = j;
        }
    }
    best
}

/// Mean MAD distance between two aligned estimate lists.
pub fn mean_mad(a: &CovEstimates, b: &CovEstimates) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut sum = 0.0;
    for (x, y) in a.estimates.iter().zip(&b.estimates) {
        sum += mad_distance(x, y)?;
    }
    Ok(sum / a.len() as f64)
}

/// Picks the nodesize where OOB estimates at consecutive candidate levels
/// agree best. All candidate forests share `params.seed`.
pub fn tune_nodesize(data: &Dataset, params: &ForestParams) -> Result<TuneResult> {
    let candidates = nodesize_candidates(data.n(), data.q(), params.sampfrac);
    if candidates.len() < 2 {
        return Err(Error::TuningInfeasible(format!(
            "only {} nodesize candidate(s) for n={}, q={}; pin nodesize instead",
            candidates.len(),
            data.n(),
            data.q()
        )));
    }
    let estimates = candidates
        .iter()
        .map(|&s| {
            let forest = grow_forest(data, &params.clone().with_nodesize(s))?;
            oob_estimates(&forest)
        })
        .collect::<Result<Vec<_>>>()?;
    let mad = estimates
        .windows(2)
        .map(|w| mean_mad(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(TuneResult {
        nodesize: candidates[argmin_first(&mad)],
        candidates,
        mad,
    })
}

/// Resolves a nodesize choice into parameters (tuning if requested).
pub fn resolve_nodesize(
    data: &Dataset,
    params: &ForestParams,
    choice: NodesizeChoice,
) -> Result<(ForestParams, Option<TuneResult>)> {
    match choice {
        NodesizeChoice::Fixed(s) => Ok((params.clone().with_nodesize(s), None)),
        NodesizeChoice::Tune => {
            let t = tune_nodesize(data, params)?;
            Ok((params.clone().with_nodesize(t.nodesize), Some(t)))
        }
    }
}
