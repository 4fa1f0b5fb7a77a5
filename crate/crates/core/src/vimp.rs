//! Variable importance by the fit-the-fit approach.
//!
//! A multivariate regression forest is refitted on the upper-triangle
//! entries of the estimated covariance matrices, and covariates are scored
//! by OOB permutation importance in that forest.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimator::{oob_estimates, resolve_nodesize, CovEstimates, NodesizeChoice};
use crate::forest::{draw_inbag, grow_forest, Forest, ForestParams};
use crate::linalg::{Cholesky, SymMat};
use crate::seeds::{self, stream};
use crate::tree::{self, Criterion, Tree};

/// Leaf size of the auxiliary regression forest.
pub const FIT_THE_FIT_NODESIZE: usize = 5;

/// Maximizes the decrease of the within-node Mahalanobis sum of squares,
/// `n_L n_R / n · (z̄_L − z̄_R)ᵀ (S + λI)⁻¹ (z̄_L − z̄_R)`, where `S` is the
/// parent-node covariance of the standardized responses and
/// `λ = 1e-6 · tr(S) / d`.
pub(crate) struct MahalanobisCriterion<'a> {
    z: &'a Matrix,
}

impl Criterion for MahalanobisCriterion<'_> {
    type Ctx = Cholesky;

    fn width(&self) -> usize {
        self.z.ncols()
    }

    fn node_context(&self, rows: &[u32]) -> Option<Cholesky> {
        let d = self.z.ncols();
        let n = rows.len() as f64;
        if rows.len() < 2 {
            return None;
        }
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(self.z.row(r as usize)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = SymMat::zeros(d);
        let mut c = vec![0.0; d];
        let mut tri = cov.upper().to_vec();
        for &r in rows {
            for ((ci, v), m) in c.iter_mut().zip(self.z.row(r as usize)).zip(&mean) {
                *ci = v - m;
            }
            let mut k = 0;
            for i in 0..d {
                for j in i..d {
                    tri[k] += c[i] * c[j];
                    k += 1;
                }
            }
        }
        tri.iter_mut().for_each(|v| *v /= n - 1.0);
        cov = SymMat::from_upper(d, tri).ok()?;
        let trace = cov.trace();
        if !(trace > 0.0) {
            return None;
        }
        Cholesky::with_ridge(&cov, 1e-6 * trace / d as f64)
    }

    #[inline]
    fn accumulate(&self, _: &Cholesky, row: u32, acc: &mut [f64]) {
        for (a, v) in acc.iter_mut().zip(self.z.row(row as usize)) {
            *a += v;
        }
    }

    fn score(
        &self,
        chol: &Cholesky,
        left: &[f64],
        n_left: usize,
        right: &[f64],
        n_right: usize,
    ) -> f64 {
        let (nl, nr) = (n_left as f64, n_right as f64);
        let mut diff: Vec<f64> = left
            .iter()
            .zip(right)
            .map(|(l, r)| l / nl - r / nr)
            .collect();
        nl * nr / (nl + nr) * chol.mahalanobis_sq(&mut diff)
    }
}

/// Multivariate-response regression forest on standardized responses.
#[derive(Clone, Debug)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    x: Covariates,
    z: Matrix,
    // per tree, per node: mean standardized response of terminal nodes
    leaf_means: Vec<Vec<Vec<f64>>>,
    degenerate: bool,
    seed: u64,
}

fn standardize(raw: &Matrix) -> (Matrix, bool) {
    let (n, d) = (raw.nrows(), raw.ncols());
    let mut z = Matrix::zeros(n, d);
    let mut any_varying = false;
    for j in 0..d {
        let mean = (0..n).map(|i| raw.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (raw.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let varying = sd > 1e-12 * mean.abs().max(1.0);
        any_varying |= varying;
        for i in 0..n {
            z.row_mut(i)[j] = if varying {
                (raw.get(i, j) - mean) / sd
            } else {
                0.0
            };
        }
    }
    (z, !any_varying)
}

fn leaf_means(tree: &Tree, z: &Matrix) -> Vec<Vec<f64>> {
    tree.nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            if !node.is_terminal() {
                return Vec::new();
            }
            let rows = tree.node_rows(id);
            let mut m = vec![0.0; z.ncols()];
            for &r in rows {
                for (a, v) in m.iter_mut().zip(z.row(r as usize)) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|a| *a /= rows.len() as f64);
            m
        })
        .collect()
}

impl RegressionForest {
    /// Grows the forest on `x` against the response matrix `responses`.
    pub fn fit(x: &Covariates, responses: &Matrix, params: &ForestParams) -> Result<Self> {
        let n = x.n();
        if responses.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: responses.nrows(),
            });
        }
        params.validate(n, x.p())?;
        let (z, degenerate) = standardize(responses);
        let seed = seeds::derive(params.seed, stream::VIMP, 0);
        let settings = params.grow_settings(n, x.p());
        let size = params.sample_size(n);
        let crit = MahalanobisCriterion { z: &z };
        let trees: Vec<Tree> = (0..params.ntree)
            .into_par_iter()
            .map(|b| {
                let mut rng = seeds::derived_rng(seed, stream::TREE, b as u64);
                let inbag = draw_inbag(n, size, &mut rng);
                let mut in_set = vec![false; n];
                inbag.iter().for_each(|&r| in_set[r] = true);
                let oob = (0..n as u32).filter(|&r| !in_set[r as usize]).collect();
                tree::grow(
                    x,
                    &crit,
                    inbag.iter().map(|&r| r as u32).collect(),
                    oob,
                    &settings,
                    &mut rng,
                )
            })
            .collect();
        let leaf_means = trees.iter().map(|t| leaf_means(t, &z)).collect();
        Ok(RegressionForest {
            trees,
            x: x.clone(),
            z,
            leaf_means,
            degenerate,
            seed,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn standardized_responses(&self) -> &Matrix {
        &self.z
    }

    /// All response coordinates were constant.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn sq_error(&self, b: usize, leaf: usize, row: usize) -> f64 {
        self.leaf_means[b][leaf]
            .iter()
            .zip(self.z.row(row))
            .map(|(p, v)| (p - v) * (p - v))
            .sum::<f64>()
            / self.z.ncols() as f64
    }

    /// OOB error of tree `b` before and after permuting covariate `var`
    /// among its OOB rows. `visit` sees every row whose error is evaluated.
    pub(crate) fn tree_errors<F: FnMut(u32)>(
        &self,
        b: usize,
        var: usize,
        rng: &mut seeds::Rng,
        mut visit: F,
    ) -> Option<(f64, f64)> {
        let tree = &self.trees[b];
        let oob = tree.oob();
        if oob.is_empty() {
            return None;
        }
        let x = &self.x;
        let mut shuffled: Vec<f64> = oob.iter().map(|&r| x.value(r as usize, var)).collect();
        shuffled.shuffle(rng);
        let (mut base, mut perm) = (0.0, 0.0);
        for (k, &r) in oob.iter().enumerate() {
            visit(r);
            let row = r as usize;
            let leaf = tree.route(|c| x.value(row, c));
            base += self.sq_error(b, leaf, row);
            let leaf_p = tree.route(|c| {
                if c == var {
                    shuffled[k]
                } else {
                    x.value(row, c)
                }
            });
            perm += self.sq_error(b, leaf_p, row);
        }
        let m = oob.len() as f64;
        Some((base / m, perm / m))
    }

    /// OOB R² of the ensemble averaged over response coordinates.
    pub fn oob_r2(&self) -> f64 {
        let (n, d) = (self.z.nrows(), self.z.ncols());
        let mut pred = vec![0.0; n * d];
        let mut count = vec![0usize; n];
        for (b, tree) in self.trees.iter().enumerate() {
            for &r in tree.oob() {
                let row = r as usize;
                let leaf = tree.route(|c| self.x.value(row, c));
                for (p, m) in pred[row * d..(row + 1) * d]
                    .iter_mut()
                    .zip(&self.leaf_means[b][leaf])
                {
                    *p += m;
                }
                count[row] += 1;
            }
        }
        let (mut sse, mut sst) = (0.0, 0.0);
        for i in (0..n).filter(|&i| count[i] > 0) {
            for j in 0..d {
                let p = pred[i * d + j] / count[i] as f64;
                let v = self.z.get(i, j);
                sse += (v - p) * (v - p);
                sst += v * v;
            }
        }
        if sst == 0.0 {
            return 0.0;
        }
        1.0 - sse / sst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VimpResult {
    pub names: Vec<String>,
    /// Mean increase in per-tree OOB error after permuting the covariate.
    pub raw: Vec<f64>,
    /// `raw / max(raw)` when the maximum is positive.
    pub normalized: Vec<f64>,
    /// 1 is the most important covariate; ties keep column order.
    pub ranks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl VimpResult {
    pub fn from_raw(names: Vec<String>, raw: Vec<f64>, warning: Option<String>) -> Self {
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let normalized = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            raw.clone()
        };
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
        let mut ranks = vec![0; raw.len()];
        for (pos, &c) in order.iter().enumerate() {
            ranks[c] = pos + 1;
        }
        VimpResult {
            names,
            raw,
            normalized,
            ranks,
            warning,
        }
    }
}

/// Regression forest on the upper-triangle entries of `estimates`.
pub fn fit_the_fit(
    data: &Dataset,
    estimates: &CovEstimates,
    params: &ForestParams,
) -> Result<RegressionForest> {
    if estimates.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: estimates.len(),
        });
    }
    let rows = estimates
        .estimates
        .iter()
        .map(|e| e.upper().to_vec())
        .collect();
    let responses = Matrix::from_rows(rows)?;
    let aux = ForestParams {
        mtry: None,
        nsplit: Default::default(),
        nodesize: FIT_THE_FIT_NODESIZE,
        ..params.clone()
    };
    RegressionForest::fit(data.x(), &responses, &aux)
}

/// OOB permutation importance of every covariate.
pub fn permutation_vimp(forest: &RegressionForest) -> VimpResult {
    let p = forest.x.p();
    let names = forest.x.names();
    if forest.degenerate {
        return VimpResult::from_raw(
            names,
            vec![0.0; p],
            Some("estimated covariance entries are constant; importance is zero".into()),
        );
    }
    let per_tree: Vec<Vec<Option<f64>>> = (0..forest.trees.len())
        .into_par_iter()
        .map(|b| {
            let tree = &forest.trees[b];
            (0..p)
                .map(|c| {
                    if tree.oob().is_empty() {
                        return None;
                    }
                    if !tree.uses_var(c) {
                        return Some(0.0);
                    }
                    let mut rng =
                        seeds::derived_rng(forest.seed, stream::PERMUTATION, (b * p + c) as u64);
                    forest
                        .tree_errors(b, c, &mut rng, |_| {})
                        .map(|(base, perm)| perm - base)
                })
                .collect()
        })
        .collect();
    let raw = (0..p)
        .map(|c| {
            let vals: Vec<f64> = per_tree.iter().filter_map(|t| t[c]).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    VimpResult::from_raw(names, raw, None)
}

/// Importance from an already grown covariance forest.
pub fn vimp_from_forest(forest: &Forest) -> Result<VimpResult> {
    let est = oob_estimates(forest)?;
    let aux = fit_the_fit(forest.data(), &est, forest.params())?;
    Ok(permutation_vimp(&aux))
}

/// Estimates OOB covariances, refits on them and scores covariates.
pub fn vimp_pipeline(
    data: &Dataset,
    params: &ForestParams,
    nodesize: NodesizeChoice,
) -> Result<VimpResult> {
    let (fit_params, _) = resolve_nodesize(data, params, nodesize)?;
    let forest = grow_forest(data, &fit_params)?;
    vimp_from_forest(&forest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_data(n: usize, seed: u64) -> (Covariates, Matrix) {
        let mut rng = seeds::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let resp: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![3.0 * r[0] + 0.05 * rng.random::<f64>()])
            .collect();
        (
            Covariates::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows).unwrap(),
            Matrix::from_rows(resp).unwrap(),
        )
    }

    #[test]
    fn ranks_and_normalization() {
        let v = VimpResult::from_raw(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.5, 2.0, 0.5],
            None,
        );
        assert_eq!(v.normalized, vec![0.25, 1.0, 0.25]);
        assert_eq!(v.ranks, vec![2, 1, 3]);
        let scaled = VimpResult::from_raw(v.names.clone(), vec![5.0, 20.0, 5.0], None);
        assert_eq!(scaled.ranks, v.ranks);
        let zero = VimpResult::from_raw(vec!["a".into()], vec![0.0], None);
        assert_eq!(zero.normalized, vec![0.0]);
    }

    #[test]
    fn univariate_response_recovers_signal() {
        let (x, y) = linear_data(200, 1);
        let params = ForestParams::default().with_ntree(50).with_nodesize(5);
        let f = RegressionForest::fit(&x, &y, &params).unwrap();
        assert!(f.oob_r2() > 0.8);
        let v = permutation_vimp(&f);
        assert_eq!(v.ranks[0], 1);
    }

    #[test]
    fn univariate_score_is_variance_reduction() {
        let z = Matrix::from_rows((0..6).map(|i| vec![(i * i) as f64 / 7.0]).collect()).unwrap();
        let crit = MahalanobisCriterion { z: &z };
        let rows: Vec<u32> = (0..6).collect();
        let ctx = crit.node_context(&rows).unwrap();
        let (mut l, mut r) = (vec![0.0], vec![0.0]);
        (0..2).for_each(|i| crit.accumulate(&ctx, i, &mut l));
        (2..6).for_each(|i| crit.accumulate(&ctx, i, &mut r));
        let score = crit.score(&ctx, &l, 2, &r, 4);
        let vals: Vec<f64> = (0..6).map(|i| z.get(i, 0)).collect();
        let ss = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let decrease = ss(&vals) - ss(&vals[..2]) - ss(&vals[2..]);
        let var = ss(&vals) / 5.0;
        let expected = decrease / (var * (1.0 + 1e-6));
        assert!((score - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn constant_estimates_give_single_node_trees() {
        let (x, _) = linear_data(40, 2);
        let y =
            Matrix::from_rows((0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect()).unwrap();
        let d = Dataset::with_default_names(x, y).unwrap();
        let est = CovEstimates::constant(&SymMat::identity(2), 40);
        let f = fit_the_fit(&d, &est, &ForestParams::default().with_ntree(10)).unwrap();
        assert!(f.is_degenerate());
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
        let v = permutation_vimp(&f);
        assert_eq!(v.raw, vec![0.0; 3]);
        assert!(v.warning.is_some());
    }

    #[test]
    fn unused_covariate_has_exact_zero_importance() {
        let (x, y) = linear_data(100, 3);
        // column c is constant, so it can never be chosen for a split
        let mut rows: Vec<Vec<f64>> = (0..100).map(|i| x.row(i)).collect();
        rows.iter_mut().for_each(|r| r[2] = 1.0);
        let x = Covariates::from_rows(x.names(), &rows).unwrap();
        let f = RegressionForest::fit(&x, &y, &ForestParams::default().with_ntree(30)).unwrap();
        assert!(f.trees().iter().all(|t| !t.uses_var(2)));
        assert_eq!(permutation_vimp(&f).raw[2], 0.0);
    }

    #[test]
    fn only_oob_rows_are_scored() {
        let (x, y) = linear_data(80, 4);
        let f = RegressionForest::fit(&x, &y, &ForestParams::default().with_ntree(8)).unwrap();
        for b in 0..8 {
            let mut seen = Vec::new();
            f.tree_errors(b, 0, &mut seeds::rng(1), |r| seen.push(r));
            assert_eq!(seen, f.trees()[b].oob());
        }
    }

    #[test]
    fn vimp_is_deterministic() {
        let (x, y) = linear_data(60, 5);
        let params = ForestParams::default().with_ntree(20).with_seed(3);
        let a = permutation_vimp(&RegressionForest::fit(&x, &y, &params).unwrap());
        let b = permutation_vimp(&RegressionForest::fit(&x, &y, &params).unwrap());
        assert_eq!(a, b);
    }
}
