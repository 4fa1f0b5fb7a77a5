//! Permutation tests for the effect of covariates on conditional covariance
//! estimates.
//!
//! The p-value is the fraction of permuted statistics strictly greater than
//! the observed one. Without the usual add-one correction it can be 0, and
//! ties count against rejection.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{oob_estimates, resolve_nodesize, CovEstimates, NodesizeChoice};
use crate::forest::{grow_forest, ForestParams};
use crate::linalg::{sample_cov, tri_distance, SymMat};
use crate::seeds::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Global,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub perm_stats: Vec<f64>,
    pub p_value: f64,
    pub r_perms: usize,
    pub tuned_nodesize_full: usize,
    /// Absent for the global test, which has no control forest.
    pub tuned_nodesize_control: Option<usize>,
    pub control_columns: Vec<String>,
    pub seed: u64,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Mean distance between aligned estimates.
pub fn test_statistic(a: &CovEstimates, b: &CovEstimates) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (x, y) in a.estimates.iter().zip(&b.estimates) {
        sum += tri_distance(x, y)?;
    }
    Ok(sum / a.len() as f64)
}

fn statistic_to_constant(est: &CovEstimates, sigma: &SymMat) -> Result<f64> {
    let mut sum = 0.0;
    for e in &est.estimates {
        sum += tri_distance(e, sigma)?;
    }
    Ok(sum / est.len() as f64)
}

/// Fraction of permuted statistics strictly greater than `statistic`.
pub fn permutation_p_value(statistic: f64, perm_stats: &[f64]) -> f64 {
    let above = perm_stats.iter().filter(|&&t| t > statistic).count();
    above as f64 / perm_stats.len() as f64
}

fn replicate_permutation(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeds::derived_rng(seed, stream::PERMUTATION, r as u64));
    perm
}

fn fit_oob(data: &Dataset, params: &ForestParams) -> Result<CovEstimates> {
    oob_estimates(&grow_forest(data, params)?)
}

/// Tests `H0: Σ_X = Σ_root` by permuting the rows of `X`.
///
/// The nodesize is resolved once on the unpermuted data and reused for
/// every permutation refit.
pub fn global_test(
    data: &Dataset,
    params: &ForestParams,
    nodesize: NodesizeChoice,
    r_perms: usize,
) -> Result<TestResult> {
    if r_perms == 0 {
        return Err(Error::InvalidParams(
            "at least one permutation is required".into(),
        ));
    }
    params.validate(data.n(), data.p())?;
    let all: Vec<usize> = (0..data.n()).collect();
    let root = sample_cov(&all, data.y())?;
    let (fit_params, _) = resolve_nodesize(data, params, nodesize)?;

    let statistic = statistic_to_constant(&fit_oob(data, &fit_params)?, &root)?;
    let perm_stats = (0..r_perms)
        .into_par_iter()
        .map(|r| {
            let perm = replicate_permutation(data.n(), params.seed, r);
            let permuted = data.permute_x(&perm);
            let p =
                fit_params
                    .clone()
                    .with_seed(seeds::derive(params.seed, stream::REFIT, r as u64));
            statistic_to_constant(&fit_oob(&permuted, &p)?, &root)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TestResult {
        kind: TestKind::Global,
        statistic,
        p_value: permutation_p_value(statistic, &perm_stats),
        perm_stats,
        r_perms,
        tuned_nodesize_full: fit_params.nodesize,
        tuned_nodesize_control: None,
        control_columns: Vec::new(),
        seed: params.seed,
    })
}

fn control_params(params: &ForestParams, p_control: usize) -> ForestParams {
    let mut p = params.clone();
    p.mtry = params.mtry.map(|m| m.min(p_control));
    p
}

/// Tests `H0: Σ_X = Σ_{X^c}` for the covariates outside `control_columns`.
///
/// Each replicate permutes the rows of `X` once and fits both the full and
/// the control forest on that permuted table.
pub fn partial_test(
    data: &Dataset,
    control_columns: &[usize],
    params: &ForestParams,
    nodesize_full: NodesizeChoice,
    nodesize_control: NodesizeChoice,
    r_perms: usize,
) -> Result<TestResult> {
    if r_perms == 0 {
        return Err(Error::InvalidParams(
            "at least one permutation is required".into(),
        ));
    }
    let p = data.p();
    let mut control: Vec<usize> = control_columns.to_vec();
    control.sort_unstable();
    control.dedup();
    if control.is_empty() || control.len() >= p || control.iter().any(|&c| c >= p) {
        return Err(Error::InvalidControlSet(format!(
            "control set must be a non-empty proper subset of the {p} covariates"
        )));
    }
    params.validate(data.n(), p)?;
    let control_data = data.with_columns(&control);
    let (full_params, _) = resolve_nodesize(data, params, nodesize_full)?;
    let base_control = control_params(params, control.len());
    let (ctrl_params, _) = resolve_nodesize(&control_data, &base_control, nodesize_control)?;

    let statistic = test_statistic(
        &fit_oob(data, &full_params)?,
        &fit_oob(&control_data, &ctrl_params)?,
    )?;

    let perm_stats = (0..r_perms)
        .into_par_iter()
        .map(|r| {
            let perm = replicate_permutation(data.n(), params.seed, r);
            let permuted = data.permute_x(&perm);
            let seed = seeds::derive(params.seed, stream::REFIT, r as u64);
            let full = fit_oob(&permuted, &full_params.clone().with_seed(seed))?;
            let ctrl = fit_oob(
                &permuted.with_columns(&control),
                &ctrl_params.clone().with_seed(seed),
            )?;
            test_statistic(&full, &ctrl)
        })
        .collect::<Result<Vec<_>>>()?;

    let names = data.x().names();
    Ok(TestResult {
        kind: TestKind::Partial,
        statistic,
        p_value: permutation_p_value(statistic, &perm_stats),
        perm_stats,
        r_perms,
        tuned_nodesize_full: full_params.nodesize,
        tuned_nodesize_control: Some(ctrl_params.nodesize),
        control_columns: control.iter().map(|&c| names[c].clone()).collect(),
        seed: params.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Matrix};

    fn est(ms: Vec<SymMat>) -> CovEstimates {
        let n = ms.len();
        CovEstimates {
            estimates: ms,
            fallback: vec![false; n],
            low_support: vec![false; n],
            bop_distinct: vec![0; n],
        }
    }

    #[test]
    fn statistic_examples() {
        let i2 = SymMat::identity(2);
        let b = SymMat::from_upper(2, vec![2.0, 1.0, 2.0]).unwrap();
        let a = est(vec![i2.clone(), i2.clone()]);
        assert_eq!(test_statistic(&a, &a).unwrap(), 0.0);
        let c = est(vec![b, i2]);
        let t = test_statistic(&a, &c).unwrap();
        assert!((t - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(test_statistic(&a, &est(vec![SymMat::identity(2)])).is_err());
    }

    #[test]
    fn p_value_uses_strict_inequality() {
        assert_eq!(permutation_p_value(5.0, &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(permutation_p_value(0.5, &[1.0, 2.0, 3.0, 4.0]), 1.0);
        assert_eq!(permutation_p_value(2.0, &[1.0, 2.0, 3.0, 4.0]), 0.5);
        assert_eq!(permutation_p_value(1.0, &[0.5]), 0.0);
    }

    fn small_data() -> Dataset {
        use rand::Rng;
        let mut rng = seeds::rng(4);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>(), rng.random(), rng.random()])
            .collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let e: f64 = rng.random::<f64>() - 0.5;
                vec![e * (1.0 + 4.0 * r[0]), e + rng.random::<f64>()]
            })
            .collect();
        Dataset::with_default_names(
            Covariates::from_rows(vec!["a".into(), "b".into(), "c".into()], &x).unwrap(),
            Matrix::from_rows(y).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn control_set_must_be_proper() {
        let d = small_data();
        let params = ForestParams::default().with_ntree(5);
        let fixed = NodesizeChoice::Fixed(5);
        for bad in [vec![], vec![0, 1, 2], vec![7]] {
            assert!(matches!(
                partial_test(&d, &bad, &params, fixed, fixed, 3),
                Err(Error::InvalidControlSet(_))
            ));
        }
    }

    #[test]
    fn tests_are_deterministic_and_p_values_on_grid() {
        let d = small_data();
        let params = ForestParams::default().with_ntree(10).with_seed(9);
        let fixed = NodesizeChoice::Fixed(5);
        let a = global_test(&d, &params, fixed, 7).unwrap();
        let b = global_test(&d, &params, fixed, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.perm_stats.len(), 7);
        assert!(((a.p_value * 7.0).round() - a.p_value * 7.0).abs() < 1e-12);

        let c = partial_test(&d, &[1, 2], &params, fixed, fixed, 4).unwrap();
        let e = partial_test(&d, &[1, 2], &params, fixed, fixed, 4).unwrap();
        assert_eq!(c, e);
        assert_eq!(c.control_columns, vec!["b".to_string(), "c".to_string()]);
        assert_eq!(c.p_value, permutation_p_value(c.statistic, &c.perm_stats));
    }

    #[test]
    fn permutations_preserve_row_multiset() {
        let d = small_data();
        for r in 0..5 {
            let perm = replicate_permutation(d.n(), 3, r);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..d.n()).collect::<Vec<_>>());
            let px = d.permute_x(&perm);
            let mut a: Vec<Vec<u64>> = (0..d.n())
                .map(|i| px.x().row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            let mut b: Vec<Vec<u64>> = (0..d.n())
                .map(|i| d.x().row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            assert_eq!(px.y(), d.y());
        }
    }
}
