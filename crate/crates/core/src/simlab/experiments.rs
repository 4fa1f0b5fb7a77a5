use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, Dgp, DgpSpec, LabeledSample};
use super::metrics::{mae_cor, mae_sd};
use crate::data::{Covariates, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimator::{estimate_new, resolve_nodesize, NodesizeChoice};
use crate::forest::{grow_forest, ForestParams};
use crate::inference::{global_test, partial_test};
use crate::linalg::{sample_cov, MvnSampler, SymMat};
use crate::seeds::{self, stream};
use crate::vimp::{vimp_pipeline, VimpResult};

/// One metric for one method in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dgp: u8,
    pub n_train: usize,
    pub rep: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    seeds::derive(seed, stream::REPLICATE, rep as u64)
}

fn metric_rows(
    spec: &DgpSpec,
    rep: usize,
    method: &str,
    est: &[SymMat],
    test: &LabeledSample,
) -> Result<Vec<AccuracyRow>> {
    let row = |metric: &str, value| AccuracyRow {
        dgp: spec.dgp.number(),
        n_train: spec.n_train,
        rep,
        method: method.to_string(),
        metric: metric.to_string(),
        value,
    };
    Ok(vec![
        row("mae_cor", mae_cor(est, &test.truth)?),
        row("mae_sd", mae_sd(est, &test.truth)?),
    ])
}

fn predict_test(
    train: &Dataset,
    test: &Covariates,
    params: &ForestParams,
    nodesize: NodesizeChoice,
) -> Result<Vec<SymMat>> {
    let (fit, _) = resolve_nodesize(train, params, nodesize)?;
    let forest = grow_forest(train, &fit)?;
    Ok(estimate_new(&forest, test)?.estimates)
}

fn root_baseline(train: &Dataset, n_test: usize) -> Result<Vec<SymMat>> {
    let all: Vec<usize> = (0..train.n()).collect();
    Ok(vec![sample_cov(&all, train.y())?; n_test])
}

/// Per replication: draw train and test sets, fit with `nodesize`, and
/// score the forest against the covariate-free sample covariance.
///
/// Rows come out in rep order, `covregrf` before `sample_cov`.
pub fn run_accuracy(
    spec: &DgpSpec,
    params: &ForestParams,
    nodesize: NodesizeChoice,
    reps: usize,
) -> Result<Vec<AccuracyRow>> {
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = rep_seed(spec.seed, rep);
            let rspec = spec.clone().with_seed(s);
            let (train, test) = generate(&rspec)?;
            let train_data = train.dataset()?;
            let p = params.clone().with_seed(s);
            let est = predict_test(&train_data, &test.x, &p, nodesize)?;
            let base = root_baseline(&train_data, test.n())?;
            let mut rows = metric_rows(spec, rep, "covregrf", &est, &test)?;
            rows.extend(metric_rows(spec, rep, "sample_cov", &base, &test)?);
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Accuracy of the tuned nodesize next to every fixed candidate.
///
/// Methods are labelled `tuned` and `nodesize=<s>`.
pub fn run_nodesize_study(
    spec: &DgpSpec,
    params: &ForestParams,
    reps: usize,
) -> Result<Vec<AccuracyRow>> {
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = rep_seed(spec.seed, rep);
            let (train, test) = generate(&spec.clone().with_seed(s))?;
            let train_data = train.dataset()?;
            let p = params.clone().with_seed(s);
            let (tuned, tune) = resolve_nodesize(&train_data, &p, NodesizeChoice::Tune)?;
            let tune = tune.expect("tuning was requested");
            let forest = grow_forest(&train_data, &tuned)?;
            let est = estimate_new(&forest, &test.x)?.estimates;
            let mut rows = metric_rows(spec, rep, "tuned", &est, &test)?;
            for &size in &tune.candidates {
                let est = predict_test(&train_data, &test.x, &p, NodesizeChoice::Fixed(size))?;
                rows.extend(metric_rows(
                    spec,
                    rep,
                    &format!("nodesize={size}"),
                    &est,
                    &test,
                )?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Constant covariance, ten independent covariates.
    #[serde(rename = "g-h0-1")]
    GlobalH0Constant,
    /// Responses from DGP3, covariates replaced by ten fresh ones.
    #[serde(rename = "g-h0-2")]
    GlobalH0Replaced,
    #[serde(rename = "g-h1")]
    GlobalH1,
    /// DGP3 with three extra noise covariates.
    #[serde(rename = "g-h1-noise")]
    GlobalH1Noise,
    /// DGP4 on two covariates plus one noise covariate; tests the noise.
    #[serde(rename = "p-h0")]
    PartialH0,
    /// DGP4 with three covariates; tests the third.
    #[serde(rename = "p-h1-weak")]
    PartialH1Weak,
    /// DGP4 with three covariates; tests the first.
    #[serde(rename = "p-h1-strong")]
    PartialH1Strong,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::GlobalH0Constant,
        Scenario::GlobalH0Replaced,
        Scenario::GlobalH1,
        Scenario::GlobalH1Noise,
        Scenario::PartialH0,
        Scenario::PartialH1Weak,
        Scenario::PartialH1Strong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::GlobalH0Constant => "g-h0-1",
            Scenario::GlobalH0Replaced => "g-h0-2",
            Scenario::GlobalH1 => "g-h1",
            Scenario::GlobalH1Noise => "g-h1-noise",
            Scenario::PartialH0 => "p-h0",
            Scenario::PartialH1Weak => "p-h1-weak",
            Scenario::PartialH1Strong => "p-h1-strong",
        }
    }

    pub fn is_global(self) -> bool {
        matches!(
            self,
            Scenario::GlobalH0Constant
                | Scenario::GlobalH0Replaced
                | Scenario::GlobalH1
                | Scenario::GlobalH1Noise
        )
    }

    pub fn is_null(self) -> bool {
        matches!(
            self,
            Scenario::GlobalH0Constant | Scenario::GlobalH0Replaced | Scenario::PartialH0
        )
    }

    /// Column indices held fixed by the partial test.
    pub fn control_columns(self) -> Option<Vec<usize>> {
        match self {
            Scenario::PartialH0 | Scenario::PartialH1Weak => Some(vec![0, 1]),
            Scenario::PartialH1Strong => Some(vec![1, 2]),
            _ => None,
        }
    }

    /// Draws one training set of `n` rows. `h0_sigma` is the constant
    /// response covariance used by `g-h0-1`.
    pub fn generate(self, n: usize, seed: u64, h0_sigma: &SymMat) -> Result<Dataset> {
        let q = 5;
        let draw = |dgp, p, noise| -> Result<Dataset> {
            let spec = DgpSpec::new(dgp, n, 0, p, q, noise, seed)?;
            generate(&spec)?.0.dataset()
        };
        match self {
            Scenario::GlobalH0Constant => {
                let mut rng = seeds::derived_rng(seed, stream::DATA, 0);
                let sampler = MvnSampler::new(h0_sigma)?;
                let y: Vec<f64> = (0..n).flat_map(|_| sampler.sample(&mut rng)).collect();
                let x = normal_covariates(n, 10, "x", &mut rng)?;
                Dataset::with_default_names(x, Matrix::new(n, h0_sigma.dim(), y)?)
            }
            Scenario::GlobalH0Replaced => {
                let d = draw(Dgp::Dgp3, 7, 0)?;
                let mut rng = seeds::derived_rng(seed, stream::DATA, 1);
                d.with_x(normal_covariates(n, 10, "x", &mut rng)?)
            }
            Scenario::GlobalH1 => draw(Dgp::Dgp3, 7, 0),
            Scenario::GlobalH1Noise => draw(Dgp::Dgp3, 7, 3),
            Scenario::PartialH0 => draw(Dgp::Dgp4, 2, 1),
            Scenario::PartialH1Weak | Scenario::PartialH1Strong => draw(Dgp::Dgp4, 3, 0),
        }
    }
}

fn normal_covariates(n: usize, p: usize, prefix: &str, rng: &mut seeds::Rng) -> Result<Covariates> {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    Covariates::from_rows((1..=p).map(|j| format!("{prefix}{j}")).collect(), &rows)
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidSimulation(format!(
                    "unknown scenario '{s}', expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub scenario: String,
    pub n_train: usize,
    pub rep: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub scenario: String,
    pub n_train: usize,
    pub r_perms: usize,
    pub reps: usize,
    pub alpha: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub rows: Vec<SignificanceRow>,
}

impl SignificanceSummary {
    pub fn p_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.p_value).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceOptions {
    pub alpha: f64,
    pub nodesize: NodesizeChoice,
    pub h0_sigma: SymMat,
}

impl Default for SignificanceOptions {
    fn default() -> Self {
        SignificanceOptions {
            alpha: 0.05,
            nodesize: NodesizeChoice::Tune,
            h0_sigma: SymMat::identity(5),
        }
    }
}

/// Runs the scenario's test on `reps` independent draws and reports the
/// fraction with `p < alpha`.
pub fn run_significance(
    scenario: Scenario,
    n_train: usize,
    r_perms: usize,
    reps: usize,
    params: &ForestParams,
    opts: &SignificanceOptions,
) -> Result<SignificanceSummary> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidParams(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    if reps == 0 {
        return Err(Error::InvalidSimulation(
            "at least one replication is required".into(),
        ));
    }
    let rows = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = rep_seed(params.seed, rep);
            let data = scenario.generate(n_train, s, &opts.h0_sigma)?;
            let p = params.clone().with_seed(s);
            let result = match scenario.control_columns() {
                None => global_test(&data, &p, opts.nodesize, r_perms)?,
                Some(ctrl) => {
                    partial_test(&data, &ctrl, &p, opts.nodesize, opts.nodesize, r_perms)?
                }
            };
            Ok(SignificanceRow {
                scenario: scenario.name().to_string(),
                n_train,
                rep,
                statistic: result.statistic,
                p_value: result.p_value,
                rejected: result.rejects(opts.alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rejections = rows.iter().filter(|r| r.rejected).count();
    Ok(SignificanceSummary {
        scenario: scenario.name().to_string(),
        n_train,
        r_perms,
        reps,
        alpha: opts.alpha,
        rejections,
        rejection_rate: rejections as f64 / reps as f64,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VimpRow {
    pub dgp: u8,
    pub n_train: usize,
    pub rep: usize,
    pub group: String,
    pub mean_rank: f64,
}

/// Mean rank of the first `n_important` covariates and of the rest.
pub fn vimp_group_ranks(result: &VimpResult, n_important: usize) -> (f64, f64) {
    let mean = |r: &[usize]| {
        if r.is_empty() {
            f64::NAN
        } else {
            r.iter().sum::<usize>() as f64 / r.len() as f64
        }
    };
    let (imp, noise) = result.ranks.split_at(n_important.min(result.ranks.len()));
    (mean(imp), mean(noise))
}

pub const VIMP_NOISE_VARS: usize = 5;

/// Importance ranks per group with five appended noise covariates.
pub fn run_vimp(
    spec: &DgpSpec,
    params: &ForestParams,
    nodesize: NodesizeChoice,
    reps: usize,
) -> Result<Vec<VimpRow>> {
    if !matches!(spec.dgp, Dgp::Dgp3 | Dgp::Dgp4) {
        return Err(Error::InvalidSimulation(
            "importance experiments use DGP3 or DGP4".into(),
        ));
    }
    let spec = spec.clone().with_noise(VIMP_NOISE_VARS);
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = rep_seed(spec.seed, rep);
            let (train, _) = generate(&spec.clone().with_seed(s))?;
            let v = vimp_pipeline(&train.dataset()?, &params.clone().with_seed(s), nodesize)?;
            let (imp, noise) = vimp_group_ranks(&v, spec.p);
            let row = |group: &str, mean_rank| VimpRow {
                dgp: spec.dgp.number(),
                n_train: spec.n_train,
                rep,
                group: group.to_string(),
                mean_rank,
            };
            Ok(vec![row("important", imp), row("noise", noise)])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Writes rows as a headed CSV table.
pub fn to_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))
}
