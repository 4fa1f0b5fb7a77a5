use std::path::{Path, PathBuf};
use std::time::Instant;

use covrf::simlab::{
    run_accuracy, run_nodesize_study, run_significance, run_vimp, AccuracyRow, Dgp, DgpSpec,
    Scenario, SignificanceOptions, SignificanceSummary,
};
use covrf::{
    estimate_new, global_test, grow_forest, oob_estimates, partial_test, Dataset, ForestParams,
    NodesizeChoice, SymMat, TestResult, TuneResult, VimpResult,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{Failure, Kind};
use crate::ingest::{read_covariates, read_covariates_like, read_responses};
use crate::model;
use crate::output::{csv_bytes, emit_json, estimates_csv, write_atomic, write_json};

pub const MODEL_FILE: &str = "model.covrf";
pub const OOB_FILE: &str = "oob_estimates.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn load_training(x: &Path, y: &Path, categorical: &[String]) -> Result<Dataset, Failure> {
    let cov = read_covariates(x, categorical)?;
    let (resp, names) = read_responses(y)?;
    if cov.n() != resp.nrows() {
        return Err(Failure::new(
            Kind::Schema,
            format!(
                "{} has {} rows but {} has {}",
                x.display(),
                cov.n(),
                y.display(),
                resp.nrows()
            ),
        ));
    }
    Ok(Dataset::new(cov, resp, names)?)
}

#[derive(Serialize)]
struct Timing {
    tuning: f64,
    fitting: f64,
    estimation: f64,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    n: usize,
    p: usize,
    q: usize,
    covariates: Vec<String>,
    responses: &'a [String],
    params: &'a ForestParams,
    nodesize: usize,
    tuning: Option<&'a TuneResult>,
    fallback_rows: usize,
    low_support_rows: usize,
    timing_seconds: Timing,
}

pub fn fit(
    cfg: &RunConfig,
    x: &Path,
    y: &Path,
    categorical: &[String],
    out_dir: &Path,
) -> Result<(), Failure> {
    let data = load_training(x, y, categorical)?;
    let t0 = Instant::now();
    let (params, tuning) = covrf::estimator::resolve_nodesize(&data, &cfg.params, cfg.nodesize)?;
    let t1 = Instant::now();
    let forest = grow_forest(&data, &params)?;
    let t2 = Instant::now();
    let est = oob_estimates(&forest)?;
    let t3 = Instant::now();

    model::save(&out_dir.join(MODEL_FILE), &forest, tuning.as_ref())?;
    write_atomic(
        &out_dir.join(OOB_FILE),
        &estimates_csv(&est, data.response_names(), false)?,
    )?;
    let summary = FitSummary {
        n: data.n(),
        p: data.p(),
        q: data.q(),
        covariates: data.x().names(),
        responses: data.response_names(),
        params: &params,
        nodesize: params.nodesize,
        tuning: tuning.as_ref(),
        fallback_rows: est.fallback_count(),
        low_support_rows: est.low_support.iter().filter(|&&b| b).count(),
        timing_seconds: Timing {
            tuning: (t1 - t0).as_secs_f64(),
            fitting: (t2 - t1).as_secs_f64(),
            estimation: (t3 - t2).as_secs_f64(),
        },
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)
}

pub fn predict(model_path: &Path, x: &Path, out: &Path) -> Result<(), Failure> {
    let m = model::load(model_path)?;
    let forest = &m.forest;
    let cov = read_covariates_like(x, forest.data().x())?;
    let est = estimate_new(forest, &cov)?;
    write_atomic(
        out,
        &estimates_csv(&est, forest.data().response_names(), true)?,
    )
}

fn column_indices(data: &Dataset, names: &[String]) -> Result<Vec<usize>, Failure> {
    names
        .iter()
        .map(|n| {
            data.x().column_index(n).ok_or_else(|| {
                Failure::new(Kind::Schema, format!("control column '{n}' not found"))
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TestReport<'a> {
    #[serde(flatten)]
    result: &'a TestResult,
    alpha: f64,
    rejected: bool,
}

pub fn test(
    cfg: &RunConfig,
    x: &Path,
    y: &Path,
    categorical: &[String],
    control: &[String],
    out: Option<&Path>,
) -> Result<(), Failure> {
    let data = load_training(x, y, categorical)?;
    let result = if control.is_empty() {
        global_test(&data, &cfg.params, cfg.nodesize, cfg.permutations)?
    } else {
        let ctrl = column_indices(&data, control)?;
        partial_test(
            &data,
            &ctrl,
            &cfg.params,
            cfg.nodesize,
            cfg.nodesize,
            cfg.permutations,
        )?
    };
    emit_json(
        out,
        &TestReport {
            result: &result,
            alpha: cfg.alpha,
            rejected: result.rejects(cfg.alpha),
        },
    )
}

pub enum VimpSource {
    Model(PathBuf),
    Data {
        x: PathBuf,
        y: PathBuf,
        categorical: Vec<String>,
    },
}

pub fn vimp(cfg: &RunConfig, source: VimpSource, out: Option<&Path>) -> Result<(), Failure> {
    let result: VimpResult = match source {
        VimpSource::Model(path) => covrf::vimp::vimp_from_forest(&model::load(&path)?.forest)?,
        VimpSource::Data { x, y, categorical } => {
            let data = load_training(&x, &y, &categorical)?;
            covrf::vimp_pipeline(&data, &cfg.params, cfg.nodesize)?
        }
    };
    if let Some(w) = &result.warning {
        eprintln!("warning: {w}");
    }
    emit_json(out, &result)
}

pub enum DgpExperiment {
    Accuracy,
    Nodesize,
    Vimp,
}

pub enum SimJob {
    Dgp {
        dgp: Dgp,
        experiment: DgpExperiment,
        p: Option<usize>,
        q: Option<usize>,
    },
    Significance(Scenario),
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    experiment: &'static str,
    /// Figure the table feeds.
    figure: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dgp: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
    n_train: Vec<usize>,
    reps: usize,
    rows: usize,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    params: ForestParams,
    nodesize: NodesizeChoice,
    outputs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    n_train: usize,
    r_perms: usize,
    reps: usize,
    alpha: f64,
    rejections: usize,
    rejection_rate: f64,
}

fn dgp_spec(
    dgp: Dgp,
    n_train: usize,
    n_test: usize,
    p: Option<usize>,
    q: Option<usize>,
    seed: u64,
) -> Result<DgpSpec, Failure> {
    let std = DgpSpec::standard(dgp, n_train, n_test, seed);
    Ok(DgpSpec::new(
        dgp,
        n_train,
        n_test,
        p.unwrap_or(std.p),
        q.unwrap_or(std.q),
        0,
        seed,
    )?)
}

pub fn simulate(
    cfg: &RunConfig,
    job: SimJob,
    ntrain: &[usize],
    ntest: usize,
    out_dir: &Path,
) -> Result<(), Failure> {
    if ntrain.is_empty() {
        return Err(Failure::new(
            Kind::Usage,
            "--ntrain needs at least one size",
        ));
    }
    let mut outputs = Vec::new();
    match job {
        SimJob::Dgp {
            dgp,
            experiment,
            p,
            q,
        } => {
            let k = dgp.number();
            let pair = if k <= 2 { 1 } else { 2 };
            let mut acc: Vec<AccuracyRow> = Vec::new();
            let mut vrows = Vec::new();
            for &n in ntrain {
                match experiment {
                    DgpExperiment::Accuracy => {
                        let spec = dgp_spec(dgp, n, ntest, p, q, cfg.seed)?;
                        acc.extend(run_accuracy(&spec, &cfg.params, cfg.nodesize, cfg.reps)?);
                    }
                    DgpExperiment::Nodesize => {
                        let spec = dgp_spec(dgp, n, ntest, p, q, cfg.seed)?;
                        acc.extend(run_nodesize_study(&spec, &cfg.params, cfg.reps)?);
                    }
                    DgpExperiment::Vimp => {
                        let spec = dgp_spec(dgp, n, 0, p, q, cfg.seed)?;
                        vrows.extend(run_vimp(&spec, &cfg.params, cfg.nodesize, cfg.reps)?);
                    }
                }
            }
            let (name, experiment, figure, bytes, rows) = match experiment {
                DgpExperiment::Accuracy => (
                    format!("accuracy_dgp{k}.csv"),
                    "accuracy",
                    if pair == 1 {
                        "fig_accuracy_1"
                    } else {
                        "fig_accuracy_2"
                    },
                    csv_bytes(&acc)?,
                    acc.len(),
                ),
                DgpExperiment::Nodesize => (
                    format!("nodesize_dgp{k}.csv"),
                    "nodesize",
                    if pair == 1 {
                        "fig_nodesize_1"
                    } else {
                        "fig_nodesize_2"
                    },
                    csv_bytes(&acc)?,
                    acc.len(),
                ),
                DgpExperiment::Vimp => (
                    format!("vimp_dgp{k}.csv"),
                    "vimp",
                    "fig_vimp",
                    csv_bytes(&vrows)?,
                    vrows.len(),
                ),
            };
            write_atomic(&out_dir.join(&name), &bytes)?;
            outputs.push(ManifestEntry {
                file: name,
                experiment,
                figure,
                dgp: Some(k),
                scenario: None,
                n_train: ntrain.to_vec(),
                reps: cfg.reps,
                rows,
            });
        }
        SimJob::Significance(scenario) => {
            let opts = SignificanceOptions {
                alpha: cfg.alpha,
                nodesize: cfg.nodesize,
                h0_sigma: match &cfg.h0_sigma {
                    Some(rows) => SymMat::from_rows(rows)?,
                    None => SymMat::identity(5),
                },
            };
            let mut summaries: Vec<SignificanceSummary> = Vec::new();
            for &n in ntrain {
                summaries.push(run_significance(
                    scenario,
                    n,
                    cfg.permutations,
                    cfg.reps,
                    &cfg.params,
                    &opts,
                )?);
            }
            let rows: Vec<_> = summaries.iter().flat_map(|s| s.rows.clone()).collect();
            let totals: Vec<SummaryRow> = summaries
                .iter()
                .map(|s| SummaryRow {
                    scenario: &s.scenario,
                    n_train: s.n_train,
                    r_perms: s.r_perms,
                    reps: s.reps,
                    alpha: s.alpha,
                    rejections: s.rejections,
                    rejection_rate: s.rejection_rate,
                })
                .collect();
            let name = scenario.name();
            let figure = if scenario.is_global() {
                "fig_significance_global"
            } else {
                "fig_significance_partial"
            };
            for (file, bytes, count, experiment) in [
                (
                    format!("significance_{name}.csv"),
                    csv_bytes(&rows)?,
                    rows.len(),
                    "significance",
                ),
                (
                    format!("significance_{name}_summary.csv"),
                    csv_bytes(&totals)?,
                    totals.len(),
                    "significance_summary",
                ),
            ] {
                write_atomic(&out_dir.join(&file), &bytes)?;
                outputs.push(ManifestEntry {
                    file,
                    experiment,
                    figure,
                    dgp: None,
                    scenario: Some(name.to_string()),
                    n_train: ntrain.to_vec(),
                    reps: cfg.reps,
                    rows: count,
                });
            }
        }
    }
    write_json(
        &out_dir.join(MANIFEST_FILE),
        &Manifest {
            seed: cfg.seed,
            params: cfg.params.clone(),
            nodesize: cfg.nodesize,
            outputs,
        },
    )
}
