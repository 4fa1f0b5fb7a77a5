//! Simulation laboratory: data generating processes, accuracy metrics and
//! experiment runners.

mod dgp;
mod experiments;
mod metrics;

pub use dgp::{
    dgp1_sigma, dgp2_sigma, dgp3_rho, dgp4_betas, dgp4_rho, generate, hetero_ar1, hetero_cs, psi,
    Dgp, DgpSpec, LabeledSample, DGP3_LEAVES,
};
pub use experiments::{
    run_accuracy, run_nodesize_study, run_significance, run_vimp, to_csv, vimp_group_ranks,
    AccuracyRow, Scenario, SignificanceOptions, SignificanceRow, SignificanceSummary, VimpRow,
    VIMP_NOISE_VARS,
};
pub use metrics::{mae_cor, mae_sd};
