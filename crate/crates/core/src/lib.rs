//! Covariance regression with random forests.
//!
//! Trees are grown with a splitting rule that maximizes the distance between
//! the sample covariance matrices of the two child nodes. Conditional
//! covariance matrices are then estimated from out-of-bag neighbourhoods,
//! and permutation tests assess whether covariates (all of them, or a
//! subset) change those estimates.

pub mod data;
pub mod error;
pub mod estimator;
pub mod forest;
pub mod inference;
pub mod linalg;
pub mod seeds;
pub mod simlab;
pub mod tree;
pub mod vimp;

pub use data::{Column, ColumnKind, Covariates, Dataset, Matrix};
pub use error::{Error, Result};
pub use estimator::{
    estimate_new, nodesize_candidates, oob_estimates, tune_nodesize, Bop, CovEstimates,
    NodesizeChoice, OobNeighbours, TuneResult,
};
pub use forest::{grow_forest, Forest, ForestParams, SplitSearch};
pub use inference::{global_test, partial_test, test_statistic, TestKind, TestResult};
pub use linalg::{cov_to_cor, mad_distance, mvn_sample, sample_cov, tri_distance, SymMat};
pub use tree::{Node, SplitRule, SplitSpec, Tree};
pub use vimp::{fit_the_fit, permutation_vimp, vimp_pipeline, RegressionForest, VimpResult};
