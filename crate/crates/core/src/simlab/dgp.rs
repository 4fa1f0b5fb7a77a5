use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Column, Covariates, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::linalg::{MvnSampler, SymMat};
use crate::seeds::{self, stream};

/// Correlations at the eight leaves of the DGP3 tree, left to right.
pub const DGP3_LEAVES: [f64; 8] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dgp {
    /// One uniform covariate, linear covariance regression.
    Dgp1,
    /// As `Dgp1` with `x + x²` in the quadratic form.
    Dgp2,
    /// Seven normal covariates, tree-structured heterogeneous AR(1).
    Dgp3,
    /// Normal covariates, logit compound symmetry.
    Dgp4,
}

impl Dgp {
    pub fn from_number(k: u8) -> Result<Dgp> {
        match k {
            1 => Ok(Dgp::Dgp1),
            2 => Ok(Dgp::Dgp2),
            3 => Ok(Dgp::Dgp3),
            4 => Ok(Dgp::Dgp4),
            _ => Err(Error::InvalidSimulation(format!("unknown DGP {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Dgp::Dgp1 => 1,
            Dgp::Dgp2 => 2,
            Dgp::Dgp3 => 3,
            Dgp::Dgp4 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: Dgp,
    pub n_train: usize,
    pub n_test: usize,
    /// Covariates entering Σ (before noise columns).
    pub p: usize,
    pub q: usize,
    /// Independent standard-normal covariates appended after generation.
    pub noise_vars: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(
        dgp: Dgp,
        n_train: usize,
        n_test: usize,
        p: usize,
        q: usize,
        noise_vars: usize,
        seed: u64,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidSimulation(m.to_string()));
        match dgp {
            Dgp::Dgp1 | Dgp::Dgp2 if p != 1 || q != 2 => {
                return bad("DGP1 and DGP2 have p = 1 and q = 2")
            }
            Dgp::Dgp3 if p != 7 => return bad("DGP3 has p = 7"),
            _ => {}
        }
        if p == 0 || q == 0 {
            return bad("p and q must be positive");
        }
        if n_train < 2 {
            return bad("n_train must be at least 2");
        }
        Ok(DgpSpec {
            dgp,
            n_train,
            n_test,
            p,
            q,
            noise_vars,
            seed,
        })
    }

    /// The usual shape of each DGP: p=1, q=2 for DGP1–2, p=7 for DGP3,
    /// p=3 for DGP4; q=5 for DGP3–4.
    pub fn standard(dgp: Dgp, n_train: usize, n_test: usize, seed: u64) -> Self {
        let (p, q) = match dgp {
            Dgp::Dgp1 | Dgp::Dgp2 => (1, 2),
            Dgp::Dgp3 => (7, 5),
            Dgp::Dgp4 => (3, 5),
        };
        DgpSpec {
            dgp,
            n_train,
            n_test,
            p,
            q,
            noise_vars: 0,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_vars: usize) -> Self {
        self.noise_vars = noise_vars;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sigma(&self, x: &[f64]) -> SymMat {
        match self.dgp {
            Dgp::Dgp1 => dgp1_sigma(x[0]),
            Dgp::Dgp2 => dgp2_sigma(x[0]),
            Dgp::Dgp3 => hetero_ar1(dgp3_rho(x), self.q),
            Dgp::Dgp4 => hetero_cs(dgp4_rho(x), self.q),
        }
    }
}

/// Rows of covariates, responses and the true covariance of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub x: Covariates,
    pub y: Matrix,
    pub truth: Vec<SymMat>,
}

impl LabeledSample {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::with_default_names(self.x.clone(), self.y.clone())
    }

    pub fn slice(&self, start: usize, end: usize) -> LabeledSample {
        let rows = (start..end).map(|i| self.y.row(i).to_vec()).collect();
        LabeledSample {
            x: self.x.slice_rows(start, end),
            y: Matrix::new(end - start, self.y.ncols(), flatten(rows)).expect("consistent rows"),
            truth: self.truth[start..end].to_vec(),
        }
    }
}

fn flatten(rows: Vec<Vec<f64>>) -> Vec<f64> {
    rows.into_iter().flatten().collect()
}

const B0: [[f64; 2]; 2] = [[1.0, 1.0], [-1.0, 1.0]];
const W: f64 = 1.0;

/// `Ψ = B₀ diag(1, ⅓) B₀ᵀ / (w + 1)`.
pub fn psi() -> SymMat {
    let d = [1.0, 1.0 / 3.0];
    let mut m = SymMat::zeros(2);
    for i in 0..2 {
        for j in i..2 {
            let v: f64 = (0..2).map(|k| B0[i][k] * d[k] * B0[j][k]).sum();
            m.set(i, j, v / (W + 1.0));
        }
    }
    m
}

/// `Ψ + B x̃ x̃ᵀ Bᵀ` with `x̃ = (1, t)` and `B = w B₀ / (w + 1)`.
fn linear_cov_regression(t: f64) -> SymMat {
    let scale = W / (W + 1.0);
    let bx = [0, 1].map(|i| scale * (B0[i][0] + B0[i][1] * t));
    let mut m = psi();
    for i in 0..2 {
        for j in i..2 {
            m.set(i, j, m.get(i, j) + bx[i] * bx[j]);
        }
    }
    m
}

pub fn dgp1_sigma(x: f64) -> SymMat {
    linear_cov_regression(x)
}

pub fn dgp2_sigma(x: f64) -> SymMat {
    linear_cov_regression(x + x * x)
}

/// Depth-three tree on `x1, …, x7` (0-based here).
pub fn dgp3_rho(x: &[f64]) -> f64 {
    let leaf = if x[0] < 0.0 {
        if x[1] < 0.0 {
            if x[3] < 0.0 {
                0
            } else {
                1
            }
        } else if x[4] < 0.0 {
            2
        } else {
            3
        }
    } else if x[2] < 0.0 {
        if x[5] < 0.0 {
            4
        } else {
            5
        }
    } else if x[6] < 0.0 {
        6
    } else {
        7
    };
    DGP3_LEAVES[leaf]
}

/// `(1, 1 − 1/p, …, 1 − (p−1)/p)`.
pub fn dgp4_betas(p: usize) -> Vec<f64> {
    (0..p).map(|j| (p - j) as f64 / p as f64).collect()
}

pub fn dgp4_rho(x: &[f64]) -> f64 {
    let eta: f64 = -1.0
        + dgp4_betas(x.len())
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>()
        + x[0] * x[0];
    1.0 / (1.0 + (-eta).exp())
}

fn hetero_sds(rho: f64, q: usize) -> Vec<f64> {
    (1..=q).map(|j| (1.0 + rho).powi(j as i32).sqrt()).collect()
}

/// `Σ_jk = σ_j σ_k ρ^{|j−k|}` with `σ_j² = (1+ρ)^j`.
pub fn hetero_ar1(rho: f64, q: usize) -> SymMat {
    let sd = hetero_sds(rho, q);
    let mut m = SymMat::zeros(q);
    for j in 0..q {
        for k in j..q {
            m.set(j, k, sd[j] * sd[k] * rho.powi((k - j) as i32));
        }
    }
    m
}

/// `Σ_jj = (1+ρ)^j`, `Σ_jk = σ_j σ_k ρ` for `j ≠ k`.
pub fn hetero_cs(rho: f64, q: usize) -> SymMat {
    let sd = hetero_sds(rho, q);
    let mut m = SymMat::zeros(q);
    for j in 0..q {
        for k in j..q {
            let c = if j == k { 1.0 } else { rho };
            m.set(j, k, sd[j] * sd[k] * c);
        }
    }
    m
}

fn covariate_names(spec: &DgpSpec) -> Vec<String> {
    (1..=spec.p)
        .map(|j| format!("x{j}"))
        .chain((1..=spec.noise_vars).map(|j| format!("noise{j}")))
        .collect()
}

/// Draws `n_train + n_test` independent rows and splits them.
pub fn generate(spec: &DgpSpec) -> Result<(LabeledSample, LabeledSample)> {
    let n = spec.n_train + spec.n_test;
    let mut rng = seeds::derived_rng(spec.seed, stream::DATA, 0);
    let unif = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut cols = vec![Vec::with_capacity(n); spec.p + spec.noise_vars];
    let mut y = Vec::with_capacity(n * spec.q);
    let mut truth = Vec::with_capacity(n);
    let mut row = vec![0.0; spec.p];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = match spec.dgp {
                Dgp::Dgp1 | Dgp::Dgp2 => rng.sample(unif),
                Dgp::Dgp3 | Dgp::Dgp4 => rng.sample(StandardNormal),
            };
        }
        let sigma = spec.sigma(&row);
        y.extend(MvnSampler::new(&sigma)?.sample(&mut rng));
        truth.push(sigma);
        for (c, &v) in row.iter().enumerate() {
            cols[c].push(v);
        }
    }
    for c in spec.p..spec.p + spec.noise_vars {
        for _ in 0..n {
            cols[c].push(rng.sample(StandardNormal));
        }
    }
    let columns = covariate_names(spec)
        .into_iter()
        .map(Column::continuous)
        .collect();
    let x = Covariates::new(columns, cols)?;
    let all = LabeledSample {
        x,
        y: Matrix::new(n, spec.q, y)?,
        truth,
    };
    Ok((all.slice(0, spec.n_train), all.slice(spec.n_train, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;

    fn close(a: &SymMat, b: &[[f64; 2]; 2]) {
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (a.get(i, j) - b[i][j]).abs() < 1e-12,
                    "{i},{j}: {}",
                    a.get(i, j)
                );
            }
        }
    }

    #[test]
    fn dgp1_and_dgp2_matrices() {
        close(&psi(), &[[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]]);
        let at0 = [[11.0 / 12.0, -7.0 / 12.0], [-7.0 / 12.0, 11.0 / 12.0]];
        close(&dgp1_sigma(0.0), &at0);
        close(&dgp2_sigma(0.0), &at0);
        close(&dgp2_sigma(-1.0), &at0);
        // x̃ = (1, 1): B x̃ = (1, 0)
        close(
            &dgp1_sigma(1.0),
            &[[5.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]],
        );
        // x̃ = (1, 2): B x̃ = (3/2, 1/2)
        let two = [
            [2.0 / 3.0 + 2.25, -1.0 / 3.0 + 0.75],
            [-1.0 / 3.0 + 0.75, 2.0 / 3.0 + 0.25],
        ];
        close(&dgp1_sigma(2.0), &two);
        close(&dgp2_sigma(1.0), &two);
    }

    #[test]
    fn dgp3_leaves() {
        assert_eq!(dgp3_rho(&[-1.0; 7]), 0.2);
        assert_eq!(dgp3_rho(&[1.0; 7]), 0.9);
        assert_eq!(dgp3_rho(&[-1.0, -1.0, 5.0, 0.0, 5.0, 5.0, 5.0]), 0.3);
        assert_eq!(dgp3_rho(&[-1.0, 0.0, 5.0, 5.0, -2.0, 5.0, 5.0]), 0.4);
        assert_eq!(dgp3_rho(&[-1.0, 0.0, 5.0, 5.0, 0.0, 5.0, 5.0]), 0.5);
        assert_eq!(dgp3_rho(&[0.0, 5.0, -1.0, 5.0, 5.0, -1.0, 5.0]), 0.6);
        assert_eq!(dgp3_rho(&[0.0, 5.0, -1.0, 5.0, 5.0, 0.0, 5.0]), 0.7);
        assert_eq!(dgp3_rho(&[0.0, 5.0, 0.0, 5.0, 5.0, 5.0, -1.0]), 0.8);

        let s = hetero_ar1(0.2, 5);
        assert!((s.get(0, 0) - 1.2).abs() < 1e-12);
        assert!((s.get(4, 4) - 2.48832).abs() < 1e-12);
        assert!((s.get(0, 1) - (1.2f64 * 1.44).sqrt() * 0.2).abs() < 1e-12);
        assert!((s.get(0, 2) - (1.2f64 * 1.728).sqrt() * 0.04).abs() < 1e-12);
    }

    #[test]
    fn dgp4_logit() {
        assert_eq!(dgp4_betas(3), vec![1.0, 2.0 / 3.0, 1.0 / 3.0]);
        let r = dgp4_rho(&[0.0; 3]);
        assert!((r - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-12);
        assert!((r - 0.2689414).abs() < 1e-7);
        for x in [-5.0, -3.0, 0.5, 4.0] {
            let r = dgp4_rho(&[x, -x, x]);
            assert!(r > 0.0 && r < 1.0);
        }
        let s = hetero_cs(0.5, 3);
        assert!((s.get(0, 2) - (1.5f64 * 3.375).sqrt() * 0.5).abs() < 1e-12);
    }

    #[test]
    fn shape_constraints() {
        assert!(DgpSpec::new(Dgp::Dgp1, 10, 0, 2, 2, 0, 0).is_err());
        assert!(DgpSpec::new(Dgp::Dgp3, 10, 0, 6, 5, 0, 0).is_err());
        assert!(DgpSpec::new(Dgp::Dgp4, 10, 0, 4, 3, 0, 0).is_ok());
        assert!(Dgp::from_number(5).is_err());
    }

    #[test]
    fn generation_is_seeded_and_positive_definite() {
        for dgp in [Dgp::Dgp1, Dgp::Dgp2, Dgp::Dgp3, Dgp::Dgp4] {
            let spec = DgpSpec::standard(dgp, 60, 40, 5).with_noise(2);
            let (train, test) = generate(&spec).unwrap();
            assert_eq!(train.n(), 60);
            assert_eq!(test.n(), 40);
            assert_eq!(train.x.p(), spec.p + 2);
            for s in train.truth.iter().chain(&test.truth) {
                assert!(Cholesky::with_ridge(s, 0.0).is_some());
            }
            let (again, _) = generate(&spec).unwrap();
            assert_eq!(again, train);
            let (other, _) = generate(&spec.clone().with_seed(6)).unwrap();
            assert_ne!(other.y, train.y);
            // truth matches the covariates it was generated from
            for i in 0..train.n() {
                let row = train.x.row(i);
                assert_eq!(spec.sigma(&row[..spec.p]), train.truth[i]);
            }
        }
    }

    #[test]
    fn dgp3_takes_only_leaf_values() {
        let spec = DgpSpec::standard(Dgp::Dgp3, 400, 0, 1);
        let (train, _) = generate(&spec).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..train.n() {
            let rho = dgp3_rho(&train.x.row(i));
            assert!(DGP3_LEAVES.contains(&rho));
            seen.insert((rho * 10.0).round() as i32);
        }
        assert_eq!(seen.len(), 8);
    }
}
