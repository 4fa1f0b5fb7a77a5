//! Symmetric matrices, sample covariance, matrix distances and
//! multivariate normal sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// A `dim × dim` symmetric matrix stored by its upper triangle
/// (diagonal included), row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    dim: usize,
    tri: Vec<f64>,
}

#[inline]
fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * dim - i + 1) / 2 + (j - i)
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        SymMat {
            dim,
            tri: vec![0.0; tri_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from its upper triangle in row-major order.
    pub fn from_upper(dim: usize, tri: Vec<f64>) -> Result<Self> {
        if tri.len() != tri_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: tri_len(dim),
                found: tri.len(),
            });
        }
        if tri.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite matrix entry".into()));
        }
        Ok(SymMat { dim, tri })
    }

    /// Builds a matrix from full rows, reading only the upper triangle.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut tri = Vec::with_capacity(tri_len(dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            tri.extend_from_slice(&row[i..]);
        }
        Self::from_upper(dim, tri)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.tri[tri_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = tri_index(self.dim, i, j);
        self.tri[k] = value;
    }

    /// Upper-triangle entries, row-major, diagonal included.
    #[inline]
    pub fn upper(&self) -> &[f64] {
        &self.tri
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &SymMat) -> Result<SymMat> {
        check_dims(self, other)?;
        let tri = self
            .tri
            .iter()
            .zip(&other.tri)
            .map(|(a, b)| a + b)
            .collect();
        Ok(SymMat { dim: self.dim, tri })
    }

    pub fn scale(&self, factor: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            tri: self.tri.iter().map(|v| v * factor).collect(),
        }
    }
}

fn check_dims(a: &SymMat, b: &SymMat) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

/// Unbiased sample covariance of the responses in `rows`.
pub fn sample_cov(rows: &[usize], y: &Matrix) -> Result<SymMat> {
    if rows.len() < 2 {
        return Err(Error::DegenerateNode { rows: rows.len() });
    }
    let q = y.ncols();
    let mut mean = vec![0.0; q];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(y.row(r)) {
            *m += v;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);

    let mut out = SymMat::zeros(q);
    let mut centred = vec![0.0; q];
    for &r in rows {
        for ((c, v), m) in centred.iter_mut().zip(y.row(r)).zip(&mean) {
            *c = v - m;
        }
        accumulate_outer(&mut out.tri, &centred, 1.0);
    }
    out.tri.iter_mut().for_each(|v| *v /= n - 1.0);
    Ok(out)
}

/// Sample covariance over a multiset of rows given as `(row, multiplicity)`
/// pairs. Equivalent to [`sample_cov`] on the expanded row list.
pub fn multiset_cov(members: &[(usize, u32)], y: &Matrix) -> Result<SymMat> {
    let total: f64 = members.iter().map(|&(_, w)| w as f64).sum();
    if total < 2.0 {
        return Err(Error::DegenerateNode {
            rows: total as usize,
        });
    }
    let q = y.ncols();
    let mut mean = vec![0.0; q];
    for &(r, w) in members {
        let w = w as f64;
        for (m, v) in mean.iter_mut().zip(y.row(r)) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut out = SymMat::zeros(q);
    let mut centred = vec![0.0; q];
    for &(r, w) in members {
        for ((c, v), m) in centred.iter_mut().zip(y.row(r)).zip(&mean) {
            *c = v - m;
        }
        accumulate_outer(&mut out.tri, &centred, w as f64);
    }
    out.tri.iter_mut().for_each(|v| *v /= total - 1.0);
    Ok(out)
}

#[inline]
fn accumulate_outer(tri: &mut [f64], v: &[f64], weight: f64) {
    let mut k = 0;
    for i in 0..v.len() {
        let vi = v[i] * weight;
        for vj in &v[i..] {
            tri[k] += vi * vj;
            k += 1;
        }
    }
}

/// Euclidean distance between the upper triangles (diagonal included).
pub fn tri_distance(a: &SymMat, b: &SymMat) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.tri
        .iter()
        .zip(&b.tri)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Mean absolute difference over the upper triangles (diagonal included).
pub fn mad_distance(a: &SymMat, b: &SymMat) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.tri.iter().zip(&b.tri).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.tri.len() as f64)
}

/// Splits a covariance matrix into its correlation matrix and standard deviations.
pub fn cov_to_cor(s: &SymMat) -> Result<(SymMat, Vec<f64>)> {
    let mut sds = Vec::with_capacity(s.dim);
    for i in 0..s.dim {
        let v = s.get(i, i);
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NonPositiveVariance { index: i });
        }
        sds.push(v.sqrt());
    }
    let mut cor = SymMat::zeros(s.dim);
    for i in 0..s.dim {
        cor.set(i, i, 1.0);
        for j in i + 1..s.dim {
            cor.set(i, j, s.get(i, j) / (sds[i] * sds[j]));
        }
    }
    Ok((cor, sds))
}

/// Lower-triangular factor `L` with `L Lᵀ` equal to the factored matrix
/// (up to the ridge, if one was needed).
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    // full row-major storage; entries above the diagonal stay zero
    lower: Vec<f64>,
}

impl Cholesky {
    /// Plain factorization, falling back once to a diagonal ridge of
    /// `1e-10 · trace / dim` when a pivot is not strictly positive.
    pub fn factor(s: &SymMat) -> Result<Cholesky> {
        if let Some(c) = Self::try_factor(s, 0.0) {
            return Ok(c);
        }
        let trace = s.trace();
        if trace == 0.0 && s.tri.iter().all(|&v| v == 0.0) {
            return Ok(Cholesky {
                dim: s.dim,
                lower: vec![0.0; s.dim * s.dim],
            });
        }
        let ridge = 1e-10 * trace / s.dim as f64;
        if ridge > 0.0 {
            if let Some(c) = Self::try_factor(s, ridge) {
                return Ok(c);
            }
        }
        Err(Error::NotPsd)
    }

    /// Factorization with a caller-chosen ridge and no fallback.
    pub fn with_ridge(s: &SymMat, ridge: f64) -> Option<Cholesky> {
        Self::try_factor(s, ridge)
    }

    fn try_factor(s: &SymMat, ridge: f64) -> Option<Cholesky> {
        let d = s.dim;
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let mut pivot = s.get(j, j) + ridge;
            for k in 0..j {
                pivot -= l[j * d + k] * l[j * d + k];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            let pivot = pivot.sqrt();
            l[j * d + j] = pivot;
            for i in j + 1..d {
                let mut v = s.get(i, j);
                for k in 0..j {
                    v -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = v / pivot;
            }
        }
        Some(Cholesky { dim: d, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L · z`.
    pub fn mul(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| (0..=i).map(|k| self.lower[i * d + k] * z[k]).sum())
            .collect()
    }

    /// Solves `L w = b` in place and returns `‖w‖²`, i.e. `bᵀ (L Lᵀ)⁻¹ b`.
    pub fn mahalanobis_sq(&self, b: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            let mut v = b[i];
            for k in 0..i {
                v -= self.lower[i * d + k] * b[k];
            }
            v /= self.lower[i * d + i];
            b[i] = v;
            acc += v * v;
        }
        acc
    }
}

/// Draws from `N(0, Σ)` with a cached factor of `Σ`.
#[derive(Clone, Debug)]
pub struct MvnSampler {
    factor: Cholesky,
}

impl MvnSampler {
    pub fn new(sigma: &SymMat) -> Result<Self> {
        Ok(MvnSampler {
            factor: Cholesky::factor(sigma)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.factor.dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.factor.mul(&z)
    }
}

/// One draw from `N(0, sigma)`.
pub fn mvn_sample<R: Rng + ?Sized>(sigma: &SymMat, rng: &mut R) -> Result<Vec<f64>> {
    Ok(MvnSampler::new(sigma)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn y_from(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn m2(a: f64, b: f64, d: f64) -> SymMat {
        SymMat::from_upper(2, vec![a, b, d]).unwrap()
    }

    fn brute_cov(rows: &[usize], y: &Matrix) -> Vec<Vec<f64>> {
        let q = y.ncols();
        let n = rows.len() as f64;
        let mut out = vec![vec![0.0; q]; q];
        for j in 0..q {
            for k in 0..q {
                let mj: f64 = rows.iter().map(|&r| y.get(r, j)).sum::<f64>() / n;
                let mk: f64 = rows.iter().map(|&r| y.get(r, k)).sum::<f64>() / n;
                out[j][k] = rows
                    .iter()
                    .map(|&r| (y.get(r, j) - mj) * (y.get(r, k) - mk))
                    .sum::<f64>()
                    / (n - 1.0);
            }
        }
        out
    }

    #[test]
    fn two_point_covariances() {
        let y = y_from(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(sample_cov(&[0, 1], &y).unwrap(), m2(2.0, 0.0, 0.0));
        assert_eq!(sample_cov(&[0, 2], &y).unwrap(), m2(0.0, 0.0, 2.0));
    }

    #[test]
    fn constant_rows_have_zero_covariance() {
        let y = y_from(&[[1.5, -3.0], [1.5, -3.0], [1.5, -3.0]]);
        assert_eq!(sample_cov(&[0, 1, 2], &y).unwrap(), SymMat::zeros(2));
    }

    #[test]
    fn single_row_is_degenerate() {
        let y = y_from(&[[1.0, 2.0]]);
        assert_eq!(sample_cov(&[0], &y), Err(Error::DegenerateNode { rows: 1 }));
    }

    #[test]
    fn distance_examples() {
        let i2 = SymMat::identity(2);
        let b = m2(2.0, 1.0, 2.0);
        assert_eq!(tri_distance(&i2, &i2).unwrap(), 0.0);
        assert!((tri_distance(&i2, &b).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let d = tri_distance(&m2(2.0, 0.0, 0.0), &m2(0.0, 0.0, 2.0)).unwrap();
        assert!((d - 8f64.sqrt()).abs() < 1e-15);

        assert_eq!(mad_distance(&i2, &i2).unwrap(), 0.0);
        assert_eq!(mad_distance(&i2, &b).unwrap(), 1.0);
        let a1 = SymMat::from_upper(1, vec![3.0]).unwrap();
        let b1 = SymMat::from_upper(1, vec![1.0]).unwrap();
        assert_eq!(mad_distance(&a1, &b1).unwrap(), 2.0);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let e = tri_distance(&SymMat::identity(2), &SymMat::identity(3));
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
        let e = mad_distance(&SymMat::identity(2), &SymMat::identity(3));
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn correlation_examples() {
        let (c, sds) = cov_to_cor(&SymMat::diagonal(&[4.0, 9.0, 0.25])).unwrap();
        assert_eq!(c, SymMat::identity(3));
        assert_eq!(sds, vec![2.0, 3.0, 0.5]);

        let (c, sds) = cov_to_cor(&m2(4.0, 2.0, 4.0)).unwrap();
        assert_eq!(c.get(0, 1), 0.5);
        assert_eq!(sds, vec![2.0, 2.0]);

        let (c, _) = cov_to_cor(&m2(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(c.get(1, 0), 1.0);

        assert_eq!(
            cov_to_cor(&m2(1.0, 0.0, 0.0)),
            Err(Error::NonPositiveVariance { index: 1 })
        );
    }

    #[test]
    fn zero_sigma_samples_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(
                mvn_sample(&SymMat::zeros(3), &mut rng).unwrap(),
                vec![0.0; 3]
            );
        }
    }

    #[test]
    fn singular_psd_uses_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draw = mvn_sample(&m2(1.0, 1.0, 1.0), &mut rng).unwrap();
        assert!((draw[0] - draw[1]).abs() < 1e-4);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(mvn_sample(&m2(1.0, 2.0, 1.0), &mut rng), Err(Error::NotPsd));
    }

    fn empirical_cov(sigma: &SymMat, draws: usize, seed: u64) -> SymMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampler = MvnSampler::new(sigma).unwrap();
        let rows: Vec<Vec<f64>> = (0..draws).map(|_| sampler.sample(&mut rng)).collect();
        let y = Matrix::from_rows(rows).unwrap();
        let idx: Vec<usize> = (0..draws).collect();
        sample_cov(&idx, &y).unwrap()
    }

    #[test]
    fn identity_draws_match_identity() {
        let c = empirical_cov(&SymMat::identity(3), 100_000, 11);
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (c.get(i, j) - target).abs() < 0.03,
                    "{i},{j}: {}",
                    c.get(i, j)
                );
            }
        }
    }

    #[test]
    fn correlated_draws_match_correlation() {
        let c = empirical_cov(&m2(1.0, 0.9, 1.0), 100_000, 12);
        let (cor, _) = cov_to_cor(&c).unwrap();
        assert!((cor.get(0, 1) - 0.9).abs() < 0.01);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let s = m2(2.0, 0.3, 1.0);
        let a = mvn_sample(&s, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = mvn_sample(&s, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    fn arb_sym(dim: usize) -> impl Strategy<Value = SymMat> {
        prop::collection::vec(-10.0f64..10.0, dim * (dim + 1) / 2)
            .prop_map(move |tri| SymMat::from_upper(dim, tri).unwrap())
    }

    proptest! {
        #[test]
        fn tri_distance_is_a_metric(a in arb_sym(3), b in arb_sym(3), c in arb_sym(3)) {
            let ab = tri_distance(&a, &b).unwrap();
            let ba = tri_distance(&b, &a).unwrap();
            let ac = tri_distance(&a, &c).unwrap();
            let cb = tri_distance(&c, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn sample_cov_matches_double_loop(
            data in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..20),
            seed in any::<u64>(),
        ) {
            let y = Matrix::from_rows(data.clone()).unwrap();
            let mut rows: Vec<usize> = (0..data.len()).collect();
            let fast = sample_cov(&rows, &y).unwrap();
            let slow = brute_cov(&rows, &y);
            for j in 0..3 {
                for k in 0..3 {
                    prop_assert!((fast.get(j, k) - slow[j][k]).abs() < 1e-10);
                }
                prop_assert!(fast.get(j, j) >= 0.0);
            }
            // order invariance
            use rand::seq::SliceRandom;
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = sample_cov(&rows, &y).unwrap();
            for (u, v) in fast.upper().iter().zip(shuffled.upper()) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }

        #[test]
        fn correlation_rescales_back(
            data in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..20),
        ) {
            let y = Matrix::from_rows(data.clone()).unwrap();
            let rows: Vec<usize> = (0..data.len()).collect();
            let s = sample_cov(&rows, &y).unwrap();
            prop_assume!(s.diag().iter().all(|&v| v > 1e-6));
            let (c, sds) = cov_to_cor(&s).unwrap();
            for j in 0..3 {
                for k in j..3 {
                    let back = c.get(j, k) * sds[j] * sds[k];
                    let scale = s.get(j, k).abs().max(1e-300);
                    prop_assert!((back - s.get(j, k)).abs() <= 1e-12 * scale.max(s.get(j, j).max(s.get(k, k))));
                }
            }
        }

        #[test]
        fn multiset_cov_matches_expansion(
            data in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..12),
            mult in prop::collection::vec(1u32..4, 12),
        ) {
            let y = Matrix::from_rows(data.clone()).unwrap();
            let members: Vec<(usize, u32)> = (0..data.len()).map(|i| (i, mult[i])).collect();
            let expanded: Vec<usize> = members
                .iter()
                .flat_map(|&(r, w)| std::iter::repeat(r).take(w as usize))
                .collect();
            let a = multiset_cov(&members, &y).unwrap();
            let b = sample_cov(&expanded, &y).unwrap();
            for (u, v) in a.upper().iter().zip(b.upper()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
