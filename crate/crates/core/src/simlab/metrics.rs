use crate::error::{Error, Result};
use crate::linalg::{cov_to_cor, SymMat};

fn check_aligned(est: &[SymMat], truth: &[SymMat]) -> Result<usize> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: est.len(),
        });
    }
    let q = truth.first().map_or(0, SymMat::dim);
    for m in est.iter().chain(truth) {
        if m.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: m.dim(),
            });
        }
    }
    Ok(q)
}

/// Mean absolute error over the strictly-upper correlation entries.
///
/// An estimate with a zero variance has undefined correlations; those are
/// scored as 0.
pub fn mae_cor(est: &[SymMat], truth: &[SymMat]) -> Result<f64> {
    let q = check_aligned(est, truth)?;
    if q < 2 && !truth.is_empty() {
        return Err(Error::InvalidParams(
            "correlation error needs q >= 2".into(),
        ));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (e, t) in est.iter().zip(truth) {
        let (rt, _) = cov_to_cor(t)?;
        let re = cor_or_zero(e);
        for j in 0..q {
            for k in j + 1..q {
                sum += (re.get(j, k) - rt.get(j, k)).abs();
            }
        }
    }
    Ok(2.0 * sum / (q * (q - 1) * truth.len()) as f64)
}

fn cor_or_zero(s: &SymMat) -> SymMat {
    let sd: Vec<f64> = s.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut r = SymMat::identity(s.dim());
    for j in 0..s.dim() {
        for k in j + 1..s.dim() {
            let d = sd[j] * sd[k];
            r.set(j, k, if d > 0.0 { s.get(j, k) / d } else { 0.0 });
        }
    }
    r
}

/// Mean relative absolute error of the standard deviations.
pub fn mae_sd(est: &[SymMat], truth: &[SymMat]) -> Result<f64> {
    let q = check_aligned(est, truth)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (e, t) in est.iter().zip(truth) {
        for (j, (ve, vt)) in e.diag().into_iter().zip(t.diag()).enumerate() {
            if !(vt > 0.0) {
                return Err(Error::NonPositiveVariance { index: j });
            }
            let st = vt.sqrt();
            sum += (ve.max(0.0).sqrt() - st).abs() / st;
        }
    }
    Ok(sum / (q * truth.len()) as f64)
}
