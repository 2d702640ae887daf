//! Subspace orthogonality, importance-weighted orthogonality and
//! importance-weighted rank, plus their aggregates.

use crate::basis::FactorBasis;
use crate::linalg::{projection_trace, Matrix};
use serde::{Deserialize, Serialize};

/// How far outside `[0, 1]` a metric may land from rounding before it counts
/// as an internal inconsistency.
pub const RANGE_SLACK: f64 = 1e-9;
/// Accepted drift of the importance sum from one.
pub const IMPORTANCE_NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),
    #[error("importances sum to {0}, expected 1")]
    UnnormalizedImportance(f64),
    #[error("{name} = {value} lies outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("mean IWO needs at least two factors")]
    SingleFactor,
}

fn clamp_unit(name: &'static str, value: f64) -> Result<f64, MetricsError> {
    if !(value >= -RANGE_SLACK && value <= 1.0 + RANGE_SLACK) {
        return Err(MetricsError::OutOfRange { name, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

fn check_ambient(a: &Matrix, b: &Matrix) -> Result<(), MetricsError> {
    if a.cols() != b.cols() {
        return Err(MetricsError::AmbientMismatch(a.cols(), b.cols()));
    }
    Ok(())
}

fn check_importance(f: &FactorBasis) -> Result<(), MetricsError> {
    let s: f64 = f.importance.iter().sum();
    if !((s - 1.0).abs() <= IMPORTANCE_NORMALIZATION_TOL) {
        return Err(MetricsError::UnnormalizedImportance(s));
    }
    Ok(())
}

/// `O = Tr(B_j B_k^T B_k B_j^T) / min(R_j, R_k)`: 1 when one subspace contains
/// the other, 0 when they are orthogonal.
pub fn orthogonality(bj: &Matrix, bk: &Matrix) -> Result<f64, MetricsError> {
    check_ambient(bj, bk)?;
    let t = projection_trace(bj, bk).expect("ambient checked");
    clamp_unit("O", t / bj.rows().min(bk.rows()) as f64)
}

/// Rows of `B` scaled by the fourth roots of their importances, so that the
/// squared entries of `U_j U_k^T` carry `sqrt(alpha_l alpha_m)`.
pub fn weighted_rows(f: &FactorBasis) -> Matrix {
    let mut u = f.basis.clone();
    for (r, a) in f.importance.iter().enumerate() {
        let s = a.sqrt().sqrt();
        u.row_mut(r).iter_mut().for_each(|x| *x *= s);
    }
    u
}

/// `IWO = 1 - sum_{l,m} sqrt(alpha_l alpha_m) (b_l . b_m)^2`, evaluated as
/// `1 - Tr(U_j U_k^T U_k U_j^T)` with `U = diag(alpha^(1/4)) B`.
pub fn iwo_pair(fj: &FactorBasis, fk: &FactorBasis) -> Result<f64, MetricsError> {
    check_ambient(&fj.basis, &fk.basis)?;
    check_importance(fj)?;
    check_importance(fk)?;
    let t = projection_trace(&weighted_rows(fj), &weighted_rows(fk)).expect("ambient checked");
    clamp_unit("IWO", 1.0 - t)
}

/// `IWR = 1 - H`, with `H` the entropy of the importances in base `R_j`.
/// A one-dimensional subspace has IWR 1.
pub fn iwr(f: &FactorBasis) -> Result<f64, MetricsError> {
    iwr_from_importance(&f.importance)
}

/// IWR of an importance vector whose length is the rank.
pub fn iwr_from_importance(alpha: &[f64]) -> Result<f64, MetricsError> {
    let r = alpha.len();
    if r <= 1 {
        return Ok(1.0);
    }
    let ln_r = (r as f64).ln();
    let h: f64 = alpha
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| -a * a.ln() / ln_r)
        .sum();
    clamp_unit("IWR", 1.0 - h)
}

/// Mean over unordered pairs `j < k` of a symmetric matrix, skipping
/// non-finite entries (failed factors).
pub fn mean_upper(m: &Matrix) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..m.rows() {
        for k in j + 1..m.cols() {
            let v = m[(j, k)];
            if v.is_finite() {
                sum += v;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Arithmetic mean of the finite entries.
pub fn mean_finite(v: &[f64]) -> Option<f64> {
    let vals: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Pairwise and per-factor metrics of a set of factor bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// `K x K`; the diagonal and pairs with a failed factor are NaN.
    #[serde(with = "nan_matrix")]
    pub pairwise_iwo: Matrix,
    #[serde(with = "nan_matrix")]
    pub pairwise_o: Matrix,
    /// NaN for failed factors.
    #[serde(with = "nan_vec")]
    pub iwr: Vec<f64>,
    pub mean_iwo: Option<f64>,
    pub mean_iwr: Option<f64>,
}

/// Computes every metric from optional bases (`None` marks a failed factor).
pub fn summarize(bases: &[Option<FactorBasis>]) -> Result<MetricSummary, MetricsError> {
    let k = bases.len();
    let mut pairwise_iwo = Matrix::from_fn(k, k, |_, _| f64::NAN);
    let mut pairwise_o = pairwise_iwo.clone();
    let mut iwr_v = vec![f64::NAN; k];
    for j in 0..k {
        let Some(fj) = &bases[j] else { continue };
        iwr_v[j] = iwr(fj)?;
        for k2 in j + 1..k {
            let Some(fk) = &bases[k2] else { continue };
            let w = iwo_pair(fj, fk)?;
            let o = orthogonality(&fj.basis, &fk.basis)?;
            pairwise_iwo[(j, k2)] = w;
            pairwise_iwo[(k2, j)] = w;
            pairwise_o[(j, k2)] = o;
            pairwise_o[(k2, j)] = o;
        }
    }
    Ok(MetricSummary {
        mean_iwo: mean_upper(&pairwise_iwo),
        mean_iwr: mean_finite(&iwr_v),
        pairwise_iwo,
        pairwise_o,
        iwr: iwr_v,
    })
}

/// `(mean IWO over unordered pairs, mean IWR)` for complete sets of bases.
pub fn aggregate(bases: &[FactorBasis]) -> Result<(f64, f64), MetricsError> {
    if bases.len() < 2 {
        return Err(MetricsError::SingleFactor);
    }
    let wrapped: Vec<Option<FactorBasis>> = bases.iter().cloned().map(Some).collect();
    let s = summarize(&wrapped)?;
    Ok((s.mean_iwo.expect("k >= 2"), s.mean_iwr.expect("k >= 1")))
}

/// JSON has no NaN; missing entries serialize as `null`.
mod nan_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

mod nan_matrix {
    use crate::linalg::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = (0..m.rows())
            .map(|r| m.row(r).iter().map(|x| x.is_finite().then_some(*x)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        let filled: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
            .collect();
        if filled.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        Ok(Matrix::from_rows(&filled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn axes(l: usize, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), l, |r, c| if idx[r] == c { 1.0 } else { 0.0 })
    }

    fn uniform(l: usize, idx: &[usize]) -> FactorBasis {
        let r = idx.len();
        FactorBasis::new(0, axes(l, idx), vec![1.0 / r as f64; r], false).unwrap()
    }

    #[test]
    fn orthogonality_examples() {
        assert_abs_diff_eq!(orthogonality(&axes(4, &[0, 1]), &axes(4, &[0, 1])).unwrap(), 1.0);
        assert_abs_diff_eq!(orthogonality(&axes(4, &[0]), &axes(4, &[1, 2])).unwrap(), 0.0);
        assert_abs_diff_eq!(orthogonality(&axes(4, &[0, 1]), &axes(4, &[1, 2])).unwrap(), 0.5);
        assert!(matches!(
            orthogonality(&axes(4, &[0]), &axes(5, &[0])),
            Err(MetricsError::AmbientMismatch(4, 5))
        ));
    }

    #[test]
    fn iwo_examples() {
        let a = uniform(4, &[0, 1]);
        assert_abs_diff_eq!(iwo_pair(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(iwo_pair(&a, &uniform(4, &[2, 3])).unwrap(), 1.0);
        assert_abs_diff_eq!(iwo_pair(&a, &uniform(4, &[1, 2])).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn iwo_rejects_unnormalized() {
        let mut a = uniform(3, &[0, 1]);
        a.importance = vec![0.5, 0.6];
        assert!(matches!(
            iwo_pair(&a, &uniform(3, &[2])),
            Err(MetricsError::UnnormalizedImportance(_))
        ));
    }

    #[test]
    fn iwr_examples() {
        assert_abs_diff_eq!(iwr_from_importance(&[0.25; 4]).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(iwr_from_importance(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(iwr_from_importance(&[1.0]).unwrap(), 1.0);
        let mut alpha = vec![0.2; 5];
        alpha.extend([0.0; 5]);
        assert_abs_diff_eq!(
            iwr_from_importance(&alpha).unwrap(),
            1.0 - 5f64.ln() / 10f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn range_violation_is_reported() {
        assert!(clamp_unit("x", 1.0 + 1e-12).is_ok());
        assert!(matches!(clamp_unit("x", 1.1), Err(MetricsError::OutOfRange { .. })));
        assert!(clamp_unit("x", f64::NAN).is_err());
    }

    #[test]
    fn pair_mean() {
        let m = Matrix::from_rows(&[[f64::NAN, 0.2, 0.4], [0.2, f64::NAN, 0.6], [0.4, 0.6, f64::NAN]]);
        assert_abs_diff_eq!(mean_upper(&m).unwrap(), 0.4, epsilon = 1e-15);
        assert!(matches!(aggregate(&[uniform(3, &[0])]), Err(MetricsError::SingleFactor)));
        let (w, r) = aggregate(&[uniform(3, &[0]), uniform(3, &[1]), uniform(3, &[2])]).unwrap();
        assert_eq!((w, r), (1.0, 1.0));
    }

    #[test]
    fn failed_factors_are_skipped() {
        let s = summarize(&[Some(uniform(3, &[0])), None, Some(uniform(3, &[0]))]).unwrap();
        assert_abs_diff_eq!(s.mean_iwo.unwrap(), 0.0);
        assert!(s.iwr[1].is_nan());
        let json = serde_json::to_string(&s).unwrap();
        let back: MetricSummary = serde_json::from_str(&json).unwrap();
        assert!(back.pairwise_iwo[(0, 1)].is_nan());
        assert_eq!(back.pairwise_iwo[(0, 2)], 0.0);
    }
}
