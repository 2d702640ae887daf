//! Importance-weighted orthonormal bases from trained spines.
//!
//! The spine composes to `M_l = W_l W_{l+1} ... W_{L-1}` at every level, and
//! the row spaces of the `M_l` form a nested flag. We walk the spine from the
//! top, keeping an orthonormal frame `P_l` for `rowspace(M_l)` together with
//! the factor `T_l` in `M_l = T_l P_l`. Each step yields the direction that
//! is lost when moving one level down, so the final rows `b_1, ..., b_L` are
//! orthonormal and `span(b_1..b_l) = rowspace(M_l)` for every level.

use crate::gca::{GcaRun, LossProfile};
use crate::linalg::{self, dot, normalize_sign, LinalgError, Matrix, ORTHONORMAL_TOL};
use serde::{Deserialize, Serialize};

/// Relative residual loss above which the importance is spread over a full
/// basis. Zero means any positive residual triggers the adjustment.
pub const DEFAULT_RESIDUAL_TOLERANCE: f64 = 0.0;
/// Largest entry change the safety re-orthonormalization may make.
pub const REORTHONORMALIZATION_TOL: f64 = 1e-6;
/// Accepted drift of the importance sum from one.
pub const IMPORTANCE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BasisError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("re-orthonormalization moved an entry by {0:e}")]
    Unstable(f64),
    #[error("factor carries no recoverable information (L_0 - L_R = {gap:e})")]
    DegenerateFactor { gap: f64 },
    #[error("spine does not match its levels: {0}")]
    SpineShape(String),
    #[error("invalid basis: {0}")]
    Invalid(String),
}

/// Orthonormal basis of a factor's subspace with one importance per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBasis {
    pub factor_index: usize,
    /// `R_j x L`, rows ordered from most to least retained.
    pub basis: Matrix,
    pub importance: Vec<f64>,
    /// Whether the residual loss was spread over a full basis (then `R_j = L`).
    pub adjusted: bool,
}

impl FactorBasis {
    /// Builds a basis after checking orthonormality and the importance sum.
    pub fn new(factor_index: usize, basis: Matrix, importance: Vec<f64>, adjusted: bool) -> Result<Self, BasisError> {
        if basis.rows() == 0 || basis.rows() > basis.cols() {
            return Err(BasisError::Invalid(format!(
                "need 1..=L rows, got {}x{}",
                basis.rows(),
                basis.cols()
            )));
        }
        if importance.len() != basis.rows() {
            return Err(BasisError::Invalid(format!(
                "{} importances for {} rows",
                importance.len(),
                basis.rows()
            )));
        }
        let dev = basis.orthonormality_error();
        if !(dev < ORTHONORMAL_TOL) {
            return Err(BasisError::Linalg(LinalgError::NotOrthonormal { deviation: dev }));
        }
        if importance.iter().any(|a| !(*a >= 0.0)) {
            return Err(BasisError::Invalid("negative or NaN importance".into()));
        }
        let sum: f64 = importance.iter().sum();
        if (sum - 1.0).abs() > IMPORTANCE_SUM_TOL {
            return Err(BasisError::Invalid(format!("importances sum to {sum}")));
        }
        Ok(Self {
            factor_index,
            basis,
            importance,
            adjusted,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.cols()
    }
}

/// Modified Gram–Schmidt on the rows, in order. Returns the new rows and the
/// largest entry change.
pub fn gram_schmidt_rows(m: &Matrix) -> (Matrix, f64) {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for p in 0..i {
            let c = dot(out.row(p), out.row(i));
            let prev = out.row(p).to_vec();
            for (x, q) in out.row_mut(i).iter_mut().zip(&prev) {
                *x -= c * q;
            }
        }
        let n = linalg::norm(out.row(i));
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    let change = out.max_abs_diff(m);
    (out, change)
}

fn rescale_by_max(m: &mut Matrix) {
    let max = m.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if max > 0.0 && max.is_finite() {
        m.as_mut_slice().iter_mut().for_each(|x| *x /= max);
    }
}

/// Full flag basis (`L x L`) of a spine whose layer `i` maps `levels[i]` to
/// `levels[i + 1]`. Row `l - 1` is `b_l`.
pub fn flag_basis(spine: &[Matrix], levels: &[usize]) -> Result<Matrix, BasisError> {
    let l = *levels.first().ok_or_else(|| BasisError::SpineShape("no levels".into()))?;
    if spine.len() + 1 != levels.len() || *levels.last().expect("non-empty") != 1 {
        return Err(BasisError::SpineShape(format!(
            "{} layers for {} levels",
            spine.len(),
            levels.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); l];
    let mut frame = Matrix::identity(l);
    let mut tri = Matrix::identity(l);
    for (w, pair) in spine.iter().zip(levels.windows(2)) {
        let (hi, lo) = (pair[0], pair[1]);
        if w.rows() != lo || w.cols() != hi {
            return Err(BasisError::SpineShape(format!(
                "layer is {}x{}, expected {lo}x{hi}",
                w.rows(),
                w.cols()
            )));
        }
        let a = w.matmul(&tri);
        let q = linalg::reduced_qr(&a)?;
        let dropped = if hi - lo == 1 {
            Matrix::from_rows(&[linalg::null_row(&q)?])
        } else {
            let full = linalg::orthonormal_completion(&q)?;
            let mut extra = Matrix::from_fn(hi - lo, hi, |r, c| full[(lo + r, c)]);
            for r in 0..extra.rows() {
                normalize_sign(extra.row_mut(r));
            }
            extra
        };
        let lost = dropped.matmul(&frame);
        for r in 0..lost.rows() {
            rows[lo + r] = lost.row(r).to_vec();
        }
        tri = a.matmul_t(&q);
        rescale_by_max(&mut tri);
        frame = q.matmul(&frame);
    }
    rows[0] = frame.row(0).to_vec();
    let mut basis = Matrix::from_rows(&rows);
    for r in 0..l {
        normalize_sign(basis.row_mut(r));
    }
    let (clean, change) = gram_schmidt_rows(&basis);
    if !(change <= REORTHONORMALIZATION_TOL) {
        return Err(BasisError::Unstable(change));
    }
    Ok(clean)
}

/// Full flag basis of a trained run.
pub fn extract_basis(run: &GcaRun) -> Result<Matrix, BasisError> {
    flag_basis(&run.spine, &run.levels)
}

/// Importance on the first `R_j` flag rows:
/// `alpha_l = dL_l / (L_0 - L~_{R_j})`.
pub fn attach_importance(
    factor_index: usize,
    flag: &Matrix,
    profile: &LossProfile,
) -> Result<FactorBasis, BasisError> {
    let r = profile.effective_rank;
    let gap = profile.baseline - profile.loss_at_rank();
    if !(gap >= 1e-10 * profile.baseline) {
        return Err(BasisError::DegenerateFactor { gap });
    }
    let alpha = profile.deltas[..r].iter().map(|d| d / gap).collect();
    FactorBasis::new(factor_index, flag.truncate_rows(r), alpha, false)
}

/// Spreads the loss left at the effective rank evenly over all `L` rows:
/// `alpha_l = (dL_l [l <= R_j] + L~_{R_j} / L) / L_0`, then `R_j = L`.
pub fn residual_adjustment(
    factor_index: usize,
    flag: &Matrix,
    profile: &LossProfile,
) -> Result<FactorBasis, BasisError> {
    let l = flag.rows();
    let r = profile.effective_rank;
    let share = profile.loss_at_rank() / l as f64;
    let alpha = (0..l)
        .map(|i| {
            let delta = if i < r { profile.deltas[i] } else { 0.0 };
            (delta + share) / profile.baseline
        })
        .collect();
    FactorBasis::new(factor_index, flag.clone(), alpha, true)
}

/// Whether the relative residual calls for the full-basis adjustment.
pub fn needs_adjustment(profile: &LossProfile, residual_tolerance: f64) -> bool {
    profile.residual / profile.baseline > residual_tolerance
}

/// Basis and importance for one factor from its run and loss profile.
pub fn factor_basis(
    run: &GcaRun,
    profile: &LossProfile,
    residual_tolerance: f64,
) -> Result<FactorBasis, BasisError> {
    let flag = extract_basis(run)?;
    if needs_adjustment(profile, residual_tolerance) {
        residual_adjustment(run.factor_index, &flag, profile)
    } else {
        attach_importance(run.factor_index, &flag, profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(baseline: f64, rel: &[f64]) -> LossProfile {
        let raw: Vec<f64> = rel.iter().map(|v| v * baseline).collect();
        LossProfile::from_losses(baseline, &raw, 0.02).unwrap()
    }

    fn random_spine(l: usize, seed: u64) -> (Vec<Matrix>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels: Vec<usize> = (1..=l).rev().collect();
        let spine = levels
            .windows(2)
            .map(|w| Matrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        (spine, levels)
    }

    #[test]
    fn two_level_example() {
        let b = flag_basis(&[Matrix::from_rows(&[[0.0, 3.0]])], &[2, 1]).unwrap();
        assert_abs_diff_eq!(b.as_slice(), &[0.0, 1.0, 1.0, 0.0][..], epsilon = 1e-12);
    }

    #[test]
    fn axis_aligned_spine_gives_canonical_rows() {
        let l = 6;
        let levels: Vec<usize> = (1..=l).rev().collect();
        let spine: Vec<Matrix> = levels
            .windows(2)
            .map(|w| Matrix::from_fn(w[1], w[0], |r, c| if r == c { 2.5 } else { 0.0 }))
            .collect();
        let b = flag_basis(&spine, &levels).unwrap();
        assert!(b.max_abs_diff(&Matrix::identity(l)) < 1e-12);
    }

    #[test]
    fn random_spine_is_orthonormal_flag() {
        for seed in 0..5 {
            let (spine, levels) = random_spine(8, seed);
            let b = flag_basis(&spine, &levels).unwrap();
            assert!(b.orthonormality_error() < 1e-10);
            // span(b_1..b_l) contains every row of M_l
            let mut m = Matrix::identity(8);
            for (i, w) in spine.iter().enumerate() {
                m = w.matmul(&m);
                let lvl = levels[i + 1];
                let proj = b.truncate_rows(lvl);
                for r in 0..m.rows() {
                    let row = Matrix::from_rows(&[m.row(r)]);
                    let captured = proj.matmul_t(&row).frobenius_sq();
                    assert_abs_diff_eq!(captured, row.frobenius_sq(), epsilon = 1e-9 * row.frobenius_sq());
                }
            }
        }
    }

    #[test]
    fn coarse_steps_keep_the_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let levels = vec![9, 6, 3, 1];
        let spine: Vec<Matrix> = levels
            .windows(2)
            .map(|w| Matrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let b = flag_basis(&spine, &levels).unwrap();
        assert!(b.orthonormality_error() < 1e-10);
        let m = spine[2].matmul(&spine[1]).matmul(&spine[0]);
        let b1 = b.truncate_rows(1);
        let cos = b1.matmul_t(&m).frobenius_sq() / m.frobenius_sq();
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_deficient_layer_errors() {
        let spine = vec![Matrix::from_rows(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), Matrix::from_rows(&[[1.0, 1.0]])];
        assert!(matches!(
            flag_basis(&spine, &[3, 2, 1]),
            Err(BasisError::Linalg(LinalgError::RankDeficient { .. }))
        ));
    }

    #[test]
    fn uniform_deltas_give_uniform_importance() {
        let p = profile(0.7, &[0.8, 0.6, 0.4, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = attach_importance(0, &Matrix::identity(10), &p).unwrap();
        assert_eq!(f.rank(), 5);
        for a in &f.importance {
            assert_abs_diff_eq!(*a, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn uneven_and_single_deltas() {
        let p = profile(2.0, &[0.1, 0.0, 0.0]);
        let f = attach_importance(0, &Matrix::identity(3), &p).unwrap();
        assert_abs_diff_eq!(&f.importance[..], &[0.9, 0.1][..], epsilon = 1e-12);
        let p = profile(2.0, &[0.0, 0.0, 0.0]);
        let f = attach_importance(0, &Matrix::identity(3), &p).unwrap();
        assert_eq!(f.importance, vec![1.0]);
    }

    #[test]
    fn adjustment_spreads_residual() {
        let p = profile(1.0, &[0.55, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]);
        assert!(needs_adjustment(&p, DEFAULT_RESIDUAL_TOLERANCE));
        let f = residual_adjustment(3, &Matrix::identity(10), &p).unwrap();
        assert!(f.adjusted);
        assert_eq!(f.rank(), 10);
        assert_abs_diff_eq!(f.importance[0], 0.46, epsilon = 1e-12);
        assert_abs_diff_eq!(f.importance[1], 0.46, epsilon = 1e-12);
        for a in &f.importance[2..] {
            assert_abs_diff_eq!(*a, 0.01, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_residual_is_not_adjusted() {
        let p = profile(1.0, &[0.5, 0.0, 0.0]);
        assert!(!needs_adjustment(&p, DEFAULT_RESIDUAL_TOLERANCE));
    }

    #[test]
    fn uninformative_factor() {
        let p = profile(0.4, &[1.0; 4]);
        assert!(matches!(
            attach_importance(0, &Matrix::identity(4), &p),
            Err(BasisError::DegenerateFactor { .. })
        ));
        let f = residual_adjustment(0, &Matrix::identity(4), &p).unwrap();
        for a in &f.importance {
            assert_abs_diff_eq!(*a, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn factor_basis_validates() {
        assert!(FactorBasis::new(0, Matrix::identity(2), vec![0.5, 0.4], false).is_err());
        assert!(FactorBasis::new(0, Matrix::identity(2), vec![1.2, -0.2], false).is_err());
        let skew = Matrix::from_rows(&[[1.0, 0.0], [0.1, 1.0]]);
        assert!(FactorBasis::new(0, skew, vec![0.5, 0.5], false).is_err());
        assert!(FactorBasis::new(0, Matrix::identity(2), vec![0.5, 0.5], false).is_ok());
    }
}
