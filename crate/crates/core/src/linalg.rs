//! Dense real-matrix primitives: reduced QR, null-space rows, orthonormal
//! completion, Haar-random rotations and projection traces.
//!
//! Everything here works on small row-major `f64` matrices. All functions are
//! pure; none of them keep state between calls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Relative pivot tolerance below which a QR input is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Residual norm below which deflation is considered to have found nothing.
pub const NULL_TOL: f64 = 1e-10;
/// Residual norm below which a canonical axis is skipped during completion.
pub const COMPLETION_SKIP_TOL: f64 = 1e-8;
/// Largest `|B B^T - I|` entry accepted as "orthonormal rows".
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("rank deficient input: pivot {pivot} has norm {norm:e} (row norm {row_norm:e})")]
    RankDeficient {
        pivot: usize,
        norm: f64,
        row_norm: f64,
    },
    #[error("degenerate null space: best deflation residual {residual:e}")]
    DegenerateNullSpace { residual: f64 },
    #[error("rows are not orthonormal: max |B B^T - I| = {deviation:e}")]
    NotOrthonormal { deviation: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from a row-major buffer.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`, the matrix of row-by-row dot products.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "row lengths differ");
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `v^T * self` for a row vector `v`.
    pub fn left_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &coef) in v.iter().enumerate() {
            axpy(coef, self.row(r), &mut out);
        }
        out
    }

    /// Largest absolute entry of `self * self^T - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.matmul_t(self);
        let mut worst = 0.0f64;
        for i in 0..gram.rows {
            for j in 0..gram.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keeps the first `n` rows.
    pub fn truncate_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix::from_vec(n, self.cols, self.data[..n * self.cols].to_vec())
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Householder QR of a tall `m x n` matrix (`m >= n`), stored column-major in
/// `a`. Returns the thin Q (`m x n`, column-major) and the diagonal of R, with
/// signs normalized so that diag(R) >= 0.
fn householder_thin_qr(a: &mut [f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(m >= n);
    let col = |j: usize| j * m;
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag = vec![0.0; n];

    for k in 0..n {
        let x = &a[col(k) + k..col(k) + m];
        let alpha = norm(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            diag[k] = 0.0;
            vs.push(vec![0.0; m - k]);
            continue;
        }
        // reflect x onto -sign(x0) * |x| e1
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = norm(&v);
        for vi in v.iter_mut() {
            *vi /= vnorm;
        }
        diag[k] = -sign * alpha;
        for j in k..n {
            let cj = &mut a[col(j) + k..col(j) + m];
            let proj = 2.0 * dot(&v, cj);
            axpy(-proj, &v, cj);
        }
        vs.push(v);
    }

    // accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n unit columns
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[col(j) + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        for j in 0..n {
            let cj = &mut q[col(j) + k..col(j) + m];
            let proj = 2.0 * dot(v, cj);
            axpy(-proj, v, cj);
        }
    }
    for j in 0..n {
        if diag[j] < 0.0 {
            diag[j] = -diag[j];
            for v in &mut q[col(j)..col(j) + m] {
                *v = -*v;
            }
        }
    }
    (q, diag)
}

/// Reduced QR of a wide matrix `W` (`l x n`, `l <= n`), returned as the
/// orthonormal-row factor `Q` (`l x n`) with `W = T Q` for a lower triangular
/// `T` with positive diagonal. The rows of `Q` span the row space of `W`.
pub fn reduced_qr(w: &Matrix) -> Result<Matrix, LinalgError> {
    let (l, n) = (w.rows(), w.cols());
    if l == 0 || l > n {
        return Err(LinalgError::ShapeMismatch(format!(
            "reduced_qr expects a wide matrix, got {l}x{n}"
        )));
    }
    // columns of W^T, column-major, are exactly the rows of W
    let mut a = w.as_slice().to_vec();
    let (q, diag) = householder_thin_qr(&mut a, n, l);
    for (i, &d) in diag.iter().enumerate() {
        let row_norm = norm(w.row(i));
        if row_norm == 0.0 || d < RANK_TOL * row_norm {
            return Err(LinalgError::RankDeficient {
                pivot: i,
                norm: d,
                row_norm,
            });
        }
    }
    // column j of thin Q is row j of the result
    Ok(Matrix::from_vec(l, n, q))
}

/// Makes the entry of largest magnitude positive. Near-ties (within 1e-12)
/// resolve to the last tied index.
pub fn normalize_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pick = v
        .iter()
        .rposition(|x| x.abs() >= max - 1e-12 * max.max(1.0))
        .expect("non-empty vector");
    if v[pick] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Removes the components of `v` along each row of `q` (rows assumed
/// orthonormal). Two passes keep the result orthogonal to machine precision.
fn deflate(q: &Matrix, v: &mut [f64]) {
    for _ in 0..2 {
        for r in 0..q.rows() {
            let row = q.row(r);
            let c = dot(row, v);
            axpy(-c, row, v);
        }
    }
}

/// Unit row vector orthogonal to every row of `Q` (`l x (l+1)`, orthonormal
/// rows), computed by deflating canonical axes.
pub fn null_row(q: &Matrix) -> Result<Vec<f64>, LinalgError> {
    let n = q.cols();
    if q.rows() + 1 != n {
        return Err(LinalgError::ShapeMismatch(format!(
            "null_row expects l x (l+1), got {}x{}",
            q.rows(),
            n
        )));
    }
    // e_i - Q^T Q e_i = n_i * n; pick the axis with the largest residual
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        deflate(q, &mut e);
        let r = norm(&e);
        if best.as_ref().map_or(true, |(b, _)| r > *b) {
            best = Some((r, e));
        }
    }
    let (residual, mut v) = best.expect("n >= 1");
    if !(residual >= NULL_TOL) {
        return Err(LinalgError::DegenerateNullSpace { residual });
    }
    for x in v.iter_mut() {
        *x /= residual;
    }
    deflate(q, &mut v);
    let r = norm(&v);
    for x in v.iter_mut() {
        *x /= r;
    }
    normalize_sign(&mut v);
    Ok(v)
}

/// Extends the orthonormal rows of `B` (`r x L`) to a full orthonormal basis
/// of `R^L`. The first `r` rows of the result are `B` unchanged; the rest come
/// from Gram–Schmidt on the canonical axes in index order.
pub fn orthonormal_completion(b: &Matrix) -> Result<Matrix, LinalgError> {
    let (r, l) = (b.rows(), b.cols());
    if r > l {
        return Err(LinalgError::ShapeMismatch(format!(
            "cannot complete {r} rows in dimension {l}"
        )));
    }
    let deviation = b.orthonormality_error();
    if deviation >= ORTHONORMAL_TOL {
        return Err(LinalgError::NotOrthonormal { deviation });
    }
    let mut out = b.as_slice().to_vec();
    let mut count = r;
    for axis in 0..l {
        if count == l {
            break;
        }
        let mut e = vec![0.0; l];
        e[axis] = 1.0;
        let current = Matrix::from_vec(count, l, out.clone());
        deflate(&current, &mut e);
        let nrm = norm(&e);
        if nrm < COMPLETION_SKIP_TOL {
            continue;
        }
        out.extend(e.iter().map(|x| x / nrm));
        count += 1;
    }
    debug_assert_eq!(count, l);
    Ok(Matrix::from_vec(l, l, out))
}

/// Haar-distributed orthogonal matrix from a ChaCha8 stream seeded with `seed`.
pub fn random_orthogonal(dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_orthogonal_with(dim, &mut rng)
}

/// Haar-distributed orthogonal matrix: QR of an i.i.d. standard Gaussian
/// matrix with the signs of diag(R) absorbed into Q.
pub fn random_orthogonal_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    assert!(dim >= 1, "dimension must be positive");
    loop {
        let mut a: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
        let (q, diag) = householder_thin_qr(&mut a, dim, dim);
        // a Gaussian matrix is singular with probability zero
        if diag.iter().all(|&d| d > 1e-12) {
            // Q is column-major; transpose into row-major storage
            return Matrix::from_fn(dim, dim, |r, c| q[c * dim + r]);
        }
    }
}

/// `Tr(A B^T B A^T)`, i.e. the sum of squared entries of `A B^T`.
pub fn projection_trace(a: &Matrix, b: &Matrix) -> Result<f64, LinalgError> {
    if a.cols() != b.cols() {
        return Err(LinalgError::ShapeMismatch(format!(
            "ambient dimensions {} and {} differ",
            a.cols(),
            b.cols()
        )));
    }
    Ok(a.matmul_t(b).frobenius_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    // LU with partial pivoting, test-only
    fn det(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap())
                .unwrap();
            if a[(p, k)] == 0.0 {
                return 0.0;
            }
            if p != k {
                for c in 0..n {
                    let t = a[(k, c)];
                    a[(k, c)] = a[(p, c)];
                    a[(p, c)] = t;
                }
                det = -det;
            }
            det *= a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for c in k..n {
                    let v = a[(k, c)];
                    a[(i, c)] -= f * v;
                }
            }
        }
        det
    }

    fn row_space_residual(q: &Matrix, v: &[f64]) -> f64 {
        let mut r = v.to_vec();
        deflate(q, &mut r);
        norm(&r)
    }

    #[test]
    fn qr_axis_aligned() {
        let w = Matrix::from_rows(&[[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        let q = reduced_qr(&w).unwrap();
        assert!(q.max_abs_diff(&Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])) < 1e-15);
    }

    #[test]
    fn qr_single_row() {
        let q = reduced_qr(&Matrix::from_rows(&[[1.0, 1.0]])).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((q[(0, 0)] - h).abs() < 1e-15 && (q[(0, 1)] - h).abs() < 1e-15);
    }

    #[test]
    fn qr_random_gaussian_spans_input() {
        let w = gaussian(4, 5, 7);
        let q = reduced_qr(&w).unwrap();
        assert!(q.orthonormality_error() < 1e-10);
        for r in 0..4 {
            assert!(row_space_residual(&q, w.row(r)) < 1e-9);
        }
    }

    #[test]
    fn qr_rank_deficient() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]);
        assert!(matches!(reduced_qr(&w), Err(LinalgError::RankDeficient { pivot: 1, .. })));
        let z = Matrix::from_rows(&[[0.0, 0.0]]);
        assert!(matches!(reduced_qr(&z), Err(LinalgError::RankDeficient { pivot: 0, .. })));
    }

    #[test]
    fn null_row_examples() {
        let q = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(null_row(&q).unwrap(), vec![0.0, 0.0, 1.0]);

        let h = 1.0 / 2f64.sqrt();
        let v = null_row(&Matrix::from_rows(&[[h, h]])).unwrap();
        assert!((v[0] + h).abs() < 1e-15 && (v[1] - h).abs() < 1e-15);
    }

    #[test]
    fn null_row_random_9x10() {
        let q = reduced_qr(&gaussian(9, 10, 3)).unwrap();
        let v = null_row(&q).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);
        for r in 0..9 {
            assert!(dot(q.row(r), &v).abs() < 1e-10);
        }
        assert_eq!(null_row(&q).unwrap(), v);
    }

    #[test]
    fn null_row_errors() {
        let q = Matrix::from_rows(&[[f64::NAN, 0.0]]);
        assert!(matches!(null_row(&q), Err(LinalgError::DegenerateNullSpace { .. })));
        let square = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(null_row(&square), Err(LinalgError::ShapeMismatch(_))));
    }

    #[test]
    fn random_orthogonal_properties() {
        let one = random_orthogonal(1, 5);
        assert!((one[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(random_orthogonal(5, 11), random_orthogonal(5, 11));
        let r = random_orthogonal(10, 2);
        assert!(r.orthonormality_error() < 1e-9);
        assert!((det(&r).abs() - 1.0).abs() < 1e-6);
        assert!(r.max_abs_diff(&random_orthogonal(10, 3)) > 1e-3);
    }

    #[test]
    fn completion_examples() {
        let g = orthonormal_completion(&Matrix::from_rows(&[[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(g, Matrix::identity(3));
        let g = orthonormal_completion(&Matrix::from_rows(&[[0.0, 1.0, 0.0]])).unwrap();
        assert_eq!(
            g,
            Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        );
        let b = reduced_qr(&gaussian(3, 10, 9)).unwrap();
        let g = orthonormal_completion(&b).unwrap();
        assert!(g.orthonormality_error() < 1e-9);
        assert_eq!(g.truncate_rows(3), b);
    }

    #[test]
    fn completion_rejects_non_orthonormal() {
        let b = Matrix::from_rows(&[[1.0, 1.0, 0.0]]);
        assert!(matches!(
            orthonormal_completion(&b),
            Err(LinalgError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn projection_trace_counts_shared_axes() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(projection_trace(&a, &b).unwrap(), 1.0);
        assert!(projection_trace(&a, &Matrix::zeros(1, 2)).is_err());
    }
}
