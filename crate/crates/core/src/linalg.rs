//! Dense row-major matrices and principal component analysis.
//!
//! Everything here is 64-bit and serial so that results are bit-reproducible
//! from run to run. The product kernels accumulate every output entry in the
//! same inner-index order, which the trainer relies on to keep the weights of
//! symmetrically initialized neurons bitwise equal.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("pca needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("requested {k} components from {d}-dimensional data")]
    TooManyComponents { k: usize, d: usize },
    #[error("all points are identical (zero variance)")]
    ZeroVariance,
}

/// Row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps row-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_rows",
                    left: (i, r.len()),
                    right: (rows.len(), cols),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; an n x 0 matrix has n empty rows.
        (0..self.rows).map(move |r| self.row(r))
    }

    /// New matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_acc(
            &self.data,
            self.rows,
            self.cols,
            &other.data,
            other.cols,
            &mut out.data,
        );
        Ok(out)
    }

    /// Largest absolute entry-wise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `out += a * b` with `a` (m x k) and `b` (k x n), all row-major.
///
/// Loop order is i, p, j: each output entry sums its k products in
/// increasing `p`, independent of its column, and the inner loop is a
/// contiguous axpy the compiler can vectorize without reassociation.
/// Zero entries of `a` are skipped; adding `0 * b` would not change a
/// finite accumulator anyway.
pub(crate) fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, sorted nonincreasing.
    pub values: Vec<f64>,
    /// Eigenvectors as rows, aligned with `values`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps over all (p, q) pairs in row order until the off-diagonal
/// Frobenius norm drops below `1e-12` times the Frobenius norm of the input
/// (or below `1e-12` outright for an all-zero input). Rotation angles use
/// the numerically stable tangent formula.
pub fn jacobi_eigen(sym: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "jacobi_eigen",
            left: sym.shape(),
            right: sym.shape(),
        });
    }
    let mut a = sym.clone();
    // Rows of `v` are the eigenvectors (v = Qᵀ).
    let mut v = Matrix::identity(n);
    let total = norm(a.as_slice());
    let tol = if total > 0.0 { JACOBI_TOL * total } else { JACOBI_TOL };

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[(p, q)] * a[(p, q)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) >= tol && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = v.select_rows(&order);
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Applies the Jacobi rotation J(p, q, θ) as a ← Jᵀ a J and accumulates
/// the rotation into the eigenvector rows.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    let (vp, vq) = {
        let cols = v.cols();
        let data = v.as_mut_slice();
        let (lo, hi) = data.split_at_mut(q * cols);
        (&mut lo[p * cols..(p + 1) * cols], &mut hi[..cols])
    };
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Principal axes of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// k x d, orthonormal rows.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.rows()
    }

    /// Maps projected coordinates back to input space: `y * components + mean`.
    pub fn reconstruct(&self, projected: &Matrix) -> Result<Matrix, LinalgError> {
        let mut out = projected.matmul(&self.components)?;
        for r in 0..out.rows() {
            for (o, m) in out.row_mut(r).iter_mut().zip(&self.mean) {
                *o += m;
            }
        }
        Ok(out)
    }
}

/// Sample covariance (divides by n − 1) around `mean`.
pub fn covariance(points: &Matrix, mean: &[f64]) -> Matrix {
    let (n, d) = points.shape();
    let mut centered = points.clone();
    for r in 0..n {
        for (x, m) in centered.row_mut(r).iter_mut().zip(mean) {
            *x -= m;
        }
    }
    // Cᵀ C accumulated one point at a time, upper triangle only.
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let x = centered.row(r);
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut cov.as_mut_slice()[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += xi * x[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub fn column_means(points: &Matrix) -> Vec<f64> {
    let (n, d) = points.shape();
    let mut mean = vec![0.0; d];
    for row in points.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Fits the top-`k` principal axes of the rows of `points`.
///
/// Each component is flipped so that its largest-magnitude entry is positive
/// (the lowest index wins ties).
pub fn pca_fit(points: &Matrix, k: usize) -> Result<PcaBasis, LinalgError> {
    let (n, d) = points.shape();
    if k > d {
        return Err(LinalgError::TooManyComponents { k, d });
    }
    if n < 2 {
        return Err(LinalgError::TooFewPoints(n));
    }
    let mean = column_means(points);
    let cov = covariance(points, &mean);
    if (0..d).all(|i| cov[(i, i)] == 0.0) {
        return Err(LinalgError::ZeroVariance);
    }
    let eig = jacobi_eigen(&cov)?;
    let mut components = eig.vectors.select_rows(&(0..k).collect::<Vec<_>>());
    for r in 0..k {
        canonical_sign(components.row_mut(r));
    }
    let explained_variance = eig.values[..k].iter().map(|&v| v.max(0.0)).collect();
    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
    })
}

fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// `(points − mean) · componentsᵀ`.
pub fn pca_project(basis: &PcaBasis, points: &Matrix) -> Result<Matrix, LinalgError> {
    if points.cols() != basis.dim() {
        return Err(LinalgError::DimensionMismatch {
            op: "pca_project",
            left: points.shape(),
            right: basis.components.shape(),
        });
    }
    let k = basis.k();
    let mut out = Matrix::zeros(points.rows(), k);
    let mut centered = vec![0.0; basis.dim()];
    for r in 0..points.rows() {
        for ((c, x), m) in centered.iter_mut().zip(points.row(r)).zip(&basis.mean) {
            *c = x - m;
        }
        for j in 0..k {
            out[(r, j)] = dot(&centered, basis.components.row(j));
        }
    }
    Ok(out)
}
