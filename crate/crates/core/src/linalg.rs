//! Dense small-matrix primitives.
//!
//! Everything here works on [`Mat`], a row-major `f64` matrix. The routines
//! target accuracy on matrices up to a few hundred rows and columns: SVD is a
//! one-sided Jacobi sweep, SPD solves go through Cholesky. Shape errors in the
//! arithmetic helpers (`matmul`, `add`, ...) are programming errors and panic;
//! the decompositions return [`Result`].

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Row-major dense matrix: `data[i * cols + j]` is entry `(i, j)`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.5e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Mat::new",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// # Panics
    /// Panics on ragged rows.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Matrix with i.i.d. `N(0, std²)` entries.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Copy of the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Mat {
        assert!(k <= self.cols);
        Mat::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`.
    ///
    /// # Panics
    /// Panics if the inner dimensions differ.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.rows, other.rows,
            "t_matmul {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.cols,
            "matmul_t {}x{} by ({}x{})ᵀ",
            self.rows, self.cols, other.rows, other.cols
        );
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> Mat {
        self.t_matmul(self)
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &Mat) -> Mat {
        self.zip_map(other, "axpy", |a, b| a + alpha * b)
    }

    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Mat {
        self.map(|v| v * alpha)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    fn zip_map(&self, other: &Mat, op: &str, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// `self + delta · I` for a square matrix.
    pub fn add_diag(&self, delta: f64) -> Mat {
        assert_eq!(self.rows, self.cols, "add_diag on non-square matrix");
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] += delta;
        }
        out
    }

    /// Right-multiplies by `diag(values)` (scales column `j` by `values[j]`).
    pub fn scale_columns(&self, values: &[f64]) -> Mat {
        assert_eq!(values.len(), self.cols);
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * values[j])
    }

    /// Left-multiplies by `diag(values)` (scales row `i` by `values[i]`).
    pub fn scale_rows(&self, values: &[f64]) -> Mat {
        assert_eq!(values.len(), self.rows);
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * values[i])
    }

    /// Frobenius inner product `trace(selfᵀ other)`.
    pub fn inner(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "inner product shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(svd(self)?.s.first().copied().unwrap_or(0.0))
    }

    /// Relative Frobenius distance `‖self − other‖ / max(‖other‖, tiny)`.
    pub fn rel_diff(&self, other: &Mat) -> f64 {
        self.sub(other).frobenius_norm() / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin singular value decomposition `M = U · diag(S) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Mat,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `cols × k` with orthonormal columns.
    pub v: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        self.u.scale_columns(&self.s).matmul_t(&self.v)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Singular values come out sorted nonincreasing; ties keep the column order
/// the sweep produced, so callers should compare reconstructed products rather
/// than individual singular vectors.
pub fn svd(m: &Mat) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("svd input has non-finite entries".into()));
    }
    if m.rows < m.cols {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult { u: t.v, s: t.s, v: t.u });
    }
    let (rows, cols) = m.shape();
    // Work on columns as contiguous vectors.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (rows as f64);
    let mut converged = cols < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi SVD of a {rows}x{cols} matrix did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let zero_tol = smax * f64::EPSILON * (rows.max(cols) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut pending = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > zero_tol && norms[j] > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            pending.push(k);
        }
    }
    for k in pending {
        let fill = orthonormal_complement(&u_cols, k, rows);
        u_cols[k] = fill;
    }

    let mut u = Mat::zeros(rows, cols);
    let mut vm = Mat::zeros(cols, cols);
    for (k, &j) in order.iter().enumerate() {
        u.set_column(k, &u_cols[k]);
        vm.set_column(k, &v[j]);
    }
    Ok(SvdResult { u, s, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to every nonzero column in `basis` except slot `skip`.
fn orthonormal_complement(basis: &[Vec<f64>], skip: usize, dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for e in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            for (k, b) in basis.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj = dot(&cand, b);
                if proj != 0.0 {
                    for (c, bv) in cand.iter_mut().zip(b) {
                        *c -= proj * bv;
                    }
                }
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        if nrm > best_norm {
            best_norm = nrm;
            best = cand;
        }
        if nrm > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Best rank-`r` approximation of `m`, returned as balanced factors
/// `L = U_r Σ_r^{1/2}` and `R = V_r Σ_r^{1/2}` so that `L Rᵀ` is the truncation.
pub fn best_rank_r(m: &Mat, r: usize) -> Result<(Mat, Mat)> {
    let kmax = m.rows.min(m.cols);
    if r > kmax {
        return Err(Error::InvalidArgument(format!(
            "rank {r} exceeds min dimension {kmax} of a {} matrix",
            m.shape_str()
        )));
    }
    if r == 0 {
        return Ok((Mat::zeros(m.rows, 0), Mat::zeros(m.cols, 0)));
    }
    let dec = svd(m)?;
    let half: Vec<f64> = dec.s[..r].iter().map(|s| s.sqrt()).collect();
    Ok((
        dec.u.leading_columns(r).scale_columns(&half),
        dec.v.leading_columns(r).scale_columns(&half),
    ))
}

/// Partial Frobenius norm `‖M‖_{F,r}`: the ℓ₂ norm of the top `r` singular values.
pub fn partial_frobenius(m: &Mat, r: usize) -> Result<f64> {
    let kmax = m.rows.min(m.cols);
    if r > kmax {
        return Err(Error::InvalidArgument(format!(
            "order {r} exceeds min dimension {kmax}"
        )));
    }
    let s = svd(m)?.s;
    Ok(s[..r].iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(g: &Mat, what: &str) -> Result<Mat> {
    let n = g.rows;
    if g.cols != n {
        return Err(shape_err("cholesky", "square matrix", g.shape_str()));
    }
    let scale = g.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
            }
        }
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // Pivots this small relative to the matrix scale are numerically singular.
        if d.is_nan() || d <= scale * f64::EPSILON * n as f64 {
            return Err(Error::NotPositiveDefinite {
                what: what.to_string(),
                pivot: j,
                value: d,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `G X = rhs` for symmetric positive definite `G`.
pub fn spd_solve(g: &Mat, rhs: &Mat) -> Result<Mat> {
    spd_solve_named(g, rhs, "Gram matrix")
}

/// [`spd_solve`] with a caller-supplied name for `G` in error messages.
pub fn spd_solve_named(g: &Mat, rhs: &Mat, what: &str) -> Result<Mat> {
    if g.rows != rhs.rows {
        return Err(shape_err(
            "spd_solve",
            format!("rhs with {} rows", g.rows),
            rhs.shape_str(),
        ));
    }
    let l = cholesky(g, what)?;
    let n = g.rows;
    let mut x = rhs.clone();
    for c in 0..rhs.cols {
        // Forward substitution L y = b.
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // Back substitution Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(g: &Mat, what: &str) -> Result<Mat> {
    spd_solve_named(g, &Mat::identity(g.rows), what)
}

/// Matrix with orthonormal columns spanning a Gaussian draw (QR via SVD).
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Mat> {
    assert!(cols <= rows, "need cols <= rows for orthonormal columns");
    let g = Mat::gaussian(rows, cols, 1.0, rng);
    let dec = svd(&g)?;
    Ok(dec.u.matmul_t(&dec.v))
}

/// Inverse of a general square matrix by Gauss-Jordan with partial pivoting.
pub fn inverse(m: &Mat) -> Result<Mat> {
    let n = m.rows;
    if m.cols != n {
        return Err(shape_err("inverse", "square matrix", m.shape_str()));
    }
    let mut a = m.clone();
    let mut inv = Mat::identity(n);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).unwrap())
            .unwrap();
        if a[(pivot, col)].abs() <= scale * f64::EPSILON * n as f64 {
            return Err(Error::NumericalFailure("matrix is singular".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.data.swap(pivot * n + j, col * n + j);
                inv.data.swap(pivot * n + j, col * n + j);
            }
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= f * a[(col, j)];
                inv[(i, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}
