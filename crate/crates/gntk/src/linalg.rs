//! Dense real matrices and vectors, the Kronecker product, vectorization,
//! and symmetric solves.
//!
//! Everything is `f64` in row-major order. The Kronecker product and
//! `vec(.)` follow the column-grouped indexing convention in which
//! `vec(A H B^T) = (A (x) B) vec(H)` holds exactly (up to floating-point
//! reassociation); see [`vec_trick`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row blocking factor for the triple-loop multiply.
const MATMUL_BLOCK: usize = 64;

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from an explicit row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument {
                op: "DenseMatrix::from_vec",
                message: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from row slices; handy for literals in tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.as_ref().len(), ncols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    /// Build entrywise from a closure.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Diagonal matrix from a vector.
    pub fn from_diag(d: &DenseVector) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = d[i];
        }
        m
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Extract column `j`.
    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector::from_vec((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn diagonal(&self) -> DenseVector {
        let n = self.rows.min(self.cols);
        DenseVector::from_vec((0..n).map(|i| self.get(i, i)).collect())
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().as_slice().iter().sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Self, op: &'static str, f: F) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Scale rows by `d` on the left: `diag(d) * self`.
    pub fn scale_rows(&self, d: &DenseVector) -> Result<Self> {
        if d.len() != self.rows {
            return Err(Error::InvalidArgument {
                op: "scale_rows",
                message: format!("vector length {} vs {} rows", d.len(), self.rows),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let s = d[i];
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        Ok(out)
    }

    /// Scale columns by `d` on the right: `self * diag(d)`.
    pub fn scale_cols(&self, d: &DenseVector) -> Result<Self> {
        if d.len() != self.cols {
            return Err(Error::InvalidArgument {
                op: "scale_cols",
                message: format!("vector length {} vs {} cols", d.len(), self.cols),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            for (v, s) in row.iter_mut().zip(d.as_slice()) {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if self.cols != x.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: x.len(),
                right_cols: 1,
            });
        }
        let out = (0..self.rows)
            .map(|i| dot(self.row(i), x.as_slice()))
            .collect();
        Ok(DenseVector::from_vec(out))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// DenseVector
// ---------------------------------------------------------------------------

/// Dense `f64` vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Multiplication
// ---------------------------------------------------------------------------

/// Standard matrix product, blocked triple loop.
///
/// Rows of the output are computed independently (and in parallel for
/// large inputs) with a fixed accumulation order over `k`, so the result
/// is deterministic regardless of thread count.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = DenseMatrix::zeros(m, n);

    let work = m * k * n;
    if work >= 64 * 64 * 64 {
        c.data
            .par_chunks_mut(MATMUL_BLOCK * n)
            .enumerate()
            .for_each(|(chunk, c_rows)| {
                let i0 = chunk * MATMUL_BLOCK;
                multiply_rows(a, b, i0, c_rows, n);
            });
    } else {
        multiply_rows(a, b, 0, &mut c.data, n);
    }
    Ok(c)
}

/// Multiply rows `i0..` of `a` into the output slice `c_rows`
/// (holding `c_rows.len() / n` rows). Inner loops run `i`, then blocked
/// `k`, then `j` over contiguous rows of `b`.
fn multiply_rows(a: &DenseMatrix, b: &DenseMatrix, i0: usize, c_rows: &mut [f64], n: usize) {
    let k_dim = a.cols;
    let nrows = c_rows.len() / n;
    for kb in (0..k_dim).step_by(MATMUL_BLOCK) {
        let k_end = (kb + MATMUL_BLOCK).min(k_dim);
        for ii in 0..nrows {
            let a_row = a.row(i0 + ii);
            let c_row = &mut c_rows[ii * n..(ii + 1) * n];
            for k in kb..k_end {
                let aik = a_row[k];
                if aik == 0.0 {
                    continue;
                }
                let b_row = b.row(k);
                for (cv, bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aik * bv;
                }
            }
        }
    }
}

/// `A * B^T` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.cols,
            right_cols: b.rows,
        });
    }
    let mut c = DenseMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (j, cv) in c_row.iter_mut().enumerate() {
            *cv = dot(a_row, b.row(j));
        }
    }
    Ok(c)
}

/// `A^T * B` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left_rows: a.cols,
            left_cols: a.rows,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let (m, k, n) = (a.cols, a.rows, b.cols);
    let mut c = DenseMatrix::zeros(m, n);
    // Accumulate rank-1 updates in fixed k order.
    for kk in 0..k {
        let a_row = a.row(kk);
        let b_row = b.row(kk);
        for i in 0..m {
            let aki = a_row[i];
            if aki == 0.0 {
                continue;
            }
            let c_row = &mut c.data[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Kronecker product and vectorization
// ---------------------------------------------------------------------------

/// Kronecker product under the column-grouped convention: the entry of
/// `kron(a, b)` at row `i1 + i2 * a.rows`, column `j1 + j2 * a.cols`
/// (0-based) is `a[i1, j1] * b[i2, j2]`.
///
/// With [`vectorize`] this is exactly the pairing for which
/// `vec(A H B^T) = kron(A, B) * vec(H)`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let rows = a.rows.checked_mul(b.rows).ok_or(Error::DimensionOverflow {
        op: "kron",
        rows: a.rows,
        cols: b.rows,
    })?;
    let cols = a.cols.checked_mul(b.cols).ok_or(Error::DimensionOverflow {
        op: "kron",
        rows: a.cols,
        cols: b.cols,
    })?;
    rows.checked_mul(cols).ok_or(Error::DimensionOverflow {
        op: "kron",
        rows,
        cols,
    })?;

    let mut out = DenseMatrix::zeros(rows, cols);
    for i2 in 0..b.rows {
        for i1 in 0..a.rows {
            let r = i1 + i2 * a.rows;
            let out_row = out.row_mut(r);
            let b_row = b.row(i2);
            let a_row = a.row(i1);
            for j2 in 0..b.cols {
                let bv = b_row[j2];
                let base = j2 * a.cols;
                for j1 in 0..a.cols {
                    out_row[base + j1] = a_row[j1] * bv;
                }
            }
        }
    }
    Ok(out)
}

/// Column-stacking vectorization: element `j1 + j2 * rows` of the result
/// is `h[j1, j2]`.
pub fn vectorize(h: &DenseMatrix) -> DenseVector {
    let mut v = vec![0.0; h.rows * h.cols];
    for j2 in 0..h.cols {
        for j1 in 0..h.rows {
            v[j1 + j2 * h.rows] = h.get(j1, j2);
        }
    }
    DenseVector::from_vec(v)
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &DenseVector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::InvalidArgument {
            op: "devectorize",
            message: format!("length {} vs {rows}x{cols}", v.len()),
        });
    }
    let mut h = DenseMatrix::zeros(rows, cols);
    for j2 in 0..cols {
        for j1 in 0..rows {
            h.set(j1, j2, v[j1 + j2 * rows]);
        }
    }
    Ok(h)
}

/// Computes `A * H * B^T` by two matrix products, the cheap side of the
/// identity `vec(A H B^T) = kron(A, B) * vec(H)`.
pub fn vec_trick(a: &DenseMatrix, h: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let ah = matmul(a, h)?;
    matmul_nt(&ah, b)
}

// ---------------------------------------------------------------------------
// Symmetric solves and eigenvalues
// ---------------------------------------------------------------------------

/// Max tolerated asymmetry before symmetric routines refuse their input.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Relative residual bound guaranteed by [`solve_spd_jitter`].
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Lower-triangular Cholesky factor of an SPD matrix.
fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &DenseMatrix, y: &DenseVector) -> DenseVector {
    let n = l.rows;
    // forward: L z = y
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l.get(i, k) * z[k];
        }
        z[i] = s / l.get(i, i);
    }
    // backward: L^T x = z
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    DenseVector::from_vec(x)
}

/// Solves `(K + jitter * I) x = y` for symmetric positive definite `K`.
///
/// `K` is symmetrized first; asymmetry beyond [`SYMMETRY_TOL`] is an
/// error. A negative `jitter` selects the automatic default
/// `1e-8 * trace(K) / n`. On success the residual satisfies
/// `||(K + jitter I) x - y|| <= 1e-8 * (1 + ||y||)`; one step of
/// iterative refinement is applied if the first solve misses it.
pub fn solve_spd_jitter(k: &DenseMatrix, y: &DenseVector, jitter: f64) -> Result<DenseVector> {
    let solved = solve_spd_jitter_detailed(k, y, jitter)?;
    Ok(solved.x)
}

/// Solution plus the jitter that was actually applied.
pub struct SpdSolve {
    pub x: DenseVector,
    pub jitter: f64,
}

pub fn solve_spd_jitter_detailed(k: &DenseMatrix, y: &DenseVector, jitter: f64) -> Result<SpdSolve> {
    if k.rows != k.cols || k.rows != y.len() {
        return Err(Error::ShapeMismatch {
            op: "solve_spd_jitter",
            left_rows: k.rows,
            left_cols: k.cols,
            right_rows: y.len(),
            right_cols: 1,
        });
    }
    let asym = k.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
            tolerance: SYMMETRY_TOL,
        });
    }
    let n = k.rows;
    let jitter = if jitter < 0.0 {
        1e-8 * k.trace() / n as f64
    } else {
        jitter
    };

    let mut a = k.symmetrized();
    for i in 0..n {
        let v = a.get(i, i) + jitter;
        a.set(i, i, v);
    }
    let l = cholesky(&a)?;
    let mut x = cholesky_solve(&l, y);

    let bound = SOLVE_RESIDUAL_TOL * (1.0 + y.norm());
    let mut residual = a.matvec(&x)?.sub(y).norm();
    if residual > bound {
        // One round of iterative refinement.
        let r = y.sub(&a.matvec(&x)?);
        let dx = cholesky_solve(&l, &r);
        for i in 0..n {
            x[i] += dx[i];
        }
        residual = a.matvec(&x)?.sub(y).norm();
        if residual > bound {
            return Err(Error::ResidualTooLarge { residual, bound });
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            op: "solve_spd_jitter",
        });
    }
    Ok(SpdSolve { x, jitter })
}

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub fn sym_eigenvalues(k: &DenseMatrix) -> Result<Vec<f64>> {
    if k.rows != k.cols {
        return Err(Error::ShapeMismatch {
            op: "sym_eigenvalues",
            left_rows: k.rows,
            left_cols: k.cols,
            right_rows: k.cols,
            right_cols: k.rows,
        });
    }
    let asym = k.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
            tolerance: SYMMETRY_TOL,
        });
    }
    let mut a = k.symmetrized();
    let n = a.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 64;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j).powi(2);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            return Ok(a.diagonal().as_slice().to_vec());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k_idx in 0..n {
                    let akp = a.get(k_idx, p);
                    let akq = a.get(k_idx, q);
                    a.set(k_idx, p, c * akp - s * akq);
                    a.set(k_idx, q, s * akp + c * akq);
                }
                for k_idx in 0..n {
                    let apk = a.get(p, k_idx);
                    let aqk = a.get(q, k_idx);
                    a.set(p, k_idx, c * apk - s * aqk);
                    a.set(q, k_idx, s * apk + c * aqk);
                }
            }
        }
    }
    Err(Error::NoConvergence {
        op: "sym_eigenvalues",
        iterations: MAX_SWEEPS,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_eigvals_min(k: &DenseMatrix) -> Result<f64> {
    let eigs = sym_eigenvalues(k)?;
    eigs.into_iter()
        .fold(None::<f64>, |m, v| Some(m.map_or(v, |m| m.min(v))))
        .ok_or(Error::InvalidArgument {
            op: "sym_eigvals_min",
            message: "empty matrix".into(),
        })
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn spectral_norm_sym(k: &DenseMatrix) -> Result<f64> {
    let eigs = sym_eigenvalues(k)?;
    Ok(eigs.into_iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_passthrough() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0], [9.0, 1.0, 2.0, 3.0]]);
        let i3 = DenseMatrix::identity(3);
        assert_eq!(matmul(&i3, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_expanded() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, DenseMatrix::from_rows(&[[2.0, 1.0], [4.0, 3.0]]));
    }

    #[test]
    fn matmul_shape_contract_and_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(3, 5);
        let c = matmul(&a, &b).unwrap();
        assert_eq!((c.rows(), c.cols()), (2, 5));
        assert!(matches!(
            matmul(&b, &a),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 9, 5);
        let b = random_matrix(&mut rng, 5, 7);
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        let plain = matmul(&a, &b).unwrap();
        assert!(plain.max_abs_diff(&nt) < 1e-13);
        assert!(plain.max_abs_diff(&tn) < 1e-13);
    }

    #[test]
    fn matmul_large_parallel_matches_serial_order() {
        // Exercise the rayon path against the plain row loop.
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 130, 70);
        let b = random_matrix(&mut rng, 70, 90);
        let big = matmul(&a, &b).unwrap();
        let mut reference = DenseMatrix::zeros(130, 90);
        for i in 0..130 {
            for j in 0..90 {
                let mut s = 0.0;
                for k in 0..70 {
                    s += a.get(i, k) * b.get(k, j);
                }
                reference.set(i, j, s);
            }
        }
        assert!(big.max_abs_diff(&reference) < 1e-12);
    }

    #[test]
    fn kron_identity_case() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(kron(&i2, &i2).unwrap(), DenseMatrix::identity(4));
    }

    #[test]
    fn kron_shape() {
        let a = DenseMatrix::zeros(2, 1);
        let b = DenseMatrix::zeros(3, 2);
        let c = kron(&a, &b).unwrap();
        assert_eq!((c.rows(), c.cols()), (6, 2));
    }

    #[test]
    fn kron_matches_quadruple_loop() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 2, 2);
        let b = random_matrix(&mut rng, 2, 2);
        let c = kron(&a, &b).unwrap();
        for i1 in 0..2 {
            for i2 in 0..2 {
                for j1 in 0..2 {
                    for j2 in 0..2 {
                        let expected = a.get(i1, j1) * b.get(i2, j2);
                        assert_eq!(c.get(i1 + i2 * 2, j1 + j2 * 2), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_bilinear_in_powers_of_two() {
        let mut rng = StdRng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 2, 3);
        let lhs = kron(&a.scale(4.0), &b).unwrap();
        let rhs = kron(&a, &b).unwrap().scale(4.0);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn vectorize_column_stacking() {
        let h = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(vectorize(&h).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let c = DenseMatrix::from_rows(&[[5.0]]);
        assert_eq!(vectorize(&c).as_slice(), &[5.0]);
    }

    #[test]
    fn vectorize_round_trip() {
        let mut rng = StdRng::seed_from_u64(5);
        let h = random_matrix(&mut rng, 4, 6);
        let back = devectorize(&vectorize(&h), 4, 6).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn vec_trick_identity_passthrough() {
        let mut rng = StdRng::seed_from_u64(6);
        let h = random_matrix(&mut rng, 3, 3);
        let i3 = DenseMatrix::identity(3);
        let out = vec_trick(&i3, &h, &i3).unwrap();
        assert!(out.max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn vec_trick_shape_contract() {
        let a = DenseMatrix::zeros(4, 3);
        let h = DenseMatrix::zeros(3, 2);
        let b = DenseMatrix::zeros(5, 2);
        let out = vec_trick(&a, &h, &b).unwrap();
        assert_eq!((out.rows(), out.cols()), (4, 5));
    }

    #[test]
    fn vec_trick_matches_kronecker_route() {
        // The equivalence between the two-product route and the
        // materialized Kronecker route, over 100 random triples.
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..100 {
            let n1 = rng.gen_range(1..=8);
            let d1 = rng.gen_range(1..=8);
            let n2 = rng.gen_range(1..=8);
            let d2 = rng.gen_range(1..=8);
            let a = random_matrix(&mut rng, n1, d1);
            let h = random_matrix(&mut rng, d1, d2);
            let b = random_matrix(&mut rng, n2, d2);

            let fast = vectorize(&vec_trick(&a, &h, &b).unwrap());
            let slow = kron(&a, &b).unwrap().matvec(&vectorize(&h)).unwrap();
            assert!(
                fast.max_abs_diff(&slow) <= 1e-12,
                "max diff {}",
                fast.max_abs_diff(&slow)
            );
        }
    }

    #[test]
    fn solve_identity_and_scaled_identity() {
        let y = DenseVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = solve_spd_jitter(&DenseMatrix::identity(3), &y, 0.0).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-12);

        let k = DenseMatrix::identity(2).scale(2.0);
        let y = DenseVector::from_vec(vec![4.0, 6.0]);
        let x = solve_spd_jitter(&k, &y, 0.0).unwrap();
        assert!(x.max_abs_diff(&DenseVector::from_vec(vec![2.0, 3.0])) < 1e-12);
    }

    #[test]
    fn solve_random_spd_residual() {
        let mut rng = StdRng::seed_from_u64(9);
        let g = random_matrix(&mut rng, 6, 6);
        let k = matmul_tn(&g, &g).unwrap().add(&DenseMatrix::identity(6).scale(0.1)).unwrap();
        let y = DenseVector::from_vec((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let x = solve_spd_jitter(&k, &y, 0.0).unwrap();
        let r = k.matvec(&x).unwrap().sub(&y).norm();
        assert!(r <= 1e-8 * (1.0 + y.norm()));
    }

    #[test]
    fn solve_rejects_asymmetric_and_indefinite() {
        let bad = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        let y = DenseVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_spd_jitter(&bad, &y, 0.0),
            Err(Error::NotSymmetric { .. })
        ));

        let indef = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(
            solve_spd_jitter(&indef, &y, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn solve_auto_jitter_sentinel() {
        // Singular matrix: solvable only thanks to the automatic jitter.
        let k = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let y = DenseVector::from_vec(vec![1.0, 1.0]);
        let solved = solve_spd_jitter_detailed(&k, &y, -1.0).unwrap();
        assert!(solved.jitter > 0.0);
        assert!((solved.jitter - 1e-8 * 2.0 / 2.0).abs() < 1e-20);
        assert!(solved.x.is_finite());
    }

    #[test]
    fn eigvals_diagonal_and_identity() {
        assert!((sym_eigvals_min(&DenseMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        let d = DenseMatrix::from_diag(&DenseVector::from_vec(vec![3.0, -2.0, 5.0]));
        assert!((sym_eigvals_min(&d).unwrap() - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn eigvals_gram_is_psd() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..10 {
            let g = random_matrix(&mut rng, 5, 5);
            let gram = matmul_tn(&g, &g).unwrap();
            assert!(sym_eigvals_min(&gram).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn eigvals_match_trace_and_2x2_formula() {
        let a = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let mut eigs = sym_eigenvalues(&a).unwrap();
        eigs.sort_by(f64::total_cmp);
        // Roots of x^2 - 5x + 5.
        let disc = (25.0f64 - 20.0).sqrt();
        assert!((eigs[0] - (5.0 - disc) / 2.0).abs() < 1e-12);
        assert!((eigs[1] - (5.0 + disc) / 2.0).abs() < 1e-12);
    }
}
