//! Dense row-major matrices and a cyclic Jacobi eigensolver for the small
//! symmetric matrices (d ≲ 100) that show up as empirical covariances.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Max-abs asymmetry accepted by [`SpectralDecomposition::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues with magnitude below this (relative to the spectral
/// radius, floored at 1) are treated as round-off and clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
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
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, v.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &w) in v.iter().enumerate() {
            axpy(w, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(r));
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |a_ij − a_ji|; infinite for non-square input.
    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape { expected, found })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Eigendecomposition `A = U diag(σ) Uᵀ` of a symmetric positive semidefinite
/// matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    eigenvectors: Matrix,
}

impl SpectralDecomposition {
    /// Decomposes a symmetric PSD matrix with cyclic Jacobi rotations.
    pub fn new(matrix: &Matrix) -> Result<Self> {
        if matrix.rows() == 0 {
            return Err(Error::Empty("matrix"));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        let asym = matrix.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        let n = matrix.rows();
        let mut a = Matrix::from_fn(n, n, |r, c| 0.5 * (matrix[(r, c)] + matrix[(c, r)]));
        let mut v = Matrix::identity(n);
        jacobi(&mut a, &mut v);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let raw: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
        let radius = raw.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mut eigenvalues = Vec::with_capacity(n);
        for x in raw {
            if x < 0.0 {
                if -x > CLAMP_TOL * radius {
                    return Err(Error::NegativeEigenvalue(x));
                }
                eigenvalues.push(0.0);
            } else {
                eigenvalues.push(x);
            }
        }
        let eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        Ok(SpectralDecomposition { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending, nonnegative.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Coordinates of `v` in the eigenbasis, `Uᵀ v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.eigenvectors.transpose_mul_vec(v)
    }

    /// `Σ_j coeffs[j] u_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.eigenvectors.mul_vec(coeffs)
    }

    /// `U diag(f(σ)) Uᵀ v` for a scalar spectral function `f`.
    pub fn apply_fn(&self, v: &[f64], mut f: impl FnMut(f64) -> f64) -> Result<Vec<f64>> {
        let mut c = self.project(v)?;
        for (cj, &s) in c.iter_mut().zip(&self.eigenvalues) {
            *cj *= f(s);
        }
        self.combine(&c)
    }

    /// `U diag(σ) Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let u = &self.eigenvectors;
        Matrix::from_fn(n, n, |r, c| {
            (0..n).map(|j| u[(r, j)] * self.eigenvalues[j] * u[(c, j)]).sum()
        })
    }
}

fn off_diagonal_sq(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for r in 0..n {
        for c in r + 1..n {
            s += a[(r, c)] * a[(r, c)];
        }
    }
    2.0 * s
}

fn jacobi(a: &mut Matrix, v: &mut Matrix) {
    let n = a.rows();
    let total = a.frobenius_norm();
    if total == 0.0 {
        return;
    }
    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_sq(a) <= (eps * total) * (eps * total) {
            return;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Skip rotations that cannot change the diagonal in floating point.
                if apq.abs() < eps * 1e-3 * (app.abs() + aqq.abs()).max(f64::MIN_POSITIVE) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let t = 1.0 / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[(p, r)];
                    let aqr = a[(q, r)];
                    a[(p, r)] = c * apr - s * aqr;
                    a[(q, r)] = s * apr + c * aqr;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_offdiag_identity_error(u: &Matrix) -> f64 {
        let utu = u.transpose().matmul(u).unwrap();
        let n = u.rows();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((utu[(r, c)] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let d = SpectralDecomposition::new(&Matrix::identity(3)).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 1.0, 1.0]);
        assert!(max_offdiag_identity_error(d.eigenvectors()) < 1e-12);
    }

    #[test]
    fn diagonal_is_sorted_with_axis_vectors() {
        let d = SpectralDecomposition::new(&Matrix::from_diagonal(&[2.0, 1.0])).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 2.0]);
        let u = d.eigenvectors();
        assert_eq!(u[(1, 0)].abs(), 1.0);
        assert_eq!(u[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let d = SpectralDecomposition::new(&m).unwrap();
        assert!((d.eigenvalues()[0] - 1.0).abs() < 1e-14);
        assert!((d.eigenvalues()[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_non_finite() {
        let m = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(SpectralDecomposition::new(&m), Err(Error::NotSymmetric { .. })));
        let m = Matrix::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]).unwrap();
        assert!(matches!(SpectralDecomposition::new(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tiny_asymmetry_is_accepted() {
        let m = Matrix::from_rows(&[[1.0, 0.5 + 1e-12], [0.5, 1.0]]).unwrap();
        assert!(SpectralDecomposition::new(&m).is_ok());
    }

    #[test]
    fn clamps_round_off_and_rejects_indefinite() {
        // rank-one outer product: exact zero eigenvalue may come out as -1e-17
        let x = [0.6, 0.8, 0.0];
        let m = Matrix::from_fn(3, 3, |r, c| x[r] * x[c]);
        let d = SpectralDecomposition::new(&m).unwrap();
        assert!(d.eigenvalues().iter().all(|&s| s >= 0.0));

        let m = Matrix::from_diagonal(&[1.0, -1e-3]);
        assert!(matches!(SpectralDecomposition::new(&m), Err(Error::NegativeEigenvalue(_))));
    }

    #[test]
    fn zero_matrix_decomposes() {
        let d = SpectralDecomposition::new(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(d.eigenvalues(), &[0.0; 4]);
    }
}
