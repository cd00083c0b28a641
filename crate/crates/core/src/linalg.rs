//! Dense square matrices for the small (d = 2, 3) tensors of the model.
//!
//! Storage is row-major. Symmetry is never enforced structurally, so drift
//! away from symmetry stays observable.

use crate::error::{Result, RodError};
use crate::scalar::Scalar;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(n: usize) -> Self {
        Mat {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    /// Builds from row-major data; panics if `data.len() != n * n`.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data must hold n*n entries");
        Mat { n, data }
    }

    pub fn from_rows<const N: usize>(rows: [[T; N]; N]) -> Self {
        Mat {
            n: N,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// Outer product `u ⊗ v`.
    pub fn outer(u: &[T], v: &[T]) -> Self {
        assert_eq!(u.len(), v.len());
        let n = u.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = u[i] * v[j];
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Mat {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// Frobenius inner product `A : B = Σ A_ij B_ij`.
    pub fn frob(&self, other: &Self) -> T {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn frob_norm(&self) -> T {
        self.frob(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// `max_ij |A_ij − A_ji|`.
    pub fn asymmetry(&self) -> T {
        let n = self.n;
        let mut worst = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    pub fn sym_part(&self) -> Self {
        let half = T::lit(0.5);
        (self + &self.transpose()).scale(half)
    }

    pub fn skew_part(&self) -> Self {
        let half = T::lit(0.5);
        (self - &self.transpose()).scale(half)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// `out = A x`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        let n = self.n;
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                s += x[i] * self.data[i * n + j] * x[j];
            }
        }
        s
    }

    /// Upper triangle in row order: `m11, m12, …, m1d, m22, …, mdd`.
    pub fn upper_triangle(&self) -> Vec<T> {
        let n = self.n;
        let mut v = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                v.push(self.data[i * n + j]);
            }
        }
        v
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> T {
        let n = self.n;
        if n == 2 {
            return self.data[0] * self.data[3] - self.data[1] * self.data[2];
        }
        let mut a = self.data.clone();
        let mut det = T::one();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r1, &r2| {
                    a[r1 * n + col]
                        .abs()
                        .partial_cmp(&a[r2 * n + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if a[pivot * n + col] == T::zero() {
                return T::zero();
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in (col + 1)..n {
                let f = a[r * n + col] / p;
                for j in col..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= f * v;
                }
            }
        }
        det
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.n;
        if n == 2 {
            let det = self.det();
            if det == T::zero() || !det.is_finite() {
                return Err(RodError::Numerical("singular 2x2 matrix".into()));
            }
            let [a, b, c, d] = [self.data[0], self.data[1], self.data[2], self.data[3]];
            return Ok(Mat::from_rows([[d / det, -b / det], [-c / det, a / det]]));
        }
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r1, &r2| {
                    a[r1 * n + col]
                        .abs()
                        .partial_cmp(&a[r2 * n + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if a[pivot * n + col] == T::zero() {
                return Err(RodError::Numerical("singular matrix".into()));
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                    inv.swap(col * n + j, pivot * n + j);
                }
            }
            let p = a[col * n + col];
            for j in 0..n {
                a[col * n + j] /= p;
                inv[col * n + j] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let av = a[col * n + j];
                    let iv = inv[col * n + j];
                    a[r * n + j] -= f * av;
                    inv[r * n + j] -= f * iv;
                }
            }
        }
        Ok(Mat { n, data: inv })
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Self> {
        let n = self.n;
        let mut l = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l.data[i * n + k] * l.data[j * n + k];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(RodError::Domain(
                            "matrix is not positive definite".into(),
                        ));
                    }
                    l.data[i * n + i] = s.sqrt();
                } else {
                    l.data[i * n + j] = s / l.data[j * n + j];
                }
            }
        }
        Ok(l)
    }

    /// Eigen-decomposition of the symmetric part by cyclic Jacobi rotations.
    pub fn sym_eigen(&self) -> SymEigen<T> {
        let n = self.n;
        let mut a = self.sym_part();
        let mut v = Self::identity(n);
        let tiny = T::epsilon() * T::epsilon();
        for _sweep in 0..64 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            let scale: T = a.data.iter().map(|&x| x * x).sum();
            if off <= tiny * scale || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
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
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            a[(i, i)]
                .partial_cmp(&a[(j, j)])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, new_col)] = v[(k, old_col)];
            }
        }
        SymEigen { values, vectors }
    }

    /// Symmetric square root `S` with `S S = A` for symmetric PSD `A`.
    ///
    /// Eigenvalues down to `-neg_tol` are clamped to zero; anything more
    /// negative is a domain error.
    pub fn sym_sqrt(&self, neg_tol: T) -> Result<Self> {
        let eig = self.sym_eigen();
        let n = self.n;
        let mut roots = Vec::with_capacity(n);
        for &l in &eig.values {
            if l < -neg_tol || !l.is_finite() {
                return Err(RodError::Numerical(format!(
                    "matrix is not positive semidefinite (eigenvalue {l:e})"
                )));
            }
            roots.push(l.max(T::zero()).sqrt());
        }
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = T::zero();
                for k in 0..n {
                    s += eig.vectors[(i, k)] * roots[k] * eig.vectors[(j, k)];
                }
                out[(i, j)] = s;
            }
        }
        Ok(out)
    }

    pub fn max_eigenvalue_sym(&self) -> T {
        *self.sym_eigen().values.last().expect("non-empty matrix")
    }

    pub fn min_eigenvalue_sym(&self) -> T {
        self.sym_eigen().values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ascending eigenvalues with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

impl<'a, T: Scalar> Add<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;
    fn add(self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.n, rhs.n);
        Mat {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<'a, T: Scalar> Sub<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;
    fn sub(self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.n, rhs.n);
        Mat {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<'a, T: Scalar> Mul<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;
    fn mul(self, rhs: &Mat<T>) -> Mat<T> {
        self.matmul(rhs)
    }
}

impl<T: Scalar> Neg for &Mat<T> {
    type Output = Mat<T>;
    fn neg(self) -> Mat<T> {
        self.map(|v| -v)
    }
}

impl<T: Scalar> AddAssign<&Mat<T>> for Mat<T> {
    fn add_assign(&mut self, rhs: &Mat<T>) {
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl<T: Scalar> SubAssign<&Mat<T>> for Mat<T> {
    fn sub_assign(&mut self, rhs: &Mat<T>) {
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_det_3x3() {
        let m: Mat<f64> = Mat::from_rows([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv);
        assert!((&prod - &Mat::identity(3)).max_abs() < 1e-14);
        // cofactor expansion
        let det = 4.0 * (3.0 * 2.0 - 0.2 * 0.2) - 1.0 * (1.0 * 2.0 - 0.2 * 0.5)
            + 0.5 * (1.0 * 0.2 - 3.0 * 0.5);
        assert!((m.det() - det).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_symmetric_matrix() {
        let m = Mat::from_rows([[2.0, -1.0, 0.3], [-1.0, 2.0, 0.1], [0.3, 0.1, 1.0]]);
        let e = m.sym_eigen();
        let mut rec = Mat::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                rec[(i, j)] = (0..3)
                    .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                    .sum();
            }
        }
        assert!((&rec - &m).max_abs() < 1e-13);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = Mat::from_rows([[0.7, 0.2], [0.2, 0.3]]);
        let s = m.sym_sqrt(1e-12).unwrap();
        assert!((&s.matmul(&s) - &m).max_abs() < 1e-15);
        assert!(s.asymmetry() < 1e-16);
    }

    #[test]
    fn sym_sqrt_rejects_indefinite() {
        let m = Mat::from_rows([[1.0, 0.0], [0.0, -0.1]]);
        assert!(m.sym_sqrt(1e-12).is_err());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_rows([[1.0, 2.0], [2.0, 1.0]]);
        assert!(m.cholesky().is_err());
        let l = Mat::from_rows([[4.0, 2.0], [2.0, 3.0]]).cholesky().unwrap();
        assert!((&l.matmul(&l.transpose()) - &Mat::from_rows([[4.0, 2.0], [2.0, 3.0]])).max_abs() < 1e-15);
    }
}
