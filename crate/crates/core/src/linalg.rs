//! Small dense linear algebra.
//!
//! Matrices here are tiny (a handful of rows, at most a few hundred
//! columns), so everything is built on one-sided Jacobi rotations, which are
//! accurate to working precision and fully deterministic.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

const MAX_SWEEPS: usize = 80;

/// Default relative cut-off below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    /// `rows × k`, orthonormal columns (zero columns for σ = 0).
    pub u: DenseMatrix<T>,
    /// Length `k = min(rows, cols)`, not sorted.
    pub singular_values: Vec<T>,
    /// `cols × k`, orthonormal columns.
    pub v: DenseMatrix<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix of shape {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] = out.data[i * other.cols + j] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| crate::real::dot(self.row(r), x))
            .collect()
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::NonFinite {
                row: k / self.cols,
                col: k % self.cols,
            }),
            None => Ok(()),
        }
    }

    /// Thin SVD by one-sided (Hestenes) Jacobi.
    pub fn svd(&self) -> Result<Svd<T>> {
        self.check_finite()?;
        if self.rows < self.cols {
            let s = self.transpose().svd()?;
            return Ok(Svd {
                u: s.v,
                singular_values: s.singular_values,
                v: s.u,
            });
        }
        let (m, n) = (self.rows, self.cols);
        // work column-major: w[j] is column j
        let mut w: Vec<Vec<T>> = (0..n)
            .map(|j| (0..m).map(|i| self[(i, j)]).collect())
            .collect();
        let mut v: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                e
            })
            .collect();
        let eps = T::epsilon();
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (alpha, beta, gamma) = w[p]
                        .iter()
                        .zip(&w[q])
                        .fold((T::zero(), T::zero(), T::zero()), |(a, b, g), (&x, &y)| {
                            (a + x * x, b + y * y, g + x * y)
                        });
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    rotate(&mut w, p, q, c, s);
                    rotate(&mut v, p, q, c, s);
                }
            }
            if !rotated {
                break;
            }
        }
        let mut u = Self::zeros(m, n);
        let mut vm = Self::zeros(n, n);
        let mut sigma = Vec::with_capacity(n);
        for j in 0..n {
            let s = crate::real::norm(&w[j]);
            sigma.push(s);
            for i in 0..m {
                u[(i, j)] = if s > T::zero() {
                    w[j][i] / s
                } else {
                    T::zero()
                };
            }
            for i in 0..n {
                vm[(i, j)] = v[j][i];
            }
        }
        Ok(Svd {
            u,
            singular_values: sigma,
            v: vm,
        })
    }

    /// Moore–Penrose pseudoinverse; singular values below
    /// `rank_tol · σ_max` are treated as zero.
    pub fn pseudoinverse(&self, rank_tol: T) -> Result<Self> {
        if !(rank_tol > T::zero() && rank_tol < T::one()) {
            return Err(Error::InvalidArgument("rank_tol must lie in (0, 1)".into()));
        }
        let svd = self.svd()?;
        let smax = svd.singular_values.iter().copied().fold(T::zero(), T::max);
        let cut = rank_tol * smax;
        let mut pinv = Self::zeros(self.cols, self.rows);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cut || s == T::zero() {
                continue;
            }
            let inv = T::one() / s;
            for i in 0..self.cols {
                let vik = svd.v[(i, k)] * inv;
                if vik == T::zero() {
                    continue;
                }
                for j in 0..self.rows {
                    pinv.data[i * self.rows + j] =
                        pinv.data[i * self.rows + j] + vik * svd.u[(j, k)];
                }
            }
        }
        Ok(pinv)
    }

    /// Numerical rank with the same cut-off rule as [`Self::pseudoinverse`].
    pub fn rank(&self, rank_tol: T) -> Result<usize> {
        let svd = self.svd()?;
        let smax = svd.singular_values.iter().copied().fold(T::zero(), T::max);
        Ok(svd
            .singular_values
            .iter()
            .filter(|&&s| s > rank_tol * smax && s > T::zero())
            .count())
    }

    /// Spectral norm (largest singular value).
    pub fn operator_norm(&self) -> Result<T> {
        Ok(self
            .svd()?
            .singular_values
            .into_iter()
            .fold(T::zero(), T::max))
    }

    pub fn trace(&self) -> Result<T> {
        if self.rows != self.cols {
            return Err(Error::InvalidArgument(
                "trace of a non-square matrix".into(),
            ));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    fn check_symmetric(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::InvalidArgument(
                "eigenvalues of a non-square matrix".into(),
            ));
        }
        self.check_finite()?;
        let scale = self.max_abs().max(T::min_positive_value());
        let mut asym = T::zero();
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                asym = asym.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        if asym > T::lit(1e-10) * scale {
            return Err(Error::NotSymmetric(asym.as_f64()));
        }
        Ok(())
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<T>> {
        self.check_symmetric()?;
        let n = self.rows;
        let mut a = self.clone();
        // symmetrise exactly
        for i in 0..n {
            for j in i + 1..n {
                let m = (a[(i, j)] + a[(j, i)]) / T::lit(2.0);
                a[(i, j)] = m;
                a[(j, i)] = m;
            }
        }
        for _ in 0..MAX_SWEEPS {
            let off: T = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off <= T::epsilon() * T::epsilon() * a.frobenius_norm().powi(2) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                    let t = if theta == T::zero() { T::one() } else { t };
                    let c = T::one() / (T::one() + t * t).sqrt();
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
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
        Ok(ev)
    }

    /// `min_{|u|=1} ⟨u, Q u⟩`, the smallest eigenvalue of a symmetric matrix.
    pub fn min_quadratic_form(&self) -> Result<T> {
        Ok(self.symmetric_eigenvalues()?[0])
    }
}

fn rotate<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Largest relative residual over the four Penrose identities.
pub fn penrose_residual<T: Real>(a: &DenseMatrix<T>, p: &DenseMatrix<T>) -> T {
    let ap = a.matmul(p);
    let pa = p.matmul(a);
    let rel = |m: &DenseMatrix<T>, reference: &DenseMatrix<T>| {
        m.max_abs() / reference.max_abs().max(T::min_positive_value())
    };
    let r1 = rel(&ap.matmul(a).sub(a), a);
    let r2 = rel(&pa.matmul(p).sub(p), p);
    let r3 = rel(&ap.transpose().sub(&ap), &ap);
    let r4 = rel(&pa.transpose().sub(&pa), &pa);
    r1.max(r2).max(r3).max(r4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_and_diagonal_truncation() {
        let i3 = DenseMatrix::<f64>::identity(3);
        let p = i3.pseudoinverse(1e-12).unwrap();
        assert!(p.sub(&i3).max_abs() < 1e-15);
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let p = a.pseudoinverse(1e-12).unwrap();
        assert_eq!(p, a);
    }

    #[test]
    fn norms_trace_eigen() {
        assert_eq!(DenseMatrix::<f64>::identity(3).trace().unwrap(), 3.0);
        let d = DenseMatrix::from_diagonal(&[2.0, -5.0]);
        assert_abs_diff_eq!(d.operator_norm().unwrap(), 5.0, epsilon = 1e-14);
        // characteristic polynomial (2-λ)² - 1 has roots 1 and 3
        let q = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(q.min_quadratic_form().unwrap(), 1.0, epsilon = 1e-14);
        let ev = q.symmetric_eigenvalues().unwrap();
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-14);
        let asym = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            asym.min_quadratic_form(),
            Err(Error::NotSymmetric(_))
        ));
        assert!(DenseMatrix::<f64>::zeros(2, 3).trace().is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let a = DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            a.pseudoinverse(1e-12),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn zero_matrix_has_zero_pseudoinverse() {
        let z = DenseMatrix::<f64>::zeros(2, 5);
        let p = z.pseudoinverse(1e-12).unwrap();
        assert_eq!((p.rows(), p.cols()), (5, 2));
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let a =
            DenseMatrix::<f32>::from_rows(&[vec![1.0, 2.0, 0.5], vec![0.0, 1.0, -1.0]]).unwrap();
        let p = a.pseudoinverse(1e-6).unwrap();
        assert!(penrose_residual(&a, &p) < 1e-5);
    }

    fn matrix_strategy() -> impl Strategy<Value = DenseMatrix<f64>> {
        (1usize..=6, 1usize..=20).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |v| DenseMatrix::new(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn penrose_identities_hold(a in matrix_strategy()) {
            let p = a.pseudoinverse(1e-12).unwrap();
            prop_assert!(penrose_residual(&a, &p) < 1e-10);
        }

        #[test]
        fn rank_deficient_products(a in matrix_strategy(), b in matrix_strategy()) {
            // low-rank matrix via an outer product of thin factors
            let a2 = DenseMatrix::new(a.rows(), 1, (0..a.rows()).map(|i| a[(i, 0)]).collect()).unwrap();
            let b2 = DenseMatrix::new(1, b.cols(), b.row(0).to_vec()).unwrap();
            let m = a2.matmul(&b2);
            let p = m.pseudoinverse(1e-12).unwrap();
            prop_assert!(penrose_residual(&m, &p) < 1e-10);
            prop_assert!(m.rank(1e-12).unwrap() <= 1);
        }
    }
}
