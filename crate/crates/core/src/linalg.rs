//! Dense complex matrices and LU factorization with partial pivoting.
//!
//! Everything in the crate is expressed through [`CMatrix`]: the m×m kernel
//! blocks, the m-vectors (stored as m×1 columns) and the assembled Nyström
//! systems. The LU carries a 1-norm condition estimate (Hager/Higham) so the
//! solvers can refuse numerically singular systems.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("exact zero pivot in column {column}")]
    ZeroPivot { column: usize },
}

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// m×1 column vector.
    pub fn column(values: &[C64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    /// 1×1 matrix.
    pub fn scalar(value: C64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, alpha: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| alpha * x).collect(),
        }
    }

    pub fn scale_real(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: C64, x: &CMatrix) {
        assert_eq!(self.shape(), x.shape(), "axpy shape mismatch");
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * xv;
        }
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.cols.max(1))
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Copies the `nr × nc` sub-block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> CMatrix {
        CMatrix::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMatrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn determinant(&self) -> Result<C64, LinalgError> {
        match Lu::factor(self) {
            Ok(lu) => Ok(lu.determinant()),
            Err(LinalgError::ZeroPivot { .. }) => Ok(ZERO),
            Err(e) => Err(e),
        }
    }

    pub fn inverse(&self) -> Result<CMatrix, LinalgError> {
        let lu = Lu::factor(self)?;
        Ok(lu.solve(&CMatrix::identity(self.rows)))
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        self.axpy(ONE, rhs);
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        self.axpy(-ONE, rhs);
    }
}

/// `P A = L U` with unit lower-triangular `L`, stored in place.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
    swaps: usize,
    norm_one: f64,
}

impl Lu {
    pub fn factor(a: &CMatrix) -> Result<Lu, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 {
                return Err(LinalgError::ZeroPivot { column: k });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let krow = &head[k * n..];
            for row in tail.chunks_mut(n) {
                let l = row[k] / pivot;
                row[k] = l;
                if l == ZERO {
                    continue;
                }
                for j in k + 1..n {
                    row[j] -= l * krow[j];
                }
            }
        }
        Ok(Lu {
            n,
            lu,
            perm,
            swaps,
            norm_one: a.norm_one(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> C64 {
        self.lu[i * self.n + j]
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        assert_eq!(b.rows, self.n, "rhs row count mismatch");
        let n = self.n;
        let nrhs = b.cols;
        let mut x = CMatrix::from_fn(n, nrhs, |i, j| b[(self.perm[i], j)]);
        for i in 0..n {
            for k in 0..i {
                let l = self.at(i, k);
                if l == ZERO {
                    continue;
                }
                for j in 0..nrhs {
                    let v = x[(k, j)];
                    x[(i, j)] -= l * v;
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.at(i, k);
                if u == ZERO {
                    continue;
                }
                for j in 0..nrhs {
                    let v = x[(k, j)];
                    x[(i, j)] -= u * v;
                }
            }
            let d = self.at(i, i);
            for j in 0..nrhs {
                x[(i, j)] /= d;
            }
        }
        x
    }

    /// Solves `Aᵀ X = B` (plain transpose) or `Aᴴ X = B` when `conjugate`.
    fn solve_transposed(&self, b: &CMatrix, conjugate: bool) -> CMatrix {
        assert_eq!(b.rows, self.n, "rhs row count mismatch");
        let n = self.n;
        let nrhs = b.cols;
        let c = |z: C64| if conjugate { z.conj() } else { z };
        // Uᵀ y = b
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let u = c(self.at(k, i));
                if u == ZERO {
                    continue;
                }
                for j in 0..nrhs {
                    let v = y[(k, j)];
                    y[(i, j)] -= u * v;
                }
            }
            let d = c(self.at(i, i));
            for j in 0..nrhs {
                y[(i, j)] /= d;
            }
        }
        // Lᵀ z = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let l = c(self.at(k, i));
                if l == ZERO {
                    continue;
                }
                for j in 0..nrhs {
                    let v = y[(k, j)];
                    y[(i, j)] -= l * v;
                }
            }
        }
        let mut x = CMatrix::zeros(n, nrhs);
        for i in 0..n {
            for j in 0..nrhs {
                x[(self.perm[i], j)] = y[(i, j)];
            }
        }
        x
    }

    pub fn solve_transpose(&self, b: &CMatrix) -> CMatrix {
        self.solve_transposed(b, false)
    }

    pub fn solve_adjoint(&self, b: &CMatrix) -> CMatrix {
        self.solve_transposed(b, true)
    }

    pub fn determinant(&self) -> C64 {
        let d: C64 = (0..self.n).map(|i| self.at(i, i)).product();
        if self.swaps % 2 == 1 {
            -d
        } else {
            d
        }
    }

    /// `ln |det A|`, safe against overflow for large systems.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i).norm().ln()).sum()
    }

    /// `arg det A` in (-π, π].
    pub fn det_phase(&self) -> f64 {
        let mut unit: C64 = (0..self.n)
            .map(|i| {
                let d = self.at(i, i);
                d / d.norm()
            })
            .product();
        if self.swaps % 2 == 1 {
            unit = -unit;
        }
        unit.arg()
    }

    /// Estimate of `‖A⁻¹‖₁` (Hager's method with Higham's refinements).
    pub fn inverse_norm_one_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let l1 = |m: &CMatrix| m.as_slice().iter().map(|z| z.norm()).sum::<f64>();
        let mut x = CMatrix::from_vec(n, 1, vec![C64::new(1.0 / n as f64, 0.0); n]);
        let mut est = 0.0;
        for iter in 0..5 {
            let y = self.solve(&x);
            let new_est = l1(&y);
            if iter > 0 && new_est <= est {
                break;
            }
            est = new_est;
            let s = CMatrix::from_fn(n, 1, |i, _| {
                let v = y[(i, 0)];
                if v.norm() == 0.0 {
                    ONE
                } else {
                    v / v.norm()
                }
            });
            let z = self.solve_adjoint(&s);
            let (jmax, zmax) = (0..n)
                .map(|i| (i, z[(i, 0)].norm()))
                .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            let ztx: f64 = (0..n).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
            if iter > 0 && zmax <= ztx {
                break;
            }
            x = CMatrix::zeros(n, 1);
            x[(jmax, 0)] = ONE;
        }
        let alt = CMatrix::from_fn(n, 1, |i, _| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            C64::new(sign * (1.0 + frac), 0.0)
        });
        let alt_est = 2.0 * l1(&self.solve(&alt)) / (3.0 * n as f64);
        est.max(alt_est)
    }

    /// 1-norm condition number estimate `‖A‖₁ · est(‖A⁻¹‖₁)`.
    pub fn condition_estimate(&self) -> f64 {
        self.norm_one * self.inverse_norm_one_estimate()
    }
}
