//! Small dense linear algebra for desk-scale problems (n ≤ 8 or so).
//!
//! Row-major storage. Only the algorithms needed by control synthesis are
//! provided: pivoted elimination, inversion with a condition estimate,
//! numerical rank, Faddeev–LeVerrier characteristic polynomials, the Routh
//! stability test and the cyclic Jacobi symmetric eigensolver.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),
    #[error("Jacobi iteration did not converge")]
    NoConvergence,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = LinalgError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?}", Vec::<Vec<f64>>::from(self.clone()))
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
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

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if r == 0 || c == 0 {
            return Err(LinalgError::Shape("empty matrix".into()));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn symmetrize(&self) -> Self {
        (self + &self.transpose()).scale(0.5)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Self, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::Shape("hcat row mismatch".into()));
        }
        let mut m = Self::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self[(i, j)];
            }
            for j in 0..other.cols {
                m[(i, self.cols + j)] = other[(i, j)];
            }
        }
        Ok(m)
    }

    pub fn try_mul(&self, other: &Matrix) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut m = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    m[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(m)
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if !self.is_square() || b.len() != self.rows {
            return Err(LinalgError::Shape("solve needs square A and matching b".into()));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .expect("nonempty");
            if a[p * n + k].abs() <= 1e-14 * scale {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                x.swap(k, p);
            }
            let piv = a[k * n + k];
            for i in (k + 1)..n {
                let l = a[i * n + k] / piv;
                if l == 0.0 {
                    continue;
                }
                for j in k..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            let s: f64 = ((k + 1)..n).map(|j| a[k * n + j] * x[j]).sum();
            x[k] = (x[k] - s) / a[k * n + k];
        }
        Ok(x)
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting, plus the
    /// 1-norm condition number `‖A‖₁‖A⁻¹‖₁`.
    pub fn inverse_with_condition(&self) -> Result<(Matrix, f64), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Shape("inverse of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .expect("nonempty");
            if a[(p, k)].abs() <= 1e-14 * scale {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                    inv.data.swap(k * n + j, p * n + j);
                }
            }
            let piv = a[(k, k)];
            for j in 0..n {
                a[(k, j)] /= piv;
                inv[(k, j)] /= piv;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let l = a[(i, k)];
                if l == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] -= l * a[(k, j)];
                    inv[(i, j)] -= l * inv[(k, j)];
                }
            }
        }
        let cond = self.norm1() * inv.norm1();
        Ok((inv, cond))
    }

    /// Inverse, refused when the condition estimate exceeds `1e12`.
    pub fn inverse(&self) -> Result<Matrix, LinalgError> {
        let (inv, cond) = self.inverse_with_condition()?;
        if cond > 1e12 {
            return Err(LinalgError::IllConditioned(cond));
        }
        Ok(inv)
    }

    /// Numerical rank by elimination with complete pivoting; entries below
    /// `rel_tol · max|A|` count as zero.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let (r, c) = (self.rows, self.cols);
        let mut a = self.clone();
        let tol = rel_tol * self.max_abs();
        if self.max_abs() == 0.0 {
            return 0;
        }
        let mut rank = 0;
        for k in 0..r.min(c) {
            let mut best = (k, k, 0.0);
            for i in k..r {
                for j in k..c {
                    let v = a[(i, j)].abs();
                    if v > best.2 {
                        best = (i, j, v);
                    }
                }
            }
            if best.2 <= tol {
                break;
            }
            let (pi, pj, _) = best;
            for j in 0..c {
                a.data.swap(k * c + j, pi * c + j);
            }
            for i in 0..r {
                a.data.swap(i * c + k, i * c + pj);
            }
            let piv = a[(k, k)];
            for i in (k + 1)..r {
                let l = a[(i, k)] / piv;
                for j in k..c {
                    a[(i, j)] -= l * a[(k, j)];
                }
            }
            rank += 1;
        }
        rank
    }

    /// Coefficients `[c₀, c₁, …, cₙ]` of `det(λI − A) = Σ cₖ λᵏ` (so `cₙ = 1`)
    /// by the Faddeev–LeVerrier recursion.
    pub fn char_poly(&self) -> Vec<f64> {
        assert!(self.is_square(), "char_poly of non-square matrix");
        let n = self.rows;
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        let mut m = Matrix::zeros(n, n);
        let id = Matrix::identity(n);
        for k in 1..=n {
            m = &self.try_mul(&m).expect("square") + &id.scale(c[n - k + 1]);
            let am = self.try_mul(&m).expect("square");
            c[n - k] = -am.trace() / k as f64;
        }
        c
    }

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvalues
    /// are returned ascending; column `k` of the second matrix is the unit
    /// eigenvector for eigenvalue `k`.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Matrix), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Shape("eigen of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.symmetrize();
        let mut v = Matrix::identity(n);
        let norm = a.frobenius();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * norm || norm == 0.0 {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
                let vals = idx.iter().map(|&i| a[(i, i)]).collect();
                let mut vecs = Matrix::zeros(n, n);
                for (col, &k) in idx.iter().enumerate() {
                    for r in 0..n {
                        vecs[(r, col)] = v[(r, k)];
                    }
                }
                return Ok((vals, vecs));
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
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
        Err(LinalgError::NoConvergence)
    }
}

/// Routh test: true iff every root of `Σ cₖ λᵏ` (coefficients ascending,
/// leading coefficient positive) has negative real part.
///
/// A zero (to relative tolerance) in the first column means a root on or
/// across the imaginary axis, which is reported as not Hurwitz.
pub fn routh_hurwitz(coeffs: &[f64]) -> bool {
    let n = coeffs.len() - 1;
    if n == 0 {
        return true;
    }
    let lead = coeffs[n];
    if lead <= 0.0 {
        return false;
    }
    let desc: Vec<f64> = coeffs.iter().rev().map(|c| c / lead).collect();
    if desc.iter().any(|c| *c <= 0.0) {
        return false;
    }
    let scale = desc.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|k| desc.get(2 * k).copied().unwrap_or(0.0)).collect();
    let mut cur: Vec<f64> = (0..width).map(|k| desc.get(2 * k + 1).copied().unwrap_or(0.0)).collect();
    for _ in 1..n {
        if cur[0] <= 1e-12 * scale {
            return false;
        }
        let mut next = vec![0.0; width];
        for k in 0..width - 1 {
            next[k] = (cur[0] * prev[k + 1] - prev[0] * cur[k + 1]) / cur[0];
        }
        prev = cur;
        cur = next;
    }
    cur[0] > 1e-12 * scale
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.try_mul(rhs).expect("mul shape")
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn solve_and_inverse() {
        let a = m(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, -1.0], &[0.0, -1.0, 2.0]]);
        let x = a.solve(&[1.0, 2.0, 3.0]).unwrap();
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
        let inv = a.inverse().unwrap();
        let id = &a * &inv;
        assert!((&id - &Matrix::identity(3)).max_abs() < 1e-14);
        assert!(matches!(
            m(&[&[1.0, 2.0], &[2.0, 4.0]]).inverse(),
            Err(LinalgError::Singular)
        ));
        assert!(matches!(
            m(&[&[1.0, 0.0], &[0.0, 1e-13]]).inverse(),
            Err(LinalgError::IllConditioned(_))
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(m(&[&[1.0, -1.0], &[0.0, 0.0]]).rank(1e-10), 1);
        assert_eq!(Matrix::identity(3).rank(1e-10), 3);
        assert_eq!(Matrix::zeros(2, 3).rank(1e-10), 0);
        assert_eq!(m(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]).rank(1e-10), 1);
    }

    #[test]
    fn char_poly_and_routh() {
        // (λ+1)(λ+2)(λ+3) = λ³ + 6λ² + 11λ + 6
        let a = m(&[&[-1.0, 1.0, 0.0], &[0.0, -2.0, 1.0], &[0.0, 0.0, -3.0]]);
        let c = a.char_poly();
        for (got, want) in c.iter().zip([6.0, 11.0, 6.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{c:?}");
        }
        assert!(routh_hurwitz(&c));
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(!routh_hurwitz(&rot.char_poly()));
        // λ³ + λ² + λ + 6 has roots with positive real part
        assert!(!routh_hurwitz(&[6.0, 1.0, 1.0, 1.0]));
        // λ⁴ + 10λ³ + 35λ² + 50λ + 24 = (λ+1)(λ+2)(λ+3)(λ+4)
        assert!(routh_hurwitz(&[24.0, 50.0, 35.0, 10.0, 1.0]));
        assert!(!routh_hurwitz(&[-1.0, 1.0]));
    }

    #[test]
    fn jacobi_eigen() {
        let a = m(&[&[2.0, 1.0, 0.0], &[1.0, 2.0, 1.0], &[0.0, 1.0, 2.0]]);
        let (vals, vecs) = a.symmetric_eigen().unwrap();
        let s2 = 2f64.sqrt();
        for (got, want) in vals.iter().zip([2.0 - s2, 2.0, 2.0 + s2]) {
            assert!((got - want).abs() < 1e-13);
        }
        for k in 0..3 {
            let v: Vec<f64> = (0..3).map(|r| vecs[(r, k)]).collect();
            let av = a.mul_vec(&v);
            for r in 0..3 {
                assert!((av[r] - vals[k] * v[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let b: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<Matrix>("[[1.0],[2.0,3.0]]").is_err());
    }
}
