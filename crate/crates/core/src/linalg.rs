//! Small dense and banded linear algebra.
//!
//! Only what the pipeline needs: a periodic tridiagonal solver for the
//! finite-element mass matrix, and dense routines for the master-equation
//! oracle (the largest sector it accepts is 70 states).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{precondition, Result};

/// Solves `A x = rhs` for a periodic tridiagonal `A`.
///
/// Row `i` reads `lower[i]·x[i-1] + diag[i]·x[i] + upper[i]·x[i+1]` with
/// indices taken modulo `n`. Uses the Sherman–Morrison correction on top of
/// the Thomas algorithm, so `A` must be such that the reduced system is
/// nonsingular (true for diagonally dominant matrices such as FE mass
/// matrices).
pub fn solve_cyclic_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 || lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(precondition(
            "cyclic tridiagonal system needs n >= 3 and matching lengths",
        ));
    }
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];

    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;

    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;

    let x = thomas(lower, &d, upper, rhs)?;
    let z = thomas(lower, &d, upper, &u)?;

    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

/// Thomas algorithm on the non-periodic part (`lower[0]` and `upper[n-1]`
/// are ignored).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(precondition("singular tridiagonal pivot"));
    }
    c[0] = upper[0] / denom;
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 {
            return Err(precondition("singular tridiagonal pivot"));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Symmetric periodic tridiagonal matrix: `diag[i] = A[i][i]` and
/// `off[i] = A[i][i+1] = A[i+1][i]` with `i + 1` taken modulo `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCyclic {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymmetricCyclic {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(
            diag.len(),
            off.len(),
            "diagonal and off-diagonal lengths differ"
        );
        Self { diag, off }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Entry `A[i][j]`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.dim();
        if i == j {
            self.diag[i]
        } else if (i + 1) % n == j {
            self.off[i]
        } else if (j + 1) % n == i {
            self.off[j]
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let l = (i + n - 1) % n;
                let r = (i + 1) % n;
                self.off[l] * x[l] + self.diag[i] * x[i] + self.off[i] * x[r]
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| self.off[(i + n - 1) % n] + self.diag[i] + self.off[i])
            .collect()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let lower: Vec<f64> = (0..n).map(|i| self.off[(i + n - 1) % n]).collect();
        solve_cyclic_tridiagonal(&lower, &self.diag, &self.off, rhs)
    }

    pub fn to_dense(&self) -> Dense {
        let n = self.dim();
        let mut d = Dense::zeros(n);
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] = self.get(i, j);
            }
        }
        d
    }
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `v^T A`, i.e. a row vector times the matrix.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, vi) in v.iter().enumerate() {
            for j in 0..n {
                out[j] += vi * self.data[i * n + j];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    fn add_assign(&mut self, other: &Self) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    /// Max-row-sum norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .map(|x| x.abs())
                    .sum()
            })
            .fold(0.0, f64::max)
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
                .unwrap_or(col);
            if a[piv * n + col].abs() < 1e-300 {
                return Err(precondition("singular matrix in dense solve"));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(piv * n + j, col * n + j);
                }
                x.swap(piv, col);
            }
            let p = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / p;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for j in col + 1..n {
                s -= a[col * n + j] * x[j];
            }
            x[col] = s / a[col * n + col];
        }
        Ok(x)
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor
    /// series. Accurate to near machine precision for the small, well-scaled
    /// generators the oracle builds.
    pub fn expm(&self) -> Self {
        let norm = self.norm_inf();
        let mut squarings = 0u32;
        let mut s = 1.0;
        while norm * s > 0.5 {
            s *= 0.5;
            squarings += 1;
        }
        let mut a = self.clone();
        a.scale(s);
        let mut result = Self::identity(self.n);
        let mut term = Self::identity(self.n);
        for k in 1..=20 {
            term = term.matmul(&a);
            term.scale(1.0 / k as f64);
            result.add_assign(&term);
            if term.norm_inf() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result);
        }
        result
    }
}

impl core::ops::Index<(usize, usize)> for Dense {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Dense {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}
