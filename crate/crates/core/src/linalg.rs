//! Dense linear algebra for the small general-covariance path (d <= 8):
//! LU factorization with partial pivoting, solves, and a 1-norm condition
//! estimate. The diagonal path never touches this module.

use crate::real::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (zero pivot at column {0})")]
    Singular(usize),
    #[error("dimension mismatch: matrix is {n}x{n}, vector has length {len}")]
    DimensionMismatch { n: usize, len: usize },
}

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<R: Real> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn from_rows(rows: &[Vec<R>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(LinalgError::NotSquare {
                    rows: n,
                    cols: r.len(),
                });
            }
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diagonal(diag: &[R]) -> Self {
        let n = diag.len();
        let mut data = vec![R::zero(); n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.n + j]
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[R]) -> Result<Vec<R>, LinalgError> {
        if x.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                n: self.n,
                len: x.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| self.get(i, j) * x[j])
                    .fold(R::zero(), |a, b| a + b)
            })
            .collect())
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> R {
        (0..self.n)
            .map(|j| {
                (0..self.n)
                    .map(|i| self.get(i, j).abs())
                    .fold(R::zero(), |a, b| a + b)
            })
            .fold(R::zero(), R::max)
    }

    pub fn lu(&self) -> Result<Lu<R>, LinalgError> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot = col;
            let mut best = a[col * n + col].abs();
            for row in col + 1..n {
                let v = a[row * n + col].abs();
                if v > best {
                    best = v;
                    pivot = row;
                }
            }
            if best == R::zero() {
                return Err(LinalgError::Singular(col));
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                perm.swap(col, pivot);
            }
            let inv_p = R::one() / a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] * inv_p;
                a[row * n + col] = f;
                for j in col + 1..n {
                    let sub = f * a[col * n + j];
                    a[row * n + j] -= sub;
                }
            }
        }
        Ok(Lu { n, a, perm })
    }

    /// 1-norm condition number from the explicit inverse (exact for the
    /// tiny sizes this module allows).
    pub fn condition_1(&self) -> Result<R, LinalgError> {
        let lu = self.lu()?;
        let n = self.n;
        let mut inv_norm = R::zero();
        for j in 0..n {
            let mut e = vec![R::zero(); n];
            e[j] = R::one();
            let col = lu.solve(&e)?;
            let s = col.iter().map(|v| v.abs()).fold(R::zero(), |a, b| a + b);
            inv_norm = inv_norm.max(s);
        }
        Ok(self.norm_1() * inv_norm)
    }
}

/// LU factorization with the row permutation applied.
pub struct Lu<R: Real> {
    n: usize,
    a: Vec<R>,
    perm: Vec<usize>,
}

impl<R: Real> Lu<R> {
    /// Solve A x = b.
    pub fn solve(&self, b: &[R]) -> Result<Vec<R>, LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch { n, len: b.len() });
        }
        let mut x: Vec<R> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                let sub = self.a[i * n + j] * x[j];
                x[i] -= sub;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let sub = self.a[i * n + j] * x[j];
                x[i] -= sub;
            }
            x[i] /= self.a[i * n + i];
        }
        Ok(x)
    }
}
