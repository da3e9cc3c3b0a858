//! Dense Gaussian elimination with partial pivoting for the small systems
//! that absorbing-chain quantities reduce to.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("matrix is singular (pivot {pivot:e} in column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: {rows}x{cols} matrix with rhs of length {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
}

/// Pivots below this magnitude are treated as zero.
pub const PIVOT_EPS: f64 = 1e-13;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
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

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Solution of `A x = b` together with its residual `‖A x − b‖∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Solution, SolveError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolveError::Dimension {
            rows: n,
            cols: n,
            rhs: b.len(),
        });
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();

    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty pivot range");
        if pivot.abs() < PIVOT_EPS {
            return Err(SolveError::Singular { column: col, pivot });
        }
        if pivot_row != col {
            for j in 0..n {
                m.data.swap(col * n + j, pivot_row * n + j);
            }
            rhs.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            if factor == 0.0 {
                continue;
            }
            m[(r, col)] = 0.0;
            for j in col + 1..n {
                m[(r, j)] -= factor * m[(col, j)];
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|j| m[(i, j)] * x[j]).sum();
        x[i] = (rhs[i] - tail) / m[(i, i)];
    }

    let residual = a
        .mul_vec(&x)
        .iter()
        .zip(b)
        .map(|(ax, bi)| (ax - bi).abs())
        .fold(0.0, f64::max);
    Ok(Solution { x, residual })
}
