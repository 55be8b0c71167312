//! Small symmetric matrices (d ≤ 3).

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    dim: usize,
    a: [[f64; 3]; 3],
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=3).contains(&dim));
        SymMat { dim, a: [[0.0; 3]; 3] }
    }

    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut m = SymMat::zeros(dim);
        for k in 0..dim {
            m.a[k][k] = c;
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        SymMat::scalar(dim, 1.0)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = SymMat::zeros(diag.len());
        for (k, &v) in diag.iter().enumerate() {
            m.a[k][k] = v;
        }
        m
    }

    /// Symmetric part of a (possibly asymmetric) square matrix, plus the
    /// largest absolute asymmetry `|a_ij - a_ji| / 2`.
    pub fn symmetrize(rows: &[Vec<f64>]) -> (Self, f64) {
        let dim = rows.len();
        let mut m = SymMat::zeros(dim);
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                m.a[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
                asym = asym.max(0.5 * (rows[i][j] - rows[j][i]).abs());
            }
        }
        (m, asym)
    }

    /// Upper-left `dim × dim` block of a 3×3 array; `a` must be symmetric there.
    pub fn from_array(dim: usize, a: [[f64; 3]; 3]) -> Option<Self> {
        let mut m = SymMat::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                if a[i][j] != a[j][i] {
                    return None;
                }
                m.a[i][j] = a[i][j];
            }
        }
        Some(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn as_array(&self) -> [[f64; 3]; 3] {
        self.a
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.a[i][j] == 0.0))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_fn(self.dim, self.dim, |i, j| self.a[i][j]);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// `Λ⁻¹ ≤ ξ·aξ ≤ Λ` for all unit ξ, up to a relative slack of `1e-12`.
    pub fn is_elliptic(&self, lambda: f64) -> bool {
        let ev = self.eigenvalues();
        let slack = 1e-12 * lambda;
        ev[0] >= 1.0 / lambda - slack && ev[self.dim - 1] <= lambda + slack
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.a[i][j] * x[j]).sum()).collect()
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                d = d.max((self.a[i][j] - other.a[i][j]).abs());
            }
        }
        d
    }
}
