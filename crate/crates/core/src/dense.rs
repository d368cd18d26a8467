//! Dense complex matrices with the cell-volume convention of the grid.

use faer::complex_native::c64;
use faer::prelude::*;
use faer::{Mat, Side};
use num::complex::Complex64;

use crate::error::{invalid, Result};

/// Column-major `rows x cols` matrix. `cell_volume` is the quadrature weight
/// `h^n`, so the continuum kernel is `entry / cell_volume`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub cell_volume: f64,
    pub data: Vec<Complex64>,
}

pub(crate) fn to_c64(z: Complex64) -> c64 {
    c64::new(z.re, z.im)
}

pub(crate) fn from_c64(z: c64) -> Complex64 {
    Complex64::new(z.re, z.im)
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize, cell_volume: f64) -> Self {
        Self { rows, cols, cell_volume, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_columns(columns: Vec<Vec<Complex64>>, cell_volume: f64) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return invalid("ragged columns");
        }
        Ok(Self { rows, cols, cell_volume, data: columns.into_iter().flatten().collect() })
    }

    pub fn identity(size: usize, cell_volume: f64) -> Self {
        let mut m = Self::zeros(size, size, cell_volume);
        for i in 0..size {
            m.data[i * size + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.rows];
        for (j, xj) in x.iter().enumerate() {
            if *xj == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (yi, a) in y.iter_mut().zip(self.column(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    /// Conjugate-transpose product `A^* x`.
    pub fn adjoint_matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.cols)
            .map(|j| self.column(j).iter().zip(x).map(|(a, xi)| a.conj() * xi).sum())
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows, self.cell_volume);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn to_faer(&self) -> Mat<c64> {
        Mat::from_fn(self.rows, self.cols, |i, j| to_c64(self.get(i, j)))
    }

    pub fn from_faer(m: &Mat<c64>, cell_volume: f64) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols(), cell_volume);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.set(i, j, from_c64(m.read(i, j)));
            }
        }
        out
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.cols {
            for i in 0..=j.min(self.rows - 1) {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_singular_value(&self) -> f64 {
        let sv = self.to_faer().singular_values();
        sv.into_iter().fold(0.0, f64::max)
    }

    /// Solves `A x = b` by partial-pivot LU.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.rows != self.cols || b.len() != self.rows {
            return invalid("solve needs a square matrix and a matching right-hand side");
        }
        let a = self.to_faer();
        let rhs = Mat::from_fn(b.len(), 1, |i, _| to_c64(b[i]));
        let x = a.partial_piv_lu().solve(&rhs);
        Ok((0..b.len()).map(|i| from_c64(x.read(i, 0))).collect())
    }
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column-major orthonormal eigenvectors.
    pub vectors: Vec<f64>,
    pub size: usize,
}

impl SymmetricEigen {
    /// `a` is column-major and must be symmetric; only the lower triangle is read.
    pub fn new(a: &[f64], size: usize) -> Result<Self> {
        if a.len() != size * size {
            return invalid("matrix data does not match size");
        }
        let m = Mat::<f64>::from_fn(size, size, |i, j| a[j * size + i]);
        let e = m.selfadjoint_eigendecomposition(Side::Lower);
        let s = e.s().column_vector();
        let u = e.u();
        let values = (0..size).map(|i| s.read(i)).collect();
        let mut vectors = vec![0.0; size * size];
        for j in 0..size {
            for i in 0..size {
                vectors[j * size + i] = u.read(i, j);
            }
        }
        Ok(Self { values, vectors, size })
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.size..(k + 1) * self.size]
    }

    /// `sum_k f(lambda_k) <v_k, x> v_k`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> Complex64, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.size];
        for k in 0..self.size {
            let fk = f(self.values[k]);
            if fk == Complex64::new(0.0, 0.0) {
                continue;
            }
            let v = self.vector(k);
            let c: Complex64 = v.iter().zip(x).map(|(a, b)| b * *a).sum::<Complex64>() * fk;
            for (o, a) in out.iter_mut().zip(v) {
                *o += c * *a;
            }
        }
        out
    }

    /// Coefficients `<v_k, x>` in the eigenbasis.
    pub fn coefficients(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.size)
            .map(|k| self.vector(k).iter().zip(x).map(|(a, b)| b * *a).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_eigen() {
        let mut a = DenseMatrix::identity(3, 1.0);
        a.set(0, 1, Complex64::new(0.5, 0.1));
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, -1.0), Complex64::new(0.0, 3.0)];
        let x = a.solve(&b).unwrap();
        let r = a.matvec(&x);
        for (u, v) in r.iter().zip(&b) {
            assert!((u - v).norm() < 1e-14);
        }
        let s = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let e = SymmetricEigen::new(&s, 3).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[2] - 5.0).abs() < 1e-12);
        let y = e.apply_fn(|l| Complex64::new(l, 0.0), &b);
        let dense = DenseMatrix {
            rows: 3,
            cols: 3,
            cell_volume: 1.0,
            data: s.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        };
        for (u, v) in y.iter().zip(dense.matvec(&b)) {
            assert!((u - v).norm() < 1e-12);
        }
        assert!((dense.max_singular_value() - 5.0).abs() < 1e-12);
        assert_eq!(dense.hermitian_defect(), 0.0);
    }
}
