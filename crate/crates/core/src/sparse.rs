//! Compressed sparse row matrices and the few dense-free kernels the rest
//! of the crate needs: matrix-vector products, same-pattern linear
//! combinations, and a conjugate-gradient solve for SPD systems.

use crate::{Error, Result};
use rayon::prelude::*;

/// CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<CsrMatrix> {
        for &(i, j, _) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidConfig(format!(
                    "triplet ({i}, {j}) outside {n_rows}x{n_cols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&t| (triplets[t].0, triplets[t].1));

        let mut counts = vec![0usize; n_rows];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &t in &order {
            let (i, j, v) = triplets[t];
            if prev == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                counts[i] += 1;
                prev = Some((i, j));
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for i in 0..n_rows {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Build directly from raw CSR arrays (columns must be sorted per row).
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<CsrMatrix> {
        if row_ptr.len() != n_rows + 1
            || *row_ptr.last().unwrap_or(&0) != col_idx.len()
            || col_idx.len() != values.len()
        {
            return Err(Error::InvalidConfig("inconsistent CSR arrays".into()));
        }
        for i in 0..n_rows {
            let r = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for w in r.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidConfig(format!(
                        "row {i} columns not strictly increasing"
                    )));
                }
            }
            if let Some(&j) = r.last() {
                if j >= n_cols {
                    return Err(Error::InvalidConfig(format!("row {i} column out of range")));
                }
            }
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Entry lookup by binary search; zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// y = A x with rows processed in parallel.
    ///
    /// Each output entry is reduced serially from its own row, so the result
    /// is bitwise identical to [`CsrMatrix::matvec`] for any thread count.
    pub fn matvec_parallel(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        let row_ptr = &self.row_ptr;
        let col_idx = &self.col_idx;
        let values = &self.values;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = 0.0;
            for k in row_ptr[i]..row_ptr[i + 1] {
                acc += values[k] * x[col_idx[k]];
            }
            *yi = acc;
        });
    }

    /// y += a * (A x).
    pub fn matvec_acc(&self, a: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] += a * acc;
        }
    }

    /// y = A^T x.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        y.fill(0.0);
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * x[i];
            }
        }
    }

    /// Largest |A_ij - A_ji| over the pattern; zero for exactly symmetric
    /// matrices.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row sums (equals A·1).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                self.values[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .sum()
            })
            .collect()
    }

    /// Sum of every entry.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Diagonal entries (zero where outside the pattern).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// True when `other` has the identical sparsity pattern.
    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// a*self + b*other for matrices sharing one pattern.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Result<CsrMatrix> {
        if !self.same_pattern(other) {
            return Err(Error::InvalidConfig(
                "linear combination requires identical sparsity patterns".into(),
            ));
        }
        let mut out = self.clone();
        for (o, (&x, &y)) in out
            .values
            .iter_mut()
            .zip(self.values.iter().zip(other.values.iter()))
        {
            *o = a * x + b * y;
        }
        Ok(out)
    }

    /// Dense copy, for small oracles and tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] = self.values[k];
            }
        }
        d
    }
}

/// Conjugate gradients for SPD systems, iterated to (near) machine
/// precision. Mass matrices of quasi-uniform meshes are uniformly well
/// conditioned, so this acts as an exact solve for projection purposes.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n_rows();
    assert_eq!(b.len(), n);
    let norm_b = norm2(b);
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rtr = dot(&r, &r);
    for _ in 0..max_iter {
        if rtr.sqrt() <= rel_tol * norm_b {
            return Ok(x);
        }
        a.matvec(&p, &mut ap);
        let denom = dot(&p, &ap);
        if denom <= 0.0 {
            return Err(Error::InvalidConfig(
                "conjugate gradients: matrix is not positive definite".into(),
            ));
        }
        let alpha = rtr / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rtr_next = dot(&r, &r);
        let beta = rtr_next / rtr;
        rtr = rtr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rtr.sqrt() <= rel_tol * norm_b * 10.0 {
        Ok(x)
    } else {
        Err(Error::GmresDidNotConverge {
            relative_residual: rtr.sqrt() / norm_b,
            tolerance: rel_tol,
            iterations: max_iter,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort_columns() {
        let a = CsrMatrix::from_triplets(
            2,
            3,
            &[
                (1, 2, 4.0),
                (0, 1, 1.0),
                (1, 2, -1.0),
                (0, 0, 2.0),
                (1, 0, 5.0),
            ],
        )
        .unwrap();
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 5.0);
        assert_eq!(a.get(1, 2), 3.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.col_idx(), &[0, 1, 0, 2]);
    }

    #[test]
    fn empty_rows_are_allowed() {
        let a = CsrMatrix::from_triplets(4, 4, &[(0, 0, 1.0), (3, 3, 2.0)]).unwrap();
        assert_eq!(a.row_ptr(), &[0, 1, 1, 1, 2]);
        let mut y = vec![0.0; 4];
        a.matvec(&[1.0, 1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        )
        .unwrap();
        let x = [1.0, 2.0, 3.0];
        let mut y = vec![0.0; 3];
        a.matvec(&x, &mut y);
        let d = a.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - d[i]).abs() < 1e-15);
        }
        let mut yp = vec![0.0; 3];
        a.matvec_parallel(&x, &mut yp);
        assert_eq!(y, yp);
    }

    #[test]
    fn transpose_matvec_matches_dense() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        let mut y = vec![0.0; 3];
        a.matvec_transpose(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![1.0, 6.0, 2.0]);
    }

    #[test]
    fn symmetry_defect_detects_asymmetry() {
        let s = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(s.symmetry_defect(), 0.0);
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.5)]).unwrap();
        assert!(s.same_pattern(&a));
        assert!((a.symmetry_defect() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_combination_requires_same_pattern() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 3.0)]).unwrap();
        let c = a.linear_combination(2.0, &b, -1.0).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), -1.0);
        let d = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(a.linear_combination(1.0, &d, 1.0).is_err());
    }

    #[test]
    fn cg_solves_spd_system_to_machine_precision() {
        // 1D Laplacian plus identity: SPD, well conditioned.
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let x = cg_solve(&a, &b, 1e-15, 10 * n).unwrap();
        let err = x
            .iter()
            .zip(&x_true)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "cg error {err}");
    }

    #[test]
    fn cg_rejects_indefinite_matrix() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(cg_solve(&a, &[1.0, 1.0], 1e-12, 100).is_err());
    }
}
