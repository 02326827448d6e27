//! Preconditioned Krylov linear algebra: zero-fill incomplete LU and a
//! right-preconditioned restarted GMRES.
//!
//! ILU(0) keeps exactly the sparsity pattern of the input matrix; an
//! optional row partition drops couplings between contiguous row chunks,
//! factoring each chunk independently (the shared-memory analogue of a
//! block-Jacobi/ILU preconditioner over time-block chunks).

use crate::sparse::{norm2, CsrMatrix};
use crate::{Error, Result};

/// Zero-fill ILU factorization. L (unit diagonal, implicit) and U share the
/// storage in the original CSR layout.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag_idx: Vec<usize>,
    /// Chunk id per row; entries coupling different chunks are ignored.
    chunk_of: Vec<usize>,
}

impl Ilu0 {
    /// Factor the whole matrix (single chunk).
    pub fn factor(a: &CsrMatrix) -> Result<Ilu0> {
        Self::factor_partitioned(a, &[a.n_rows()])
    }

    /// Factor with a row partition given by ascending chunk end offsets
    /// (the last must equal the number of rows). Entries whose row and
    /// column fall in different chunks are treated as zero.
    pub fn factor_partitioned(a: &CsrMatrix, chunk_ends: &[usize]) -> Result<Ilu0> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(Error::InvalidConfig("ILU(0) needs a square matrix".into()));
        }
        if chunk_ends.is_empty() || *chunk_ends.last().unwrap() != n {
            return Err(Error::InvalidConfig(
                "chunk ends must be nonempty and end at the row count".into(),
            ));
        }
        let mut chunk_of = vec![0usize; n];
        let mut begin = 0;
        for (c, &end) in chunk_ends.iter().enumerate() {
            if end <= begin {
                return Err(Error::InvalidConfig(
                    "chunk ends must be strictly increasing".into(),
                ));
            }
            for row in begin..end {
                chunk_of[row] = c;
            }
            begin = end;
        }
        let mut diag_idx = vec![usize::MAX; n];
        for i in 0..n {
            for e in a.row_ptr()[i]..a.row_ptr()[i + 1] {
                if a.col_idx()[e] == i {
                    diag_idx[i] = e;
                    break;
                }
            }
            if diag_idx[i] == usize::MAX {
                return Err(Error::IluBreakdown { row: i });
            }
        }
        let mut ilu = Ilu0 {
            n,
            row_ptr: a.row_ptr().to_vec(),
            col_idx: a.col_idx().to_vec(),
            values: a.values().to_vec(),
            diag_idx,
            chunk_of,
        };
        ilu.numeric_factor(a)?;
        Ok(ilu)
    }

    /// Redo the numeric factorization for a matrix with the identical
    /// pattern (Newton updates reuse the symbolic work).
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<()> {
        debug_assert_eq!(a.row_ptr(), &self.row_ptr[..]);
        debug_assert_eq!(a.col_idx(), &self.col_idx[..]);
        self.values.copy_from_slice(a.values());
        self.numeric_factor(a)
    }

    fn numeric_factor(&mut self, a: &CsrMatrix) -> Result<()> {
        self.values.copy_from_slice(a.values());
        let n = self.n;
        for i in 0..n {
            let row_begin = self.row_ptr[i];
            let row_end = self.row_ptr[i + 1];
            for e in row_begin..row_end {
                let k = self.col_idx[e];
                if k >= i {
                    break;
                }
                if self.chunk_of[k] != self.chunk_of[i] {
                    continue;
                }
                let pivot = self.values[self.diag_idx[k]];
                if pivot == 0.0 {
                    return Err(Error::IluBreakdown { row: k });
                }
                let factor = self.values[e] / pivot;
                self.values[e] = factor;
                // Row i minus factor × (upper part of row k), restricted to
                // the pattern of row i.
                for e2 in self.diag_idx[k] + 1..self.row_ptr[k + 1] {
                    let j = self.col_idx[e2];
                    if self.chunk_of[j] != self.chunk_of[k] {
                        continue;
                    }
                    if let Some(pos) = self.find_in_row(i, j) {
                        self.values[pos] -= factor * self.values[e2];
                    }
                }
            }
            if self.values[self.diag_idx[i]] == 0.0 {
                return Err(Error::IluBreakdown { row: i });
            }
        }
        Ok(())
    }

    fn find_in_row(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// z = (LU)⁻¹ r by forward then backward substitution.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(r.len(), n);
        debug_assert_eq!(z.len(), n);
        for i in 0..n {
            let mut acc = r[i];
            for e in self.row_ptr[i]..self.diag_idx[i] {
                let j = self.col_idx[e];
                if self.chunk_of[j] == self.chunk_of[i] {
                    acc -= self.values[e] * z[j];
                }
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for e in self.diag_idx[i] + 1..self.row_ptr[i + 1] {
                let j = self.col_idx[e];
                if self.chunk_of[j] == self.chunk_of[i] {
                    acc -= self.values[e] * z[j];
                }
            }
            z[i] = acc / self.values[self.diag_idx[i]];
        }
    }
}

/// Restarted GMRES controls.
#[derive(Debug, Clone)]
pub struct GmresOptions {
    pub restart: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iterations: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 30,
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_iterations: 2000,
        }
    }
}

/// Converged solve summary.
#[derive(Debug, Clone, Copy)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Right-preconditioned restarted GMRES: solves A·x = b, using `x` as the
/// initial guess and overwriting it with the solution. Convergence demands
/// ‖b − A·x‖₂ ≤ max(abs_tol, rel_tol·‖b‖₂), checked against the true
/// (explicitly recomputed) residual at every restart. A restart cycle that
/// makes no progress is reported as stagnation.
pub fn gmres(
    a: &CsrMatrix,
    precond: Option<&Ilu0>,
    b: &[f64],
    x: &mut [f64],
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = a.n_rows();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let restart = opts.restart.max(1);
    let norm_b = norm2(b);
    let tol = opts.abs_tol.max(opts.rel_tol * norm_b);

    let mut r = vec![0.0; n];
    let residual_into = |x: &[f64], r: &mut Vec<f64>| {
        a.matvec(x, r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
    };
    residual_into(x, &mut r);
    let mut beta = norm2(&r);
    let mut iterations = 0usize;
    if beta <= tol {
        return Ok(GmresOutcome {
            iterations,
            residual: beta,
        });
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    let mut h = vec![0.0; (restart + 1) * restart];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    loop {
        let cycle_start = beta;
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        let mut inner_res = beta;
        for j in 0..restart {
            // w = A·M⁻¹·v_j.
            match precond {
                Some(p) => p.solve(&basis[j], &mut z),
                None => z.copy_from_slice(&basis[j]),
            }
            a.matvec(&z, &mut w);
            // Modified Gram–Schmidt.
            for (i, v) in basis.iter().enumerate() {
                let hij = crate::sparse::dot(&w, v);
                h[i * restart + j] = hij;
                for (wv, vv) in w.iter_mut().zip(v) {
                    *wv -= hij * vv;
                }
            }
            let hjj = norm2(&w);
            h[(j + 1) * restart + j] = hjj;
            // Apply accumulated rotations to the new column.
            for i in 0..j {
                let a0 = h[i * restart + j];
                let a1 = h[(i + 1) * restart + j];
                h[i * restart + j] = cs[i] * a0 + sn[i] * a1;
                h[(i + 1) * restart + j] = -sn[i] * a0 + cs[i] * a1;
            }
            let a0 = h[j * restart + j];
            let a1 = h[(j + 1) * restart + j];
            let rho = (a0 * a0 + a1 * a1).sqrt();
            if rho == 0.0 {
                // Exact breakdown: g already describes the converged state.
                k_used = j;
                break;
            }
            cs[j] = a0 / rho;
            sn[j] = a1 / rho;
            h[j * restart + j] = rho;
            h[(j + 1) * restart + j] = 0.0;
            let g0 = g[j];
            g[j] = cs[j] * g0;
            g[j + 1] = -sn[j] * g0;
            inner_res = g[j + 1].abs();
            iterations += 1;
            k_used = j + 1;
            if hjj == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hjj).collect());
            if inner_res <= tol || iterations >= opts.max_iterations {
                break;
            }
        }
        let _ = inner_res;
        if k_used > 0 {
            // Back-substitute H y = g and expand x += M⁻¹ (V y).
            let mut y = vec![0.0; k_used];
            for i in (0..k_used).rev() {
                let mut acc = g[i];
                for j in i + 1..k_used {
                    acc -= h[i * restart + j] * y[j];
                }
                y[i] = acc / h[i * restart + i];
            }
            w.iter_mut().for_each(|v| *v = 0.0);
            for (j, &yj) in y.iter().enumerate() {
                for (wv, vv) in w.iter_mut().zip(&basis[j]) {
                    *wv += yj * vv;
                }
            }
            match precond {
                Some(p) => p.solve(&w, &mut z),
                None => z.copy_from_slice(&w),
            }
            for i in 0..n {
                x[i] += z[i];
            }
        }
        residual_into(x, &mut r);
        let new_beta = norm2(&r);
        if new_beta <= tol {
            return Ok(GmresOutcome {
                iterations,
                residual: new_beta,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::GmresDidNotConverge {
                relative_residual: if norm_b > 0.0 {
                    new_beta / norm_b
                } else {
                    new_beta
                },
                tolerance: opts.rel_tol,
                iterations,
            });
        }
        if new_beta >= cycle_start * (1.0 - 1e-10) {
            return Err(Error::GmresStagnation {
                relative_residual: if norm_b > 0.0 {
                    new_beta / norm_b
                } else {
                    new_beta
                },
                iterations,
            });
        }
        beta = new_beta;
    }
}
