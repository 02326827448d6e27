//! Field transfer between adjacent hierarchy levels: P1 interpolation for
//! spatial prolongation, L2 projection (exact or row-sum lumped) for
//! spatial restriction, bisection operators in time, and their space-time
//! tensor products applied block-wise without ever materializing a
//! Kronecker matrix.

use crate::mesh::MeshHierarchy;
use crate::sparse::{cg_solve, CsrMatrix};
use crate::system::SpaceTimeField;
use crate::{fem, Error, Result};

/// How the spatial restriction inverts the coarse mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Exact L2 projection: solve M_c x = I_hᵀ M_f v per block.
    Exact,
    /// Replace M_c by its row-sum diagonal (local, one sparse product).
    Lumped,
}

fn node_coords(nodes_per_dim: usize, dim: usize, idx: usize) -> [usize; 3] {
    let nx = nodes_per_dim;
    match dim {
        1 => [idx, 0, 0],
        2 => [idx % nx, idx / nx, 0],
        _ => [idx % nx, (idx / nx) % nx, idx / (nx * nx)],
    }
}

fn node_index(nodes_per_dim: usize, dim: usize, c: [usize; 3]) -> usize {
    let nx = nodes_per_dim;
    match dim {
        1 => c[0],
        2 => c[0] + nx * c[1],
        _ => c[0] + nx * (c[1] + nx * c[2]),
    }
}

/// P1 interpolation matrix I_h (n_f × n_c) from `coarse_level` to the next
/// finer level: coinciding nodes copy their coarse value; each new node is
/// the midpoint of a coarse mesh edge and averages that edge's endpoints.
pub fn spatial_interpolation(hier: &MeshHierarchy, coarse_level: usize) -> Result<CsrMatrix> {
    let fine_level = coarse_level + 1;
    if fine_level > hier.finest() {
        return Err(Error::InvalidConfig(format!(
            "level {coarse_level} has no finer neighbor"
        )));
    }
    let dim = hier.dim();
    let coarse = &hier.level(coarse_level).mesh;
    let fine = &hier.level(fine_level).mesh;
    let ncx = coarse.cells_per_dim() + 1;
    let nfx = fine.cells_per_dim() + 1;
    let mut triplets = Vec::with_capacity(2 * fine.n_nodes());
    for fidx in 0..fine.n_nodes() {
        let c = node_coords(nfx, dim, fidx);
        let p = [c[0] % 2, c[1] % 2, c[2] % 2];
        if p == [0, 0, 0] {
            let ci = node_index(ncx, dim, [c[0] / 2, c[1] / 2, c[2] / 2]);
            triplets.push((fidx, ci, 1.0));
        } else {
            // Midpoint of the coarse edge from the even corner a to a + p;
            // in the simplicial subdivision that diagonal is always an
            // existing edge, so P1 interpolation averages its endpoints.
            let a = [(c[0] - p[0]) / 2, (c[1] - p[1]) / 2, (c[2] - p[2]) / 2];
            let b = [a[0] + p[0], a[1] + p[1], a[2] + p[2]];
            triplets.push((fidx, node_index(ncx, dim, a), 0.5));
            triplets.push((fidx, node_index(ncx, dim, b), 0.5));
        }
    }
    CsrMatrix::from_triplets(fine.n_nodes(), coarse.n_nodes(), &triplets)
}

/// Transfer operators between one adjacent pair of levels.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub coarse_level: usize,
    pub fine_level: usize,
    n_c: usize,
    n_f: usize,
    m_c: usize,
    m_f: usize,
    interp: CsrMatrix,
    mass_fine: CsrMatrix,
    mass_coarse: CsrMatrix,
    lumped_inv: Vec<f64>,
    mode: ProjectionMode,
}

impl TransferPair {
    pub fn new(
        hier: &MeshHierarchy,
        coarse_level: usize,
        mode: ProjectionMode,
    ) -> Result<TransferPair> {
        let fine_level = coarse_level + 1;
        let interp = spatial_interpolation(hier, coarse_level)?;
        let coarse = hier.level(coarse_level);
        let fine = hier.level(fine_level);
        let m_c = coarse.time.steps;
        let m_f = fine.time.steps;
        if m_f != 2 * m_c {
            return Err(Error::InvalidConfig(format!(
                "time steps must double between levels ({m_c} to {m_f})"
            )));
        }
        let mass_coarse = fem::assemble_mass(&coarse.mesh);
        let mass_fine = fem::assemble_mass(&fine.mesh);
        let lumped: Vec<f64> = mass_coarse.row_sums();
        if lumped.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidConfig(
                "lumped coarse mass has a nonpositive entry".into(),
            ));
        }
        Ok(TransferPair {
            coarse_level,
            fine_level,
            n_c: coarse.mesh.n_nodes(),
            n_f: fine.mesh.n_nodes(),
            m_c,
            m_f,
            interp,
            mass_fine,
            mass_coarse,
            lumped_inv: lumped.iter().map(|d| 1.0 / d).collect(),
            mode,
        })
    }

    pub fn interpolation_matrix(&self) -> &CsrMatrix {
        &self.interp
    }

    /// I_h v: evaluate the coarse P1 function at the fine nodes.
    pub fn prolong_spatial(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_c);
        let mut out = vec![0.0; self.n_f];
        self.interp.matvec(v, &mut out);
        out
    }

    /// P_h v: L2-project a fine nodal field onto the coarse space.
    pub fn restrict_spatial(&self, v: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(v.len(), self.n_f);
        let mut mf = vec![0.0; self.n_f];
        self.mass_fine.matvec(v, &mut mf);
        let mut rhs = vec![0.0; self.n_c];
        self.interp.matvec_transpose(&mf, &mut rhs);
        match self.mode {
            ProjectionMode::Exact => cg_solve(&self.mass_coarse, &rhs, 1e-15, 20 * self.n_c + 100),
            ProjectionMode::Lumped => Ok(rhs
                .iter()
                .zip(&self.lumped_inv)
                .map(|(r, d)| r * d)
                .collect()),
        }
    }

    /// (I_t ⊗ I_h) u: spatial interpolation per block, then linear
    /// interpolation in time. The first fine block copies the first coarse
    /// block (the state between the eliminated initial time and the first
    /// coarse node), even blocks coincide with coarse nodes, and the
    /// remaining odd blocks average their coarse neighbors.
    pub fn prolong(&self, u: &SpaceTimeField) -> SpaceTimeField {
        assert_eq!(u.level, self.coarse_level, "field level mismatch");
        assert_eq!((u.n, u.m), (self.n_c, self.m_c), "field shape mismatch");
        let spatial: Vec<Vec<f64>> = (0..self.m_c)
            .map(|k| self.prolong_spatial(u.block(k)))
            .collect();
        let mut out = SpaceTimeField::zeros(self.fine_level, self.n_f, self.m_f);
        for j in 0..self.m_f {
            let dst = out.block_mut(j);
            if j == 0 {
                dst.copy_from_slice(&spatial[0]);
            } else if j % 2 == 1 {
                dst.copy_from_slice(&spatial[(j - 1) / 2]);
            } else {
                let a = &spatial[j / 2 - 1];
                let b = &spatial[j / 2];
                for i in 0..self.n_f {
                    dst[i] = 0.5 * (a[i] + b[i]);
                }
            }
        }
        out
    }

    /// (P_t ⊗ P_h) u: keep every second fine block (the ones coinciding
    /// with coarse time nodes), then L2-project each in space.
    pub fn restrict(&self, u: &SpaceTimeField) -> Result<SpaceTimeField> {
        assert_eq!(u.level, self.fine_level, "field level mismatch");
        assert_eq!((u.n, u.m), (self.n_f, self.m_f), "field shape mismatch");
        let mut out = SpaceTimeField::zeros(self.coarse_level, self.n_c, self.m_c);
        for k in 0..self.m_c {
            let restricted = self.restrict_spatial(u.block(2 * k + 1))?;
            out.block_mut(k).copy_from_slice(&restricted);
        }
        Ok(out)
    }
}

/// Prolong a field upward through a chain of adjacent pairs until it lives
/// on `target_level`. `pairs[l]` must transfer level l to level l+1.
pub fn prolong_through(
    pairs: &[TransferPair],
    field: &SpaceTimeField,
    target_level: usize,
) -> SpaceTimeField {
    let mut cur = field.clone();
    while cur.level < target_level {
        cur = pairs[cur.level].prolong(&cur);
    }
    cur
}
