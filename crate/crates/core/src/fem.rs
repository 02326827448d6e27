//! Piecewise-linear finite element assembly on simplicial meshes: mass and
//! diffusion stiffness matrices, the Gaussian stimulus current, and a small
//! Dirichlet utility for verification runs.
//!
//! Integrals of products of hat functions are exact: the element mass
//! matrix is V/((d+1)(d+2))·(1+δ_ij) and the element stiffness matrix is
//! G_e·V·(∇λ_i·∇λ_j) with the diffusion coefficient averaged over the
//! element's vertices.

use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// Constant-in-space gradients of the barycentric basis plus the element
/// volume. Entry 0 is ∇λ_0 = -Σ_{i≥1} ∇λ_i.
fn element_gradients(mesh: &Mesh, e: usize) -> ([[f64; 3]; 4], f64) {
    let v = mesh.element(e);
    let d = mesh.dim();
    let x0 = mesh.node(v[0]);
    let mut grads = [[0.0; 3]; 4];
    let volume;
    match d {
        1 => {
            let h = mesh.node(v[1])[0] - x0[0];
            grads[1][0] = 1.0 / h;
            volume = h;
        }
        2 => {
            let a = diff(mesh.node(v[1]), x0);
            let b = diff(mesh.node(v[2]), x0);
            let det = a[0] * b[1] - a[1] * b[0];
            // Rows of the inverse edge matrix.
            grads[1] = [b[1] / det, -b[0] / det, 0.0];
            grads[2] = [-a[1] / det, a[0] / det, 0.0];
            volume = det / 2.0;
        }
        3 => {
            let a = diff(mesh.node(v[1]), x0);
            let b = diff(mesh.node(v[2]), x0);
            let c = diff(mesh.node(v[3]), x0);
            let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
            let cof = |p: [f64; 3], q: [f64; 3]| {
                [
                    p[1] * q[2] - p[2] * q[1],
                    p[2] * q[0] - p[0] * q[2],
                    p[0] * q[1] - p[1] * q[0],
                ]
            };
            let bc = cof(b, c);
            let ca = cof(c, a);
            let ab = cof(a, b);
            for k in 0..3 {
                grads[1][k] = bc[k] / det;
                grads[2][k] = ca[k] / det;
                grads[3][k] = ab[k] / det;
            }
            volume = det / 6.0;
        }
        _ => unreachable!(),
    }
    for k in 0..3 {
        let mut s = 0.0;
        for i in 1..=d {
            s += grads[i][k];
        }
        grads[0][k] = -s;
    }
    (grads, volume)
}

fn diff(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Consistent mass matrix M with ∫φ_iφ_j integrated exactly.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let d = mesh.dim();
    let nv = d + 1;
    let scale = 1.0 / ((d + 1) * (d + 2)) as f64;
    let mut triplets = Vec::with_capacity(mesh.n_elements() * nv * nv);
    for e in 0..mesh.n_elements() {
        let verts = mesh.element(e);
        let vol = mesh.element_volume(e);
        for (a, &i) in verts.iter().enumerate() {
            for (b, &j) in verts.iter().enumerate() {
                let w = if a == b { 2.0 } else { 1.0 };
                triplets.push((i, j, scale * w * vol));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &triplets)
        .expect("mass assembly produced invalid triplets")
}

/// Diffusion stiffness matrix for nodal coefficient `g_nodal`, using the
/// element-wise vertex average of the coefficient. Homogeneous Neumann
/// conditions hold by omission (no boundary rows are touched).
pub fn assemble_stiffness(mesh: &Mesh, g_nodal: &[f64]) -> CsrMatrix {
    assert_eq!(g_nodal.len(), mesh.n_nodes(), "coefficient length mismatch");
    let d = mesh.dim();
    let nv = d + 1;
    let mut triplets = Vec::with_capacity(mesh.n_elements() * nv * nv);
    for e in 0..mesh.n_elements() {
        let verts = mesh.element(e);
        let (grads, vol) = element_gradients(mesh, e);
        let g_e = verts.iter().map(|&v| g_nodal[v]).sum::<f64>() / nv as f64;
        for (a, &i) in verts.iter().enumerate() {
            for (b, &j) in verts.iter().enumerate() {
                let dot = grads[a][0] * grads[b][0]
                    + grads[a][1] * grads[b][1]
                    + grads[a][2] * grads[b][2];
                triplets.push((i, j, g_e * vol * dot));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &triplets)
        .expect("stiffness assembly produced invalid triplets")
}

/// Applied current: a Gaussian bump in space, switched on for t in [0, t1).
///
/// I(x, t) = (baseline + amplitude·exp(-|x-center|²/width²)) · χ_[0,t1)(t)
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    pub amplitude: f64,
    pub baseline: f64,
    pub center: [f64; 3],
    pub width: f64,
    pub t1: f64,
}

impl Stimulus {
    /// Nodal values of the current at time `t` (zero outside [0, t1)).
    pub fn nodal(&self, mesh: &Mesh, t: f64) -> Vec<f64> {
        if t < 0.0 || t >= self.t1 {
            return vec![0.0; mesh.n_nodes()];
        }
        let inv_w2 = 1.0 / (self.width * self.width);
        mesh.nodes()
            .iter()
            .map(|x| {
                let d = diff(*x, self.center);
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                self.baseline + self.amplitude * (-r2 * inv_w2).exp()
            })
            .collect()
    }

    /// A stimulus that is identically zero.
    pub fn off() -> Stimulus {
        Stimulus {
            amplitude: 0.0,
            baseline: 0.0,
            center: [0.0; 3],
            width: 1.0,
            t1: 0.0,
        }
    }
}

/// Replace the listed rows by identity rows and pin the right-hand side,
/// for verification problems with essential boundary values. The sparsity
/// pattern is preserved (off-diagonal entries are zeroed in place).
pub fn apply_dirichlet(a: &mut CsrMatrix, rhs: &mut [f64], constraints: &[(usize, f64)]) {
    for &(row, value) in constraints {
        let (start, end) = (a.row_ptr()[row], a.row_ptr()[row + 1]);
        let cols: Vec<usize> = a.col_idx()[start..end].to_vec();
        for (k, j) in cols.iter().enumerate() {
            a.values_mut()[start + k] = if *j == row { 1.0 } else { 0.0 };
        }
        rhs[row] = value;
    }
}
