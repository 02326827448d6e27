//! Monolithic space-time systems for the Crank–Nicolson discretization of
//! the reaction–diffusion problem.
//!
//! One time step couples consecutive states through the blocks
//! A = M + (Δt/2)K and B = −M + (Δt/2)K, so the all-at-once operator C is
//! block lower bidiagonal with A on the diagonal and B below it. The
//! initial state is eliminated: its contribution is folded into the first
//! load block, and the unknown vector stacks u_1..u_m time-major.

use crate::mesh::{Level, Mesh};
use crate::sparse::CsrMatrix;
use crate::{fem, Error, Result};

/// Cubic reaction current I(u) = α(u − u_rest)(u − u_th)(u − u_peak);
/// α = 0 turns the reaction off (linear heat equation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonModel {
    pub alpha: f64,
    pub u_rest: f64,
    pub u_th: f64,
    pub u_peak: f64,
}

impl IonModel {
    /// Linear heat problem: no reaction term.
    pub fn linear() -> IonModel {
        IonModel {
            alpha: 0.0,
            u_rest: 0.0,
            u_th: 0.0,
            u_peak: 0.0,
        }
    }

    /// Cubic reaction with the three characteristic potentials.
    pub fn cubic(alpha: f64, u_rest: f64, u_th: f64, u_peak: f64) -> Result<IonModel> {
        if alpha < 0.0 {
            return Err(Error::InvalidConfig(
                "reaction rate alpha must be >= 0".into(),
            ));
        }
        if alpha > 0.0 && !(u_rest < u_th && u_th < u_peak) {
            return Err(Error::InvalidConfig(format!(
                "potentials must be ordered u_rest < u_th < u_peak, got {u_rest}, {u_th}, {u_peak}"
            )));
        }
        Ok(IonModel {
            alpha,
            u_rest,
            u_th,
            u_peak,
        })
    }

    pub fn is_linear(&self) -> bool {
        self.alpha == 0.0
    }

    /// I(u).
    pub fn current(&self, u: f64) -> f64 {
        self.alpha * (u - self.u_rest) * (u - self.u_th) * (u - self.u_peak)
    }

    /// dI/du.
    pub fn derivative(&self, u: f64) -> f64 {
        let a = u - self.u_rest;
        let b = u - self.u_th;
        let c = u - self.u_peak;
        self.alpha * (b * c + a * c + a * b)
    }
}

/// Time-dependent nodal source term.
pub trait Forcing: Sync {
    /// Nodal values of the applied current at time t.
    fn nodal(&self, mesh: &Mesh, t: f64) -> Vec<f64>;
}

impl Forcing for fem::Stimulus {
    fn nodal(&self, mesh: &Mesh, t: f64) -> Vec<f64> {
        fem::Stimulus::nodal(self, mesh, t)
    }
}

/// Adapter turning a pointwise closure f(x, t) into a nodal forcing.
pub struct FnForcing<F: Fn(&[f64; 3], f64) -> f64 + Sync>(pub F);

impl<F: Fn(&[f64; 3], f64) -> f64 + Sync> Forcing for FnForcing<F> {
    fn nodal(&self, mesh: &Mesh, t: f64) -> Vec<f64> {
        mesh.nodes().iter().map(|x| (self.0)(x, t)).collect()
    }
}

/// A space-time coefficient vector: m time blocks of n spatial values,
/// block k (0-based) holding the state at t = (k+1)·Δt.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub level: usize,
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(level: usize, n: usize, m: usize) -> SpaceTimeField {
        SpaceTimeField {
            level,
            n,
            m,
            values: vec![0.0; n * m],
        }
    }

    pub fn from_values(level: usize, n: usize, m: usize, values: Vec<f64>) -> SpaceTimeField {
        assert_eq!(values.len(), n * m, "field length must be n*m");
        SpaceTimeField {
            level,
            n,
            m,
            values,
        }
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

/// The assembled all-at-once system C·u + r(u) = f.
#[derive(Debug, Clone)]
pub struct SpaceTimeSystem {
    pub level_index: usize,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub mass: CsrMatrix,
    pub a_block: CsrMatrix,
    pub b_block: CsrMatrix,
    pub ion: IonModel,
    /// Load vector, n·m entries; the initial state is already folded into
    /// block 1.
    pub load: Vec<f64>,
}

/// Assemble the space-time system on one level: mass and diffusion from the
/// nodal field `g`, trapezoidal load blocks f_k = (Δt/2)(F(t_k) + F(t_{k−1}))
/// with F(t) = M·forcing(t), and an optional nonzero initial state folded
/// into the first block (f_1 ← f_1 − B·u_init).
pub fn build_system(
    level: &Level,
    level_index: usize,
    g_nodal: &[f64],
    ion: IonModel,
    forcing: &dyn Forcing,
    initial_state: Option<&[f64]>,
) -> Result<SpaceTimeSystem> {
    let mesh = &level.mesh;
    let n = mesh.n_nodes();
    let m = level.time.steps;
    let dt = level.time.dt;
    if g_nodal.len() != n {
        return Err(Error::InvalidConfig(format!(
            "diffusion field has {} values but the mesh has {n} nodes",
            g_nodal.len()
        )));
    }
    if let Some(g) = g_nodal.iter().find(|&&g| !(g > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "diffusion field must be uniformly positive, found {g}"
        )));
    }
    let mass = fem::assemble_mass(mesh);
    let stiffness = fem::assemble_stiffness(mesh, g_nodal);
    // A = M + (Δt/2)K and B = −M + (Δt/2)K on the shared pattern.
    let a_block = mass.linear_combination(1.0, &stiffness, 0.5 * dt)?;
    let b_block = mass.linear_combination(-1.0, &stiffness, 0.5 * dt)?;

    let mut load = vec![0.0; n * m];
    let mut prev = forcing.nodal(mesh, 0.0);
    if prev.len() != n {
        return Err(Error::InvalidConfig("forcing returned wrong length".into()));
    }
    let mut scratch = vec![0.0; n];
    for k in 0..m {
        let t_next = (k as f64 + 1.0) * dt;
        let next = forcing.nodal(mesh, t_next);
        if next.len() != n {
            return Err(Error::InvalidConfig("forcing returned wrong length".into()));
        }
        for i in 0..n {
            scratch[i] = 0.5 * dt * (prev[i] + next[i]);
        }
        mass.matvec(&scratch, &mut load[k * n..(k + 1) * n]);
        prev = next;
    }
    if let Some(u0) = initial_state {
        if u0.len() != n {
            return Err(Error::InvalidConfig(format!(
                "initial state has {} values but the mesh has {n} nodes",
                u0.len()
            )));
        }
        b_block.matvec(u0, &mut scratch);
        for i in 0..n {
            load[i] -= scratch[i];
        }
    }
    Ok(SpaceTimeSystem {
        level_index,
        n,
        m,
        dt,
        mass,
        a_block,
        b_block,
        ion,
        load,
    })
}

impl SpaceTimeSystem {
    pub fn n_unknowns(&self) -> usize {
        self.n * self.m
    }

    pub fn zero_field(&self) -> SpaceTimeField {
        SpaceTimeField::zeros(self.level_index, self.n, self.m)
    }

    /// y = C·u applied block-wise: y_k = A·u_k + B·u_{k−1} (no B term for
    /// k = 1; the initial state lives in the load).
    pub fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(u.len(), n * self.m);
        assert_eq!(out.len(), n * self.m);
        for k in 0..self.m {
            self.a_block
                .matvec(&u[k * n..(k + 1) * n], &mut out[k * n..(k + 1) * n]);
            if k > 0 {
                self.b_block
                    .matvec_acc(1.0, &u[(k - 1) * n..k * n], &mut out[k * n..(k + 1) * n]);
            }
        }
    }

    /// r(u): block k equals Δt·M·I(u_k), the reaction current tested
    /// against the mass matrix.
    pub fn ionic_residual(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * self.m];
        if self.ion.is_linear() {
            return out;
        }
        let mut cur = vec![0.0; n];
        for k in 0..self.m {
            for i in 0..n {
                cur[i] = self.dt * self.ion.current(u[k * n + i]);
            }
            self.mass.matvec(&cur, &mut out[k * n..(k + 1) * n]);
        }
        out
    }

    /// Full nonlinear residual F(u) = C·u + r(u) − f.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * self.m];
        self.apply_linear(u, &mut out);
        if !self.ion.is_linear() {
            let mut cur = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            for k in 0..self.m {
                for i in 0..n {
                    cur[i] = self.dt * self.ion.current(u[k * n + i]);
                }
                self.mass.matvec(&cur, &mut scratch);
                for i in 0..n {
                    out[k * n + i] += scratch[i];
                }
            }
        }
        for (o, f) in out.iter_mut().zip(&self.load) {
            *o -= f;
        }
        out
    }

    /// Materialize the linear operator C as one CSR matrix (the Jacobian's
    /// sparsity pattern and its value when the reaction is off).
    pub fn spacetime_matrix(&self) -> CsrMatrix {
        let n = self.n;
        let m = self.m;
        let nnz_a = self.a_block.nnz();
        let nnz_b = self.b_block.nnz();
        let mut row_ptr = Vec::with_capacity(n * m + 1);
        let mut col_idx = Vec::with_capacity(m * nnz_a + (m - 1) * nnz_b);
        let mut values = Vec::with_capacity(col_idx.capacity());
        row_ptr.push(0);
        for k in 0..m {
            for i in 0..n {
                if k > 0 {
                    let lo = self.b_block.row_ptr()[i];
                    let hi = self.b_block.row_ptr()[i + 1];
                    for e in lo..hi {
                        col_idx.push((k - 1) * n + self.b_block.col_idx()[e]);
                        values.push(self.b_block.values()[e]);
                    }
                }
                let lo = self.a_block.row_ptr()[i];
                let hi = self.a_block.row_ptr()[i + 1];
                for e in lo..hi {
                    col_idx.push(k * n + self.a_block.col_idx()[e]);
                    values.push(self.a_block.values()[e]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        CsrMatrix::from_raw(n * m, n * m, row_ptr, col_idx, values)
            .expect("block assembly produces a valid pattern")
    }

    /// Overwrite `jac`'s values with J(u) = C + Δt·blockdiag(M·diag(I'(u_k))).
    /// `jac` must have been produced by `spacetime_matrix`.
    pub fn update_jacobian_values(&self, u: &[f64], jac: &mut CsrMatrix) {
        let n = self.n;
        let m = self.m;
        assert_eq!(jac.n_rows(), n * m, "jacobian shape mismatch");
        let mut deriv = vec![0.0; n];
        let mut offset = 0;
        let values = jac.values_mut();
        for k in 0..m {
            if !self.ion.is_linear() {
                for i in 0..n {
                    deriv[i] = self.ion.derivative(u[k * n + i]);
                }
            }
            for i in 0..n {
                if k > 0 {
                    let lo = self.b_block.row_ptr()[i];
                    let hi = self.b_block.row_ptr()[i + 1];
                    for e in lo..hi {
                        values[offset] = self.b_block.values()[e];
                        offset += 1;
                    }
                }
                let lo = self.a_block.row_ptr()[i];
                let hi = self.a_block.row_ptr()[i + 1];
                for e in lo..hi {
                    let j = self.a_block.col_idx()[e];
                    let mut v = self.a_block.values()[e];
                    if !self.ion.is_linear() {
                        // Column scaling: (M·diag(d))_ij = M_ij·d_j.
                        v += self.dt * self.mass.values()[e] * deriv[j];
                    }
                    values[offset] = v;
                    offset += 1;
                }
            }
        }
        debug_assert_eq!(offset, values.len());
    }
}
