//! Nested structured simplicial meshes on the unit interval/square/cube
//! scaled to a configurable extent, plus the matching dyadic time grids.
//!
//! Level l is produced by bisecting every cell of level l-1 in each
//! coordinate direction and doubling the time step count, so coarse nodes
//! coincide with a subset of fine nodes and coarse elements are exact
//! unions of fine elements (Kuhn/Freudenthal subdivision with a fixed
//! diagonal orientation is self-similar under dyadic refinement).

use crate::{Error, Result};

/// A structured simplicial mesh: intervals (d=1), right triangles from
/// diagonal-split quads (d=2), or the six-tetrahedra Kuhn subdivision of
/// each cube (d=3).
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    cells_per_dim: usize,
    extent: f64,
    h: f64,
    nodes: Vec<[f64; 3]>,
    elements: Vec<usize>,
}

/// Uniform time grid with `steps` Crank-Nicolson blocks on (0, t_final];
/// the initial time t=0 carries the (eliminated) initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub dt: f64,
    pub t_final: f64,
}

/// One hierarchy level: spatial mesh plus its time grid.
#[derive(Debug, Clone)]
pub struct Level {
    pub mesh: Mesh,
    pub time: TimeGrid,
}

/// The full nested hierarchy, coarsest level first.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    dim: usize,
    levels: Vec<Level>,
    parent_maps: Vec<Vec<usize>>,
}

impl Mesh {
    /// Build the structured mesh with `cells_per_dim` cells per direction on
    /// [0, extent]^dim.
    pub fn structured(dim: usize, cells_per_dim: usize, extent: f64) -> Result<Mesh> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidConfig(format!(
                "dimension {dim} not in 1..=3"
            )));
        }
        if cells_per_dim == 0 {
            return Err(Error::InvalidConfig("cells_per_dim must be >= 1".into()));
        }
        if !(extent > 0.0) {
            return Err(Error::InvalidConfig("extent must be positive".into()));
        }
        let k = cells_per_dim;
        let h = extent / k as f64;
        let np = k + 1;
        let mut nodes = Vec::new();
        let zrange = if dim == 3 { np } else { 1 };
        let yrange = if dim >= 2 { np } else { 1 };
        for z in 0..zrange {
            for y in 0..yrange {
                for x in 0..np {
                    nodes.push([x as f64 * h, y as f64 * h, z as f64 * h]);
                }
            }
        }
        let idx = |x: usize, y: usize, z: usize| x + np * (y + if dim == 3 { np * z } else { 0 });

        let mut elements = Vec::new();
        match dim {
            1 => {
                for x in 0..k {
                    elements.extend_from_slice(&[x, x + 1]);
                }
            }
            2 => {
                for y in 0..k {
                    for x in 0..k {
                        let c00 = idx(x, y, 0);
                        let c10 = idx(x + 1, y, 0);
                        let c01 = idx(x, y + 1, 0);
                        let c11 = idx(x + 1, y + 1, 0);
                        // Both triangles share the (c00, c11) diagonal.
                        elements.extend_from_slice(&[c00, c10, c11]);
                        elements.extend_from_slice(&[c00, c11, c01]);
                    }
                }
            }
            3 => {
                const PERMS: [[usize; 3]; 6] = [
                    [0, 1, 2],
                    [0, 2, 1],
                    [1, 0, 2],
                    [1, 2, 0],
                    [2, 0, 1],
                    [2, 1, 0],
                ];
                for z in 0..k {
                    for y in 0..k {
                        for x in 0..k {
                            for perm in PERMS {
                                let mut coords = [[x, y, z]; 4];
                                for step in 0..3 {
                                    coords[step + 1] = coords[step];
                                    coords[step + 1][perm[step]] += 1;
                                }
                                let mut tet = [
                                    idx(coords[0][0], coords[0][1], coords[0][2]),
                                    idx(coords[1][0], coords[1][1], coords[1][2]),
                                    idx(coords[2][0], coords[2][1], coords[2][2]),
                                    idx(coords[3][0], coords[3][1], coords[3][2]),
                                ];
                                if permutation_is_odd(perm) {
                                    tet.swap(1, 2);
                                }
                                elements.extend_from_slice(&tet);
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(Mesh {
            dim,
            cells_per_dim,
            extent,
            h,
            nodes,
            elements,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Lattice spacing (also the element diameter along each axis).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    /// Vertex indices of element `e` (length dim+1).
    pub fn element(&self, e: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.elements[e * s..(e + 1) * s]
    }

    /// Signed volume of the simplex (positive for all stored elements).
    pub fn element_volume(&self, e: usize) -> f64 {
        let v = self.element(e);
        let x0 = self.nodes[v[0]];
        let det = match self.dim {
            1 => self.nodes[v[1]][0] - x0[0],
            2 => {
                let a = sub(self.nodes[v[1]], x0);
                let b = sub(self.nodes[v[2]], x0);
                a[0] * b[1] - a[1] * b[0]
            }
            3 => {
                let a = sub(self.nodes[v[1]], x0);
                let b = sub(self.nodes[v[2]], x0);
                let c = sub(self.nodes[v[3]], x0);
                a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0])
            }
            _ => unreachable!(),
        };
        det / factorial(self.dim)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_volume(e)).sum()
    }

    /// Barycentric coordinates of point `p` with respect to element `e`.
    pub fn barycentric(&self, e: usize, p: [f64; 3]) -> Vec<f64> {
        let v = self.element(e);
        let d = self.dim;
        let x0 = self.nodes[v[0]];
        let mut mat = nalgebra::DMatrix::zeros(d, d);
        let mut rhs = nalgebra::DVector::zeros(d);
        for c in 0..d {
            let edge = sub(self.nodes[v[c + 1]], x0);
            for r in 0..d {
                mat[(r, c)] = edge[r];
            }
        }
        for r in 0..d {
            rhs[r] = p[r] - x0[r];
        }
        let sol = mat
            .lu()
            .solve(&rhs)
            .expect("degenerate element in barycentric evaluation");
        let mut lambda = Vec::with_capacity(d + 1);
        lambda.push(1.0 - sol.iter().sum::<f64>());
        lambda.extend(sol.iter().copied());
        lambda
    }
}

fn permutation_is_odd(p: [usize; 3]) -> bool {
    let mut inversions = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 1
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn factorial(d: usize) -> f64 {
    (1..=d).product::<usize>() as f64
}

/// Build the hierarchy with levels 0..=finest_level. Level l has
/// base_cells·2^l cells per direction (h halves) and base_steps·2^l time
/// steps (dt halves).
pub fn build_hierarchy(
    dim: usize,
    finest_level: usize,
    base_cells: usize,
    extent: f64,
    t_final: f64,
    base_steps: usize,
) -> Result<MeshHierarchy> {
    if base_steps == 0 {
        return Err(Error::InvalidConfig("base_steps must be >= 1".into()));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidConfig("t_final must be positive".into()));
    }
    let mut levels = Vec::with_capacity(finest_level + 1);
    for l in 0..=finest_level {
        let scale = 1usize << l;
        let mesh = Mesh::structured(dim, base_cells * scale, extent)?;
        let steps = base_steps * scale;
        levels.push(Level {
            mesh,
            time: TimeGrid {
                steps,
                dt: t_final / steps as f64,
                t_final,
            },
        });
    }
    let mut parent_maps = Vec::with_capacity(finest_level);
    for l in 0..finest_level {
        let coarse = &levels[l].mesh;
        let fine = &levels[l + 1].mesh;
        let ncp = coarse.cells_per_dim + 1;
        let nfp = fine.cells_per_dim + 1;
        let mut map = Vec::with_capacity(coarse.n_nodes());
        for c in 0..coarse.n_nodes() {
            let (x, y, z) = lattice_coords(c, ncp, dim);
            map.push(lattice_index(2 * x, 2 * y, 2 * z, nfp, dim));
        }
        parent_maps.push(map);
    }
    Ok(MeshHierarchy {
        dim,
        levels,
        parent_maps,
    })
}

fn lattice_coords(i: usize, np: usize, dim: usize) -> (usize, usize, usize) {
    match dim {
        1 => (i, 0, 0),
        2 => (i % np, i / np, 0),
        3 => (i % np, (i / np) % np, i / (np * np)),
        _ => unreachable!(),
    }
}

fn lattice_index(x: usize, y: usize, z: usize, np: usize, dim: usize) -> usize {
    x + np * (y + if dim == 3 { np * z } else { 0 })
}

impl MeshHierarchy {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    /// Index of the finest level.
    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    /// For each node of level `coarse_level`, the coinciding node index on
    /// level `coarse_level + 1`.
    pub fn parent_map(&self, coarse_level: usize) -> &[usize] {
        &self.parent_maps[coarse_level]
    }

    /// Map a coarse node index from `from_level` to the coinciding node on
    /// the (finer) `to_level`.
    pub fn node_on_finer(&self, from_level: usize, to_level: usize, node: usize) -> usize {
        let mut i = node;
        for l in from_level..to_level {
            i = self.parent_maps[l][i];
        }
        i
    }

    /// Exhaustive nesting audit: coinciding-node coordinates agree within
    /// `tol`, and every coarse element is exactly the union of the fine
    /// elements whose vertices fall inside it (brute-force containment scan
    /// plus a volume-sum check per coarse element).
    pub fn verify_nesting(&self, tol: f64) -> Result<()> {
        for l in 0..self.levels.len() - 1 {
            let coarse = &self.levels[l].mesh;
            let fine = &self.levels[l + 1].mesh;
            for c in 0..coarse.n_nodes() {
                let f = self.parent_maps[l][c];
                let a = coarse.node(c);
                let b = fine.node(f);
                let dist = sub(a, b).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if dist > tol {
                    return Err(Error::InvalidConfig(format!(
                        "level {l} node {c}: coinciding fine node {f} off by {dist:.3e}"
                    )));
                }
            }
            let mut claimed = vec![0.0f64; coarse.n_elements()];
            for fe in 0..fine.n_elements() {
                let verts = fine.element(fe);
                let center = barycenter(fine, fe);
                let mut host = None;
                for ce in 0..coarse.n_elements() {
                    if inside(coarse, ce, center, 1e-10) {
                        host = Some(ce);
                        break;
                    }
                }
                let Some(ce) = host else {
                    return Err(Error::InvalidConfig(format!(
                        "level {} element {fe}: barycenter not inside any coarse element",
                        l + 1
                    )));
                };
                for &v in verts {
                    if !inside(coarse, ce, fine.node(v), 1e-9) {
                        return Err(Error::InvalidConfig(format!(
                            "level {} element {fe} straddles coarse element {ce}",
                            l + 1
                        )));
                    }
                }
                claimed[ce] += fine.element_volume(fe);
            }
            for ce in 0..coarse.n_elements() {
                let vol = coarse.element_volume(ce);
                if (claimed[ce] - vol).abs() > tol.max(1e-12) * vol.max(1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "level {l} element {ce}: fine volumes sum to {} instead of {vol}",
                        claimed[ce]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn barycenter(mesh: &Mesh, e: usize) -> [f64; 3] {
    let verts = mesh.element(e);
    let mut c = [0.0; 3];
    for &v in verts {
        let p = mesh.node(v);
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    for k in c.iter_mut() {
        *k /= verts.len() as f64;
    }
    c
}

fn inside(mesh: &Mesh, e: usize, p: [f64; 3], tol: f64) -> bool {
    mesh.barycentric(e, p).iter().all(|&l| l >= -tol)
}
