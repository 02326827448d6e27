//! Random diffusion fields: squared-exponential nodal covariance, greedy
//! pivoted Cholesky low-rank factorization, truncated KL expansions nested
//! across the mesh hierarchy, and the uniform sample streams that drive
//! them.
//!
//! The covariance is assembled once on the finest level's nodes; coarse
//! levels see the same modes through nested-node injection, which keeps one
//! realization consistent across every level it is solved on (the coupling
//! requirement of the multilevel estimator).

use crate::mesh::MeshHierarchy;
use crate::scheduler::seed_for;
use crate::{fem, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Nodal covariance C_ij = exp(-|x_i - x_j|² / width). The width parameter
/// divides the squared distance as-is (it is not squared again).
pub fn squared_exponential_covariance(nodes: &[[f64; 3]], width: f64) -> DMatrix<f64> {
    assert!(width > 0.0, "covariance width must be positive");
    let n = nodes.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d0 = nodes[i][0] - nodes[j][0];
            let d1 = nodes[i][1] - nodes[j][1];
            let d2 = nodes[i][2] - nodes[j][2];
            let v = (-(d0 * d0 + d1 * d1 + d2 * d2) / width).exp();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Result of the pivoted Cholesky factorization: C ≈ L·Lᵀ with L of shape
/// n × rank, columns in pivot order.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub cols: DMatrix<f64>,
    pub pivots: Vec<usize>,
    pub initial_trace: f64,
    pub remaining_trace: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.cols.ncols()
    }
}

/// Greedy pivoted Cholesky with relative trace control: columns are added
/// (largest remaining diagonal first, lowest index on ties) until the
/// remaining trace drops to `rel_tol`·trace(C) or `max_rank` is reached.
///
/// Pivots more negative than -1e-12·trace(C) mean the matrix is not
/// positive semidefinite; less negative ones are clipped to zero.
pub fn pivoted_cholesky(c: &DMatrix<f64>, rel_tol: f64, max_rank: usize) -> Result<LowRankFactor> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(Error::InvalidConfig("covariance must be square".into()));
    }
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::InvalidConfig(format!(
            "pivoted Cholesky tolerance {rel_tol} not in [0, 1)"
        )));
    }
    let mut diag: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
    if let Some((i, &d)) = diag.iter().enumerate().find(|(_, &d)| d < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "covariance diagonal entry {i} is negative ({d:.3e})"
        )));
    }
    let trace: f64 = diag.iter().sum();
    let psd_floor = -1e-12 * trace;
    let target = rel_tol * trace;
    let max_rank = max_rank.min(n);

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut remaining = trace;
    while remaining > target && cols.len() < max_rank {
        // Largest remaining diagonal entry, lowest index winning ties.
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .expect("nonempty diagonal");
        if dp < psd_floor {
            return Err(Error::NotPositiveSemiDefinite {
                pivot: dp,
                index: p,
                tolerance: psd_floor,
            });
        }
        if dp <= 0.0 {
            break;
        }
        let sqrt_p = dp.sqrt();
        let mut col = vec![0.0; n];
        for j in 0..n {
            if j == p {
                col[j] = sqrt_p;
                continue;
            }
            let mut v = c[(j, p)];
            for prev in &cols {
                v -= prev[j] * prev[p];
            }
            col[j] = v / sqrt_p;
        }
        for j in 0..n {
            diag[j] -= col[j] * col[j];
            if diag[j] < 0.0 && diag[j] >= psd_floor {
                diag[j] = 0.0;
            } else if diag[j] < psd_floor {
                return Err(Error::NotPositiveSemiDefinite {
                    pivot: diag[j],
                    index: j,
                    tolerance: psd_floor,
                });
            }
        }
        diag[p] = 0.0;
        remaining = diag.iter().sum();
        pivots.push(p);
        cols.push(col);
    }
    let mut l = DMatrix::zeros(n, cols.len());
    for (k, col) in cols.iter().enumerate() {
        for j in 0..n {
            l[(j, k)] = col[j];
        }
    }
    Ok(LowRankFactor {
        cols: l,
        pivots,
        initial_trace: trace,
        remaining_trace: remaining.max(0.0),
    })
}

/// Inner product used to orthonormalize the KL modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeInnerProduct {
    /// Plain Euclidean nodal inner product (default).
    Euclidean,
    /// Finest-level mass-matrix weighting (discrete L²(D)).
    MassWeighted,
}

/// How to choose the dumping factor s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DumpingFactor {
    /// Largest admissible value times (1 - 1e-9).
    Auto,
    /// Explicit value, validated against the ellipticity bound.
    Fixed(f64),
}

/// Truncated KL expansion of the diffusion field
/// G(x, y) = g0 + s·Σ_k √λ_k φ_k(x) y_k with y_k uniform on [-1, 1].
///
/// Modes are stored per hierarchy level (finest-level eigenvectors injected
/// to coarse levels at coinciding nodes), so `realize` is a table lookup
/// plus a rank-M axpy.
#[derive(Debug, Clone)]
pub struct KlExpansion {
    lambdas: Vec<f64>,
    /// modes[level][k * n_level + i] = φ_k at node i of that level.
    modes: Vec<Vec<f64>>,
    /// Node count per level (needed when no modes are retained).
    level_sizes: Vec<usize>,
    g0: f64,
    s: f64,
    delta: f64,
    s_max: f64,
    worst_sum: f64,
}

impl KlExpansion {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// max over nodes of Σ_k |√λ_k φ_k(x)| (the analytic worst case).
    pub fn worst_perturbation(&self) -> f64 {
        self.worst_sum
    }

    /// Mode k sampled on the nodes of `level`.
    pub fn mode(&self, level: usize, k: usize) -> &[f64] {
        let n = self.modes[level].len() / self.lambdas.len().max(1);
        &self.modes[level][k * n..(k + 1) * n]
    }

    /// Realize the nodal diffusion field on `level` for parameters `y`.
    pub fn realize(&self, level: usize, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_modes(), "parameter dimension mismatch");
        let m = self.n_modes();
        if m == 0 {
            return vec![self.g0; self.level_sizes[level]];
        }
        let n = self.modes[level].len() / m;
        let mut g = vec![self.g0; n];
        for k in 0..m {
            let scale = self.s * self.lambdas[k].sqrt() * y[k];
            let mode = &self.modes[level][k * n..(k + 1) * n];
            for i in 0..n {
                g[i] += scale * mode[i];
            }
        }
        g
    }
}

// Separate field kept out of the main impl for clarity of construction.
impl KlExpansion {
    fn new(
        lambdas: Vec<f64>,
        modes: Vec<Vec<f64>>,
        level_sizes: Vec<usize>,
        g0: f64,
        delta: f64,
        s_spec: DumpingFactor,
    ) -> Result<KlExpansion> {
        // Worst-case perturbation magnitude per node, maximized over the
        // finest level (coarse nodes are subsets of fine nodes).
        let m = lambdas.len();
        // The zero branch returns a constant, not a division fallback.
        #[allow(clippy::manual_checked_ops)]
        let worst_sum = if m == 0 {
            0.0
        } else {
            let finest = modes.len() - 1;
            let n = modes[finest].len() / m;
            (0..n)
                .map(|i| {
                    (0..m)
                        .map(|k| (lambdas[k].sqrt() * modes[finest][k * n + i]).abs())
                        .sum::<f64>()
                })
                .fold(0.0f64, f64::max)
        };
        let bound = delta * g0;
        let s_max = if worst_sum > 0.0 {
            bound / worst_sum
        } else {
            f64::INFINITY
        };
        let s = match s_spec {
            DumpingFactor::Auto => {
                if s_max.is_finite() {
                    s_max * (1.0 - 1e-9)
                } else {
                    0.0
                }
            }
            DumpingFactor::Fixed(v) => {
                if v < 0.0 {
                    return Err(Error::InvalidConfig("dumping factor must be >= 0".into()));
                }
                if v * worst_sum > bound * (1.0 + 1e-12) {
                    return Err(Error::EllipticityViolated {
                        s: v,
                        s_max,
                        worst_sum,
                        bound,
                    });
                }
                v
            }
        };
        Ok(KlExpansion {
            lambdas,
            modes,
            level_sizes,
            g0,
            s,
            delta,
            s_max,
            worst_sum,
        })
    }
}

/// Diagonalize the factor's small Gram matrix and rotate it into
/// orthonormal KL modes, then inject the finest-level modes onto every
/// coarser level of the hierarchy.
pub fn kl_from_factor(
    factor: &LowRankFactor,
    hierarchy: &MeshHierarchy,
    inner: ModeInnerProduct,
    g0: f64,
    delta: f64,
    s_spec: DumpingFactor,
) -> Result<KlExpansion> {
    if !(g0 > 0.0) {
        return Err(Error::InvalidConfig("baseline g0 must be positive".into()));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidConfig("delta must lie in [0, 1)".into()));
    }
    let finest = hierarchy.finest();
    let n_fine = hierarchy.level(finest).mesh.n_nodes();
    if factor.cols.nrows() != n_fine {
        return Err(Error::InvalidConfig(format!(
            "factor has {} rows but the finest level has {} nodes",
            factor.cols.nrows(),
            n_fine
        )));
    }
    let r = factor.rank();
    if r == 0 {
        let level_sizes: Vec<usize> = (0..=finest)
            .map(|l| hierarchy.level(l).mesh.n_nodes())
            .collect();
        let modes = vec![Vec::new(); finest + 1];
        return KlExpansion::new(Vec::new(), modes, level_sizes, g0, delta, s_spec);
    }

    // Gram matrix of the factor columns in the requested inner product.
    let gram = match inner {
        ModeInnerProduct::Euclidean => factor.cols.transpose() * &factor.cols,
        ModeInnerProduct::MassWeighted => {
            let mass = fem::assemble_mass(&hierarchy.level(finest).mesh);
            let mut weighted = DMatrix::zeros(n_fine, r);
            let mut tmp = vec![0.0; n_fine];
            for k in 0..r {
                let col: Vec<f64> = factor.cols.column(k).iter().copied().collect();
                mass.matvec(&col, &mut tmp);
                for j in 0..n_fine {
                    weighted[(j, k)] = tmp[j];
                }
            }
            factor.cols.transpose() * weighted
        }
    };
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let floor = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v)) * 1e-14;
    let mut lambdas = Vec::new();
    let mut fine_modes: Vec<Vec<f64>> = Vec::new();
    for &k in &order {
        let lam = eig.eigenvalues[k];
        if lam <= floor || lam <= 0.0 {
            continue;
        }
        lambdas.push(lam);
        let w = eig.eigenvectors.column(k);
        let mut phi = vec![0.0; n_fine];
        for j in 0..n_fine {
            let mut acc = 0.0;
            for c in 0..r {
                acc += factor.cols[(j, c)] * w[c];
            }
            phi[j] = acc / lam.sqrt();
        }
        fine_modes.push(phi);
    }
    let m = lambdas.len();

    // Inject onto each level: coarse node i coincides with a fine node.
    let mut modes = Vec::with_capacity(finest + 1);
    let mut level_sizes = Vec::with_capacity(finest + 1);
    for l in 0..=finest {
        let n_l = hierarchy.level(l).mesh.n_nodes();
        level_sizes.push(n_l);
        let mut flat = vec![0.0; m * n_l];
        for k in 0..m {
            for i in 0..n_l {
                let fi = hierarchy.node_on_finer(l, finest, i);
                flat[k * n_l + i] = fine_modes[k][fi];
            }
        }
        modes.push(flat);
    }
    KlExpansion::new(lambdas, modes, level_sizes, g0, delta, s_spec)
}

/// Convenience: covariance on the finest level, pivoted Cholesky, KL.
#[allow(clippy::too_many_arguments)]
pub fn build_kl(
    hierarchy: &MeshHierarchy,
    width: f64,
    rel_tol: f64,
    max_rank: usize,
    inner: ModeInnerProduct,
    g0: f64,
    delta: f64,
    s_spec: DumpingFactor,
) -> Result<KlExpansion> {
    let finest = hierarchy.finest();
    let cov = squared_exponential_covariance(hierarchy.level(finest).mesh.nodes(), width);
    let factor = pivoted_cholesky(&cov, rel_tol, max_rank)?;
    kl_from_factor(&factor, hierarchy, inner, g0, delta, s_spec)
}

/// Draw the uniform parameter vector y ∈ [-1, 1]^m for one sample. The
/// stream key is the injective (master_seed, level_tag, index) packing, so
/// coupled multilevel solves reuse the identical y by construction.
pub fn draw_sample(master_seed: u64, level_tag: u64, index: u64, n_modes: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::from_seed(seed_for(master_seed, level_tag, index));
    (0..n_modes).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;
    use rand::RngCore;

    #[test]
    fn covariance_uses_width_verbatim() {
        let nodes = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]];
        let c = squared_exponential_covariance(&nodes, 0.25);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
        // exp(-0.5² / 0.25) = exp(-1); squaring the width would give exp(-4).
        assert!((c[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn pivoted_cholesky_of_identity_is_a_permutation() {
        let c = DMatrix::identity(5, 5);
        let f = pivoted_cholesky(&c, 1e-10, 10).unwrap();
        assert_eq!(f.rank(), 5);
        assert_eq!(f.pivots, vec![0, 1, 2, 3, 4]);
        let rec = &f.cols * f.cols.transpose();
        assert!((rec - c).abs().max() < 1e-14);
        assert!(f.remaining_trace <= 1e-10 * 5.0);
    }

    #[test]
    fn pivoted_cholesky_recovers_low_rank_matrix() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut b = DMatrix::zeros(40, 3);
        for j in 0..3 {
            for i in 0..40 {
                b[(i, j)] = (rng.next_u64() as f64 / u64::MAX as f64) - 0.5;
            }
        }
        let c = &b * b.transpose();
        let f = pivoted_cholesky(&c, 1e-10, 40).unwrap();
        assert_eq!(f.rank(), 3);
        let rec = &f.cols * f.cols.transpose();
        let rel = (rec - &c).norm() / c.norm();
        assert!(rel < 1e-10, "reconstruction error {rel}");
        assert!(f.remaining_trace <= 1e-10 * f.initial_trace);
    }

    #[test]
    fn pivoted_cholesky_rejects_indefinite_matrix() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match pivoted_cholesky(&c, 1e-10, 2) {
            Err(Error::NotPositiveSemiDefinite { pivot, .. }) => assert!(pivot < 0.0),
            other => panic!("expected NotPositiveSemiDefinite, got {other:?}"),
        }
    }

    #[test]
    fn pivoted_cholesky_honors_max_rank() {
        let nodes: Vec<[f64; 3]> = (0..20).map(|i| [i as f64 / 19.0, 0.0, 0.0]).collect();
        let c = squared_exponential_covariance(&nodes, 0.25);
        let f = pivoted_cholesky(&c, 1e-14, 2).unwrap();
        assert_eq!(f.rank(), 2);
        assert!(f.remaining_trace > 1e-14 * f.initial_trace);
    }

    #[test]
    fn pivot_order_follows_largest_diagonal_with_low_index_ties() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let f = pivoted_cholesky(&c, 1e-12, 3).unwrap();
        assert_eq!(f.pivots, vec![1, 0, 2]);
    }

    fn test_hierarchy() -> crate::mesh::MeshHierarchy {
        build_hierarchy(1, 2, 5, 1.0, 0.4, 2).unwrap()
    }

    #[test]
    fn kl_reconstructs_factor_and_modes_are_orthonormal() {
        let hier = test_hierarchy();
        let finest = hier.finest();
        let cov = squared_exponential_covariance(hier.level(finest).mesh.nodes(), 0.25);
        let factor = pivoted_cholesky(&cov, 1e-12, 50).unwrap();
        let kl = kl_from_factor(
            &factor,
            &hier,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let m = kl.n_modes();
        let n = hier.level(finest).mesh.n_nodes();
        // Σ λ φ φᵀ = L Lᵀ.
        let mut rec = DMatrix::zeros(n, n);
        for k in 0..m {
            let phi = kl.mode(finest, k);
            for i in 0..n {
                for j in 0..n {
                    rec[(i, j)] += kl.lambdas()[k] * phi[i] * phi[j];
                }
            }
        }
        let target = &factor.cols * factor.cols.transpose();
        let rel = (rec - &target).norm() / target.norm();
        assert!(rel < 1e-10, "KL reconstruction error {rel}");
        for a in 0..m {
            for b in 0..m {
                let dot: f64 = kl
                    .mode(finest, a)
                    .iter()
                    .zip(kl.mode(finest, b))
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "mode gram ({a},{b}) = {dot}");
            }
        }
        // Eigenvalues descending.
        for w in kl.lambdas().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn kl_eigenvalues_match_dense_eigendecomposition() {
        let hier = test_hierarchy();
        let finest = hier.finest();
        let cov = squared_exponential_covariance(hier.level(finest).mesh.nodes(), 0.25);
        let factor = pivoted_cholesky(&cov, 1e-12, 50).unwrap();
        let kl = kl_from_factor(
            &factor,
            &hier,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut dense: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (k, &lam) in kl.lambdas().iter().enumerate() {
            let gap = (lam - dense[k]).abs();
            assert!(
                gap <= 1e-6 * dense[k] || gap <= factor.remaining_trace,
                "eigenvalue {k}: kl {lam} vs dense {}",
                dense[k]
            );
        }
    }

    #[test]
    fn mass_weighted_modes_are_mass_orthonormal() {
        let hier = test_hierarchy();
        let finest = hier.finest();
        let cov = squared_exponential_covariance(hier.level(finest).mesh.nodes(), 0.25);
        let factor = pivoted_cholesky(&cov, 1e-10, 50).unwrap();
        let kl = kl_from_factor(
            &factor,
            &hier,
            ModeInnerProduct::MassWeighted,
            1.0,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let mass = fem::assemble_mass(&hier.level(finest).mesh);
        let n = hier.level(finest).mesh.n_nodes();
        let mut tmp = vec![0.0; n];
        for a in 0..kl.n_modes() {
            mass.matvec(kl.mode(finest, a), &mut tmp);
            for b in 0..kl.n_modes() {
                let dot: f64 = kl
                    .mode(finest, b)
                    .iter()
                    .zip(&tmp)
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "mass gram ({a},{b}) = {dot}");
            }
        }
    }

    #[test]
    fn coarse_modes_are_nested_injections() {
        let hier = test_hierarchy();
        let finest = hier.finest();
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            64,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        for l in 0..finest {
            let n_l = hier.level(l).mesh.n_nodes();
            for k in 0..kl.n_modes() {
                for i in 0..n_l {
                    let fi = hier.node_on_finer(l, finest, i);
                    assert_eq!(kl.mode(l, k)[i], kl.mode(finest, k)[fi]);
                }
            }
        }
    }

    #[test]
    fn auto_dumping_factor_saturates_the_ellipticity_bound() {
        let hier = test_hierarchy();
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            64,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let bound = 0.5 * 3.325e-3;
        assert!(kl.s() * kl.worst_perturbation() <= bound);
        assert!(kl.s() * kl.worst_perturbation() > bound * (1.0 - 1e-6));
        // Fields stay inside [(1-δ)g0, (1+δ)g0] for every draw.
        for i in 0..200 {
            let y = draw_sample(42, 0, i, kl.n_modes());
            for l in 0..=hier.finest() {
                for g in kl.realize(l, &y) {
                    assert!((0.5 * 3.325e-3..=1.5 * 3.325e-3).contains(&g));
                }
            }
        }
    }

    #[test]
    fn oversized_fixed_dumping_factor_is_rejected() {
        let hier = test_hierarchy();
        let err = build_kl(
            &hier,
            0.25,
            1e-2,
            64,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Fixed(0.3),
        )
        .unwrap_err();
        match err {
            Error::EllipticityViolated { s, s_max, .. } => {
                assert_eq!(s, 0.3);
                assert!(s_max < 0.3);
            }
            other => panic!("expected EllipticityViolated, got {other:?}"),
        }
        // An admissible explicit value passes.
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            64,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Fixed(1e-4),
        )
        .unwrap();
        assert_eq!(kl.s(), 1e-4);
    }

    #[test]
    fn zero_modes_realize_the_baseline() {
        let hier = test_hierarchy();
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            0,
            ModeInnerProduct::Euclidean,
            2.0,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        assert_eq!(kl.n_modes(), 0);
        let g = kl.realize(1, &[]);
        assert_eq!(g.len(), hier.level(1).mesh.n_nodes());
        assert!(g.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn sample_streams_are_deterministic_and_distinct() {
        let a = draw_sample(1, 2, 3, 8);
        let b = draw_sample(1, 2, 3, 8);
        assert_eq!(a, b);
        assert_ne!(draw_sample(1, 2, 4, 8), a);
        assert_ne!(draw_sample(1, 3, 3, 8), a);
        assert_ne!(draw_sample(2, 2, 3, 8), a);
        assert!(a.iter().all(|&y| (-1.0..1.0).contains(&y)));
    }

    #[test]
    fn realization_is_affine_in_y() {
        let hier = test_hierarchy();
        let kl = build_kl(
            &hier,
            0.25,
            1e-3,
            64,
            ModeInnerProduct::Euclidean,
            1.0,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let m = kl.n_modes();
        let y1 = draw_sample(5, 0, 0, m);
        let y2 = draw_sample(5, 0, 1, m);
        let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
        let g1 = kl.realize(1, &y1);
        let g2 = kl.realize(1, &y2);
        let gm = kl.realize(1, &mid);
        for i in 0..g1.len() {
            assert!((gm[i] - 0.5 * (g1[i] + g2[i])).abs() < 1e-14);
        }
    }
}
