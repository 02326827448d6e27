//! Nonlinear solvers for the space-time system: a monolithic Newton
//! iteration with ILU(0)-preconditioned restarted GMRES on the all-at-once
//! operator, and a sequential time-stepping path that solves one
//! Crank–Nicolson step at a time (the two produce the same discrete
//! solution and cross-validate each other).

use crate::krylov::{gmres, GmresOptions, Ilu0};
use crate::sparse::{norm2, CsrMatrix};
use crate::system::{SpaceTimeField, SpaceTimeSystem};
use crate::{Error, Result};
use std::time::Instant;

/// Controls for both solve paths.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Newton stops when ‖F(u)‖₂ ≤ newton_tol·max(1, ‖f‖₂).
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Step-halving budget per Newton step; plain Newton when full steps
    /// already decrease the residual.
    pub max_halvings: usize,
    pub gmres: GmresOptions,
    /// Number of contiguous time-block chunks factored independently by the
    /// preconditioner (1 = ILU(0) of the full operator).
    pub ilu_chunks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: 1e-10,
            max_newton: 25,
            max_halvings: 10,
            gmres: GmresOptions::default(),
            ilu_chunks: 1,
        }
    }
}

impl SolverOptions {
    /// Tighter tolerances for the sequential path, whose per-step errors
    /// accumulate over the time march.
    pub fn sequential() -> Self {
        SolverOptions {
            newton_tol: 1e-12,
            gmres: GmresOptions {
                rel_tol: 1e-12,
                abs_tol: 1e-12,
                ..GmresOptions::default()
            },
            ..SolverOptions::default()
        }
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    /// Accepted Newton steps (monolithic) or their total over all time
    /// steps (sequential).
    pub newton_iterations: usize,
    /// Linear iterations per Newton step, in execution order.
    pub gmres_iterations: Vec<usize>,
    /// Monolithic path: residual norm before each accepted step plus the
    /// final one (strictly decreasing). Sequential path: final residual of
    /// each time step.
    pub residual_norms: Vec<f64>,
    pub halvings: usize,
    pub seconds: f64,
}

fn chunk_ends(n: usize, m: usize, chunks: usize) -> Vec<usize> {
    let chunks = chunks.clamp(1, m);
    let base = m / chunks;
    let extra = m % chunks;
    let mut ends = Vec::with_capacity(chunks);
    let mut blocks = 0;
    for c in 0..chunks {
        blocks += base + usize::from(c < extra);
        ends.push(blocks * n);
    }
    ends
}

/// Solve C·u + r(u) = f by Newton's method on the monolithic space-time
/// system, starting from `u_init` (warm starts pass the unperturbed
/// solution here). Each step solves J·δ = −F by restarted GMRES with an
/// ILU(0) preconditioner refactored from the current Jacobian.
pub fn newton_solve(
    sys: &SpaceTimeSystem,
    u_init: &SpaceTimeField,
    opts: &SolverOptions,
) -> Result<(SpaceTimeField, SolveStats)> {
    let clock = Instant::now();
    let dim = sys.n_unknowns();
    assert_eq!(u_init.values.len(), dim, "initial guess on the wrong level");
    let mut u = u_init.values.clone();
    let tol = opts.newton_tol * norm2(&sys.load).max(1.0);

    let mut stats = SolveStats::default();
    let mut jac: Option<CsrMatrix> = None;
    let mut ilu: Option<Ilu0> = None;
    let ends = chunk_ends(sys.n, sys.m, opts.ilu_chunks);

    let mut res = sys.residual(&u);
    let mut nrm = norm2(&res);
    loop {
        stats.residual_norms.push(nrm);
        if nrm <= tol {
            stats.seconds = clock.elapsed().as_secs_f64();
            let field = SpaceTimeField::from_values(sys.level_index, sys.n, sys.m, u);
            return Ok((field, stats));
        }
        if stats.newton_iterations >= opts.max_newton {
            return Err(Error::NewtonDidNotConverge {
                detail: "iteration budget exhausted".into(),
                residual: nrm,
                iterations: stats.newton_iterations,
            });
        }
        let jac = match jac.as_mut() {
            Some(j) => {
                sys.update_jacobian_values(&u, j);
                j
            }
            None => {
                let mut j = sys.spacetime_matrix();
                sys.update_jacobian_values(&u, &mut j);
                jac.insert(j)
            }
        };
        let ilu = match ilu.as_mut() {
            Some(p) => {
                p.refactor(jac)?;
                p
            }
            None => ilu.insert(Ilu0::factor_partitioned(jac, &ends)?),
        };
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; dim];
        let linear = gmres(jac, Some(ilu), &rhs, &mut delta, &opts.gmres)?;
        stats.gmres_iterations.push(linear.iterations);

        // Step halving on residual increase.
        let mut step = 1.0f64;
        let mut halved = 0;
        let (next_u, next_res, next_nrm) = loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let trial_res = sys.residual(&trial);
            let trial_nrm = norm2(&trial_res);
            if trial_nrm < nrm {
                break (trial, trial_res, trial_nrm);
            }
            if halved >= opts.max_halvings {
                return Err(Error::NewtonDidNotConverge {
                    detail: format!("line search failed after {halved} halvings"),
                    residual: nrm,
                    iterations: stats.newton_iterations,
                });
            }
            halved += 1;
            step *= 0.5;
        };
        stats.halvings += halved;
        stats.newton_iterations += 1;
        u = next_u;
        res = next_res;
        nrm = next_nrm;
    }
}

/// In-place values of the one-step Jacobian A + Δt·M·diag(I'(v)) on the
/// shared block pattern.
fn update_step_jacobian(sys: &SpaceTimeSystem, v: &[f64], jac: &mut CsrMatrix) {
    let a = &sys.a_block;
    let m = &sys.mass;
    let dt = sys.dt;
    let n = sys.n;
    let mut deriv = vec![0.0; n];
    for i in 0..n {
        deriv[i] = sys.ion.derivative(v[i]);
    }
    let values = jac.values_mut();
    for i in 0..n {
        for e in a.row_ptr()[i]..a.row_ptr()[i + 1] {
            let j = a.col_idx()[e];
            values[e] = a.values()[e] + dt * m.values()[e] * deriv[j];
        }
    }
}

/// March k = 1..m solving one Crank–Nicolson step at a time with a damped
/// Newton iteration per step; mathematically the same equations as
/// `newton_solve` (the operator is block lower bidiagonal), so the two are
/// interchangeable oracles.
pub fn sequential_solve(
    sys: &SpaceTimeSystem,
    opts: &SolverOptions,
) -> Result<(SpaceTimeField, SolveStats)> {
    let clock = Instant::now();
    let n = sys.n;
    let mut stats = SolveStats::default();
    let mut field = sys.zero_field();
    let mut u_prev = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];

    // For the linear problem the step operator is A for every step and the
    // factorization below is final; the reaction refactors it per iteration.
    let mut jac = sys.a_block.clone();
    let mut ilu = Ilu0::factor(&jac)?;

    for k in 0..sys.m {
        // rhs_k = f_k − B·u_{k−1} (the eliminated initial state is already
        // folded into f_1).
        sys.b_block.matvec(&u_prev, &mut scratch);
        for i in 0..n {
            rhs[i] = sys.load[k * n + i] - scratch[i];
        }
        let tol = opts.newton_tol * norm2(&rhs).max(1.0);
        let mut v = u_prev.clone();
        let mut res = step_residual(sys, &v, &rhs);
        let mut nrm = norm2(&res);
        let mut its = 0;
        while nrm > tol {
            if its >= opts.max_newton {
                return Err(Error::NewtonDidNotConverge {
                    detail: format!("time step {} stalled", k + 1),
                    residual: nrm,
                    iterations: its,
                });
            }
            if !sys.ion.is_linear() {
                update_step_jacobian(sys, &v, &mut jac);
                ilu.refactor(&jac)?;
            }
            let neg: Vec<f64> = res.iter().map(|r| -r).collect();
            let mut delta = vec![0.0; n];
            let linear = gmres(&jac, Some(&ilu), &neg, &mut delta, &opts.gmres)?;
            stats.gmres_iterations.push(linear.iterations);
            let mut step = 1.0f64;
            let mut halved = 0;
            let (next_v, next_res, next_nrm) = loop {
                let trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                let trial_res = step_residual(sys, &trial, &rhs);
                let trial_nrm = norm2(&trial_res);
                if trial_nrm < nrm {
                    break (trial, trial_res, trial_nrm);
                }
                if halved >= opts.max_halvings {
                    return Err(Error::NewtonDidNotConverge {
                        detail: format!("line search failed in time step {}", k + 1),
                        residual: nrm,
                        iterations: its,
                    });
                }
                halved += 1;
                step *= 0.5;
            };
            stats.halvings += halved;
            its += 1;
            v = next_v;
            res = next_res;
            nrm = next_nrm;
        }
        stats.newton_iterations += its;
        stats.residual_norms.push(nrm);
        field.block_mut(k).copy_from_slice(&v);
        u_prev = v;
    }
    stats.seconds = clock.elapsed().as_secs_f64();
    Ok((field, stats))
}

/// F_k(v) = A·v + Δt·M·I(v) − rhs for one time step.
fn step_residual(sys: &SpaceTimeSystem, v: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = sys.n;
    let mut out = vec![0.0; n];
    sys.a_block.matvec(v, &mut out);
    if !sys.ion.is_linear() {
        let mut cur = vec![0.0; n];
        let mut mi = vec![0.0; n];
        for i in 0..n {
            cur[i] = sys.dt * sys.ion.current(v[i]);
        }
        sys.mass.matvec(&cur, &mut mi);
        for i in 0..n {
            out[i] += mi[i];
        }
    }
    for i in 0..n {
        out[i] -= rhs[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Stimulus;
    use crate::mesh::build_hierarchy;
    use crate::system::{build_system, IonModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn reference_ion() -> IonModel {
        IonModel::cubic(1.4e-3, 0.0, 28.0, 115.0).unwrap()
    }

    fn stimulus(always_on: bool) -> Stimulus {
        Stimulus {
            amplitude: 80.0,
            baseline: 0.0,
            center: [0.2, 0.0, 0.0],
            width: 0.15,
            t1: if always_on { f64::INFINITY } else { 0.02 },
        }
    }

    #[test]
    fn zero_data_yields_the_zero_solution() {
        let hier = build_hierarchy(1, 0, 5, 1.0, 0.4, 4).unwrap();
        let g = vec![1.0; hier.level(0).mesh.n_nodes()];
        let sys = build_system(
            hier.level(0),
            0,
            &g,
            IonModel::linear(),
            &Stimulus::off(),
            None,
        )
        .unwrap();
        let (u, stats) = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        assert_eq!(stats.newton_iterations, 0);
        let (us, _) = sequential_solve(&sys, &SolverOptions::sequential()).unwrap();
        assert!(us.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_problems_take_exactly_one_newton_iteration() {
        let hier = build_hierarchy(1, 1, 5, 1.0, 0.4, 4).unwrap();
        for l in 0..=1 {
            let level = hier.level(l);
            let g = vec![1.0; level.mesh.n_nodes()];
            let sys =
                build_system(level, l, &g, IonModel::linear(), &stimulus(true), None).unwrap();
            let (_, stats) =
                newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
            assert_eq!(stats.newton_iterations, 1, "level {l}");
        }
    }

    #[test]
    fn known_discrete_solution_is_recovered() {
        // Manufacture the load so that a chosen coefficient vector is the
        // exact discrete solution of the linear problem.
        let hier = build_hierarchy(1, 1, 6, 1.0, 0.5, 4).unwrap();
        let level = hier.level(1);
        let g = vec![0.8; level.mesh.n_nodes()];
        let mut sys =
            build_system(level, 1, &g, IonModel::linear(), &Stimulus::off(), None).unwrap();
        let dim = sys.n_unknowns();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let exact: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut load = vec![0.0; dim];
        sys.apply_linear(&exact, &mut load);
        sys.load = load;
        let (u, _) = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
        let gap = u
            .values
            .iter()
            .zip(&exact)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8, "recovered solution off by {gap}");
    }

    #[test]
    fn monolithic_and_sequential_paths_agree_on_the_linear_problem() {
        let hier = build_hierarchy(1, 1, 8, 1.0, 0.4, 4).unwrap();
        let level = hier.level(1);
        let g: Vec<f64> = (0..level.mesh.n_nodes())
            .map(|i| 1.0 + 0.3 * (i as f64 * 0.7).sin())
            .collect();
        let sys = build_system(level, 1, &g, IonModel::linear(), &stimulus(true), None).unwrap();
        let (mono, _) = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
        let (seq, _) = sequential_solve(&sys, &SolverOptions::sequential()).unwrap();
        let gap = mono
            .values
            .iter()
            .zip(&seq.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8, "paths disagree by {gap}");
    }

    #[test]
    fn monolithic_and_sequential_paths_agree_on_the_reaction_problem() {
        let hier = build_hierarchy(1, 1, 8, 1.0, 0.4, 4).unwrap();
        let level = hier.level(1);
        let g = vec![3.325e-3; level.mesh.n_nodes()];
        let sys = build_system(level, 1, &g, reference_ion(), &stimulus(false), None).unwrap();
        let (mono, stats) =
            newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
        let (seq, _) = sequential_solve(&sys, &SolverOptions::sequential()).unwrap();
        let gap = mono
            .values
            .iter()
            .zip(&seq.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8, "paths disagree by {gap}");
        assert!(mono.norm_inf() > 0.0, "stimulus must excite the solution");
        // Residual norms strictly decrease across accepted steps.
        for w in stats.residual_norms.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn partitioned_preconditioner_reaches_the_same_solution() {
        let hier = build_hierarchy(1, 1, 6, 1.0, 0.4, 4).unwrap();
        let level = hier.level(1);
        let g = vec![1.0; level.mesh.n_nodes()];
        let sys = build_system(level, 1, &g, reference_ion(), &stimulus(true), None).unwrap();
        let full = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default())
            .unwrap()
            .0;
        let opts = SolverOptions {
            ilu_chunks: 4,
            ..SolverOptions::default()
        };
        let parts = newton_solve(&sys, &sys.zero_field(), &opts).unwrap().0;
        let gap = full
            .values
            .iter()
            .zip(&parts.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8);
    }

    #[test]
    fn warm_starts_do_not_cost_extra_iterations() {
        // Solve the unperturbed problem once, then compare Newton counts
        // between warm and cold starts across perturbed diffusion fields.
        let hier = build_hierarchy(1, 1, 8, 1.0, 0.4, 4).unwrap();
        let level = hier.level(1);
        let n = level.mesh.n_nodes();
        let g0 = 3.325e-3;
        let base = vec![g0; n];
        let sys0 = build_system(level, 1, &base, reference_ion(), &stimulus(false), None).unwrap();
        let opts = SolverOptions::default();
        let (warm_init, _) = newton_solve(&sys0, &sys0.zero_field(), &opts).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut warm_total = 0;
        let mut cold_total = 0;
        for _ in 0..10 {
            let g: Vec<f64> = (0..n)
                .map(|_| g0 * (1.0 + 0.4 * rng.gen_range(-1.0..1.0)))
                .collect();
            let sys = build_system(level, 1, &g, reference_ion(), &stimulus(false), None).unwrap();
            let (_, warm) = newton_solve(&sys, &warm_init, &opts).unwrap();
            let (_, cold) = newton_solve(&sys, &sys.zero_field(), &opts).unwrap();
            warm_total += warm.newton_iterations;
            cold_total += cold.newton_iterations;
        }
        assert!(
            warm_total <= cold_total,
            "warm starts took {warm_total} total iterations vs {cold_total} cold"
        );
    }

    #[test]
    fn newton_reports_nonconvergence_with_a_tiny_budget() {
        let hier = build_hierarchy(1, 0, 5, 1.0, 0.4, 4).unwrap();
        let level = hier.level(0);
        let g = vec![3.325e-3; level.mesh.n_nodes()];
        let sys = build_system(level, 0, &g, reference_ion(), &stimulus(true), None).unwrap();
        let opts = SolverOptions {
            max_newton: 0,
            ..SolverOptions::default()
        };
        match newton_solve(&sys, &sys.zero_field(), &opts) {
            Err(Error::NewtonDidNotConverge { iterations: 0, .. }) => {}
            other => panic!("expected Newton failure, got {other:?}"),
        }
    }

    #[test]
    fn three_dimensional_systems_solve_both_ways() {
        let hier = build_hierarchy(3, 1, 2, 1.0, 0.2, 2).unwrap();
        let level = hier.level(1);
        let g = vec![1.0; level.mesh.n_nodes()];
        let stim = Stimulus {
            amplitude: 10.0,
            baseline: 0.0,
            center: [0.5, 0.5, 0.5],
            width: 0.4,
            t1: f64::INFINITY,
        };
        let sys = build_system(level, 1, &g, IonModel::linear(), &stim, None).unwrap();
        let (mono, _) = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default()).unwrap();
        let (seq, _) = sequential_solve(&sys, &SolverOptions::sequential()).unwrap();
        let gap = mono
            .values
            .iter()
            .zip(&seq.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-8, "3D paths disagree by {gap}");
    }
}
