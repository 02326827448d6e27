//! `verify`: a fast built-in oracle suite that cross-checks the numerical
//! kernels on small problems and reports one PASS/FAIL line per check.

use stmlmc::estimator::{
    mc_estimate, mlmc_estimate_shared, model_work, sample_counts, Problem, RunControls,
};
use stmlmc::fem::Stimulus;
use stmlmc::mesh::build_hierarchy;
use stmlmc::random_field::{
    build_kl, draw_sample, pivoted_cholesky, squared_exponential_covariance, DumpingFactor,
    ModeInnerProduct,
};
use stmlmc::solve::{newton_solve, sequential_solve, SolverOptions};
use stmlmc::system::{build_system, IonModel, SpaceTimeField};
use stmlmc::transfer::{ProjectionMode, TransferPair};

struct Check {
    name: &'static str,
    run: fn() -> Result<(), String>,
}

fn fhn() -> IonModel {
    IonModel::cubic(1.4e-3, 0.0, 28.0, 115.0).expect("ordered potentials")
}

fn stimulus() -> Stimulus {
    Stimulus {
        amplitude: 115.0,
        baseline: 0.0,
        center: [0.0, 0.0, 0.0],
        width: 0.5,
        t1: 0.005,
    }
}

fn small_problem() -> Result<Problem, String> {
    let hierarchy = build_hierarchy(1, 1, 8, 1.0, 0.64, 2).map_err(|e| e.to_string())?;
    let kl = build_kl(
        &hierarchy,
        0.25,
        1e-2,
        16,
        ModeInnerProduct::Euclidean,
        3.325e-3,
        0.5,
        DumpingFactor::Auto,
    )
    .map_err(|e| e.to_string())?;
    Problem::new(hierarchy, kl, fhn(), stimulus(), SolverOptions::default())
        .map_err(|e| e.to_string())
}

fn check_work_model() -> Result<(), String> {
    for big_l in 1..=6u32 {
        let counts =
            sample_counts(big_l as usize, 1 << (4 * big_l), 16.0).map_err(|e| e.to_string())?;
        let n_mc = 1u64 << (4 * big_l);
        let cube = model_work(4.0, &counts, n_mc).map_err(|e| e.to_string())?;
        let expect = big_l as f64 * (4.0 * big_l as f64).exp2();
        if cube.total_mlmc != expect {
            return Err(format!(
                "gamma_d=4, L={big_l}: W_MLMC = {} instead of {expect}",
                cube.total_mlmc
            ));
        }
        let line = model_work(2.0, &counts, n_mc).map_err(|e| e.to_string())?;
        let expect =
            ((4.0 * big_l as f64).exp2() - (2.0 * big_l as f64).exp2()) / (1.0 - (-2.0f64).exp2());
        if line.total_mlmc != expect {
            return Err(format!(
                "gamma_d=2, L={big_l}: W_MLMC = {} instead of {expect}",
                line.total_mlmc
            ));
        }
    }
    Ok(())
}

fn check_pivoted_cholesky() -> Result<(), String> {
    let nodes: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 / 49.0, 0.0, 0.0]).collect();
    let cov = squared_exponential_covariance(&nodes, 0.25);
    let eps = 1e-10;
    let factor = pivoted_cholesky(&cov, eps, 50).map_err(|e| e.to_string())?;
    if factor.remaining_trace > eps * factor.initial_trace {
        return Err(format!(
            "remaining trace {} exceeds eps*trace = {}",
            factor.remaining_trace,
            eps * factor.initial_trace
        ));
    }
    // Reconstruction residual C - LLᵀ is PSD with trace = remaining trace,
    // so every entry is bounded by it.
    let l = &factor.cols;
    let mut worst = 0.0f64;
    for i in 0..50 {
        for j in 0..50 {
            let mut rec = 0.0;
            for k in 0..factor.rank() {
                rec += l[(i, k)] * l[(j, k)];
            }
            worst = worst.max((cov[(i, j)] - rec).abs());
        }
    }
    let bound = factor.remaining_trace.max(1e-12 * factor.initial_trace);
    if worst > bound {
        return Err(format!("reconstruction error {worst} exceeds {bound}"));
    }
    Ok(())
}

fn check_ellipticity() -> Result<(), String> {
    let hierarchy = build_hierarchy(1, 3, 31, 1.0, 0.64, 4).map_err(|e| e.to_string())?;
    let kl = build_kl(
        &hierarchy,
        0.25,
        1e-2,
        200,
        ModeInnerProduct::Euclidean,
        3.325e-3,
        0.5,
        DumpingFactor::Auto,
    )
    .map_err(|e| e.to_string())?;
    let bound = kl.delta() * kl.g0();
    if kl.s() * kl.worst_perturbation() > bound * (1.0 + 1e-12) {
        return Err(format!(
            "s*worst = {} breaks delta*G0 = {bound}",
            kl.s() * kl.worst_perturbation()
        ));
    }
    let (lo, hi) = ((1.0 - kl.delta()) * kl.g0(), (1.0 + kl.delta()) * kl.g0());
    for i in 0..1000u64 {
        let y = draw_sample(9001, 3, i, kl.n_modes());
        let g = kl.realize(3, &y);
        if g.iter().any(|&v| v < lo || v > hi) {
            return Err(format!("field {i} leaves [{lo}, {hi}]"));
        }
    }
    Ok(())
}

fn check_jacobian() -> Result<(), String> {
    let hierarchy = build_hierarchy(1, 1, 8, 1.0, 0.64, 2).map_err(|e| e.to_string())?;
    let level = hierarchy.level(1);
    let g = vec![3.325e-3; level.mesh.n_nodes()];
    let sys = build_system(level, 1, &g, fhn(), &stimulus(), None).map_err(|e| e.to_string())?;
    let n_dof = sys.n * sys.m;
    let mut jac = sys.spacetime_matrix();
    for trial in 0..3u64 {
        let y = draw_sample(77, trial, 0, 2 * n_dof);
        let u: Vec<f64> = y[..n_dof].iter().map(|v| 60.0 * v).collect();
        let v: Vec<f64> = y[n_dof..].iter().map(|v| 10.0 * v).collect();
        sys.update_jacobian_values(&u, &mut jac);
        let mut jv = vec![0.0; n_dof];
        jac.matvec(&v, &mut jv);
        let h = 1e-6;
        let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let rp = sys.residual(&up);
        let rm = sys.residual(&um);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n_dof {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            err = err.max((fd - jv[i]).abs());
            scale = scale.max(jv[i].abs());
        }
        if err > 1e-5 * scale.max(1.0) {
            return Err(format!("trial {trial}: FD mismatch {err} at scale {scale}"));
        }
    }
    Ok(())
}

fn check_solver_paths_agree() -> Result<(), String> {
    let problem = small_problem()?;
    for i in 0..2u64 {
        let y = draw_sample(123, 1, i, problem.kl.n_modes());
        let g = problem.kl.realize(1, &y);
        let sys = build_system(
            problem.hierarchy.level(1),
            1,
            &g,
            problem.ion,
            &problem.stimulus,
            None,
        )
        .map_err(|e| e.to_string())?;
        let (mono, _) = newton_solve(&sys, &sys.zero_field(), &SolverOptions::default())
            .map_err(|e| e.to_string())?;
        let (seq, _) =
            sequential_solve(&sys, &SolverOptions::sequential()).map_err(|e| e.to_string())?;
        let gap = mono
            .values
            .iter()
            .zip(&seq.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if gap > 1e-8 {
            return Err(format!("sample {i}: paths differ by {gap}"));
        }
    }
    Ok(())
}

fn check_telescoping() -> Result<(), String> {
    let problem = small_problem()?;
    let controls = RunControls::new(5);
    let shared = mlmc_estimate_shared(&problem, 1, 4, &controls).map_err(|e| e.to_string())?;
    let mc = mc_estimate(&problem, 1, 4, &controls).map_err(|e| e.to_string())?;
    let scale = mc.mean_field.norm_inf().max(1.0);
    let gap = shared
        .values
        .iter()
        .zip(&mc.mean_field.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if gap > 1e-12 * scale {
        return Err(format!("telescope gap {gap} at scale {scale}"));
    }
    Ok(())
}

fn check_transfer_roundtrip() -> Result<(), String> {
    let hierarchy = build_hierarchy(1, 1, 8, 1.0, 0.64, 2).map_err(|e| e.to_string())?;
    let pair =
        TransferPair::new(&hierarchy, 0, ProjectionMode::Exact).map_err(|e| e.to_string())?;
    let n_c = hierarchy.level(0).mesh.n_nodes();
    let m_c = hierarchy.level(0).time.steps;
    let coarse = SpaceTimeField::from_values(
        0,
        n_c,
        m_c,
        (0..n_c * m_c)
            .map(|i| ((i * 13 % 7) as f64) - 3.0)
            .collect(),
    );
    let back = pair
        .restrict(&pair.prolong(&coarse))
        .map_err(|e| e.to_string())?;
    let gap = back
        .values
        .iter()
        .zip(&coarse.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if gap > 1e-10 {
        return Err(format!("restrict(prolong(v)) differs from v by {gap}"));
    }
    Ok(())
}

fn check_stream_determinism() -> Result<(), String> {
    let a = draw_sample(42, 1, 7, 12);
    let b = draw_sample(42, 1, 7, 12);
    if a != b {
        return Err("identical keys produced different draws".into());
    }
    let c = draw_sample(42, 2, 7, 12);
    if a == c {
        return Err("distinct level tags produced identical draws".into());
    }
    if a.iter().any(|v| !(-1.0..1.0).contains(v)) {
        return Err("draws left [-1, 1)".into());
    }
    Ok(())
}

/// Run every check; returns the number of failures (0 = all passed).
pub fn run_verify() -> usize {
    let checks: &[Check] = &[
        Check {
            name: "work-model-closed-forms",
            run: check_work_model,
        },
        Check {
            name: "pivoted-cholesky-low-rank",
            run: check_pivoted_cholesky,
        },
        Check {
            name: "ellipticity-bounds",
            run: check_ellipticity,
        },
        Check {
            name: "jacobian-finite-difference",
            run: check_jacobian,
        },
        Check {
            name: "monolithic-sequential-agreement",
            run: check_solver_paths_agree,
        },
        Check {
            name: "shared-sample-telescoping",
            run: check_telescoping,
        },
        Check {
            name: "transfer-roundtrip",
            run: check_transfer_roundtrip,
        },
        Check {
            name: "sample-stream-determinism",
            run: check_stream_determinism,
        },
    ];
    let mut failures = 0;
    for check in checks {
        match (check.run)() {
            Ok(()) => println!("verify {}: PASS", check.name),
            Err(detail) => {
                failures += 1;
                println!("verify {}: FAIL ({detail})", check.name);
            }
        }
    }
    if failures == 0 {
        println!("verify: all {} checks passed", checks.len());
    } else {
        println!("verify: {failures} of {} checks failed", checks.len());
    }
    failures
}
