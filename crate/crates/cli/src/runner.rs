//! Subcommand implementations: each wires the configuration into the
//! library, runs the experiment, and emits CSV/VTK artifacts.

use std::path::{Path, PathBuf};
use stmlmc::estimator::{
    bochner_norm, mc_estimate, measured_work, mlmc_estimate, model_work, reference_mean, rmse,
    sample_counts, EstimatorResult, Problem, RunControls,
};
use stmlmc::random_field::{pivoted_cholesky, squared_exponential_covariance};
use stmlmc::scheduler::write_trace_csv;
use stmlmc::system::SpaceTimeField;

use crate::artifacts::{dump_steps, ensure_dir, num, write_vtk, CsvTable};
use crate::config::ExperimentConfig;
use crate::CliError;

/// Unit label of the discrete space-time norm for a given dimension.
fn norm_unit(dim: usize) -> String {
    format!("[mV*(cm^{dim}*ms)^0.5]")
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.output.dir);
    ensure_dir(&dir)?;
    Ok(dir)
}

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Scheduling controls for a single-level run, using the level's pool.
fn controls_for_level(cfg: &ExperimentConfig, level: usize) -> RunControls {
    RunControls {
        master_seed: cfg.estimator.master_seed,
        workers: cfg.scheduler.workers.max(1),
        pools: if cfg.scheduler.pools.is_empty() {
            Vec::new()
        } else {
            vec![cfg.scheduler.pools[level]]
        },
    }
}

fn controls_multilevel(cfg: &ExperimentConfig, fine_level: usize) -> RunControls {
    RunControls {
        master_seed: cfg.estimator.master_seed,
        workers: cfg.scheduler.workers.max(1),
        pools: if cfg.scheduler.pools.is_empty() {
            Vec::new()
        } else {
            cfg.scheduler.pools[..=fine_level].to_vec()
        },
    }
}

/// `kl-spectrum`: eigenvalue table of the truncated expansion.
pub fn run_kl_spectrum(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = out_dir(cfg)?;
    let g = &cfg.geometry;
    let hierarchy = stmlmc::mesh::build_hierarchy(
        g.dim,
        g.levels,
        g.base_cells,
        g.extent,
        g.t_final,
        g.base_steps,
    )
    .map_err(|e| CliError::Config(format!("geometry: {e}")))?;
    let finest = hierarchy.finest();
    let cov = squared_exponential_covariance(hierarchy.level(finest).mesh.nodes(), cfg.kl.sigma);
    let factor = pivoted_cholesky(&cov, cfg.kl.tolerance, cfg.kl.max_modes)
        .map_err(|e| CliError::Config(format!("kl: {e}")))?;
    let kl = stmlmc::random_field::kl_from_factor(
        &factor,
        &hierarchy,
        cfg.inner_product(),
        cfg.kl.g0,
        cfg.kl.delta,
        cfg.dumping(),
    )
    .map_err(|e| CliError::Config(format!("kl: {e}")))?;

    let mut preamble = cfg.preamble();
    preamble.push_str(&format!("# modes = {}\n", kl.n_modes()));
    preamble.push_str(&format!("# s = {}\n", num(kl.s())));
    preamble.push_str(&format!("# s_max = {}\n", num(kl.s_max())));
    preamble.push_str(&format!(
        "# worst_perturbation_sum = {}\n",
        num(kl.worst_perturbation())
    ));
    preamble.push_str(&format!(
        "# initial_trace = {}\n",
        num(factor.initial_trace)
    ));
    preamble.push_str(&format!(
        "# remaining_trace = {}\n",
        num(factor.remaining_trace)
    ));
    let mut table = CsvTable::new(
        &preamble,
        &[
            "mode [-]",
            "lambda [-]",
            "sqrt_lambda [-]",
            "captured_trace_fraction [-]",
        ],
    );
    let mut captured = 0.0;
    for (k, &lambda) in kl.lambdas().iter().enumerate() {
        captured += lambda;
        table.row(&[
            format!("{k}"),
            num(lambda),
            num(lambda.sqrt()),
            num(captured / factor.initial_trace),
        ]);
    }
    let path = dir.join("kl_spectrum.csv");
    table.write(&path)?;
    println!(
        "kl-spectrum: {} modes retained (s = {:.6e}, remaining trace {:.3e}) -> {}",
        kl.n_modes(),
        kl.s(),
        factor.remaining_trace,
        path.display()
    );
    Ok(path)
}

/// `solve`: one deterministic (y = 0) solve on the target level.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = out_dir(cfg)?;
    let problem = cfg.build_problem()?;
    let level = cfg.target_level();
    let solution = &problem.warm_starts[level];
    let mesh = &problem.hierarchy.level(level).mesh;
    let dt = problem.dt(level);
    let steps = dump_steps(&cfg.output.vtk_steps, solution.m)?;
    for &k in &steps {
        write_vtk(
            &dir,
            "solution",
            "u",
            mesh,
            solution,
            k,
            k as f64 * dt,
            cfg.estimator.master_seed,
        )?;
    }
    let norm = problem.bochner(solution);
    let mut table = CsvTable::new(
        &cfg.preamble(),
        &[
            "level [-]",
            "nodes [-]",
            "steps [-]",
            "dofs [-]",
            &format!("solution_norm {}", norm_unit(cfg.geometry.dim)),
        ],
    );
    table.row(&[
        format!("{level}"),
        format!("{}", mesh.n_nodes()),
        format!("{}", solution.m),
        format!("{}", mesh.n_nodes() * solution.m),
        num(norm),
    ]);
    let path = dir.join("solve_summary.csv");
    table.write(&path)?;
    println!(
        "solve: level {level}, {} dofs, norm {:.6e} -> {}",
        mesh.n_nodes() * solution.m,
        norm,
        path.display()
    );
    Ok(path)
}

/// Artifacts shared by `mc` and `mlmc`: per-level table, summary, field
/// dumps, plus the (nondeterministic) timing and trace measurements.
fn write_estimate(
    cfg: &ExperimentConfig,
    dir: &Path,
    problem: &Problem,
    result: &EstimatorResult,
) -> Result<(), CliError> {
    let dim = cfg.geometry.dim;
    let preamble = cfg.preamble();

    let mut per_level = CsvTable::new(
        &preamble,
        &[
            "level [-]",
            "samples [-]",
            &format!("mean_correction_norm {}", norm_unit(dim)),
            &format!("correction_norm_variance [mV^2*cm^{dim}*ms]"),
        ],
    );
    for stats in &result.per_level {
        per_level.row(&[
            format!("{}", stats.level),
            format!("{}", stats.samples),
            num(stats.mean_correction_norm),
            num(stats.correction_norm_variance),
        ]);
    }
    per_level.write(&dir.join("per_level.csv"))?;

    // Wall-clock measurements are confined to timings.csv and trace.csv;
    // every other artifact is byte-identical across re-runs.
    let mut timings = CsvTable::new(
        &preamble,
        &[
            "level [-]",
            "samples [-]",
            "seconds [s]",
            "per_sample_seconds [s]",
        ],
    );
    for (stats, per_sample) in result.per_level.iter().zip(&result.work_units) {
        timings.row(&[
            format!("{}", stats.level),
            format!("{}", stats.samples),
            num(stats.seconds),
            num(*per_sample),
        ]);
    }
    timings.write(&dir.join("timings.csv"))?;

    let mut trace = Vec::new();
    write_trace_csv(&mut trace, &result.trace).map_err(CliError::Run)?;
    std::fs::write(dir.join("trace.csv"), trace)
        .map_err(|e| CliError::Run(stmlmc::Error::Io(e)))?;

    let level = result.level;
    let mesh = &problem.hierarchy.level(level).mesh;
    let dt = problem.dt(level);
    let mean_norm = problem.bochner(&result.mean_field);
    let mut summary = CsvTable::new(
        &preamble,
        &[
            "kind [-]",
            "fine_level [-]",
            "total_samples [-]",
            &format!("mean_norm {}", norm_unit(dim)),
            "max_variance [mV^2]",
            "kl_modes [-]",
            "negative_variance_entries [-]",
            "worst_negative_variance [mV^2]",
        ],
    );
    summary.row(&[
        cfg.estimator.kind.clone(),
        format!("{level}"),
        format!(
            "{}",
            result.per_level.iter().map(|s| s.samples).sum::<u64>()
        ),
        num(mean_norm),
        num(result.variance_field.norm_inf()),
        format!("{}", problem.kl.n_modes()),
        format!("{}", result.negative_variance_entries),
        num(result.worst_negative_variance),
    ]);
    summary.write(&dir.join("summary.csv"))?;

    let steps = dump_steps(&cfg.output.vtk_steps, result.mean_field.m)?;
    for &k in &steps {
        write_vtk(
            dir,
            "mean",
            "mean",
            mesh,
            &result.mean_field,
            k,
            k as f64 * dt,
            result.master_seed,
        )?;
        write_vtk(
            dir,
            "variance",
            "variance",
            mesh,
            &result.variance_field,
            k,
            k as f64 * dt,
            result.master_seed,
        )?;
    }
    // Per-level averaged corrections at their final time block.
    if result.correction_means.len() > 1 {
        for corr in &result.correction_means {
            let cmesh = &problem.hierarchy.level(corr.level).mesh;
            let cdt = problem.dt(corr.level);
            write_vtk(
                dir,
                &format!("correction_l{}", corr.level),
                "correction",
                cmesh,
                corr,
                corr.m,
                corr.m as f64 * cdt,
                result.master_seed,
            )?;
        }
    }
    Ok(())
}

/// `mc`: plain Monte Carlo on the target level.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<EstimatorResult, CliError> {
    let dir = out_dir(cfg)?;
    let problem = cfg.build_problem()?;
    let level = cfg.target_level();
    let controls = controls_for_level(cfg, level);
    let result =
        mc_estimate(&problem, level, cfg.estimator.samples, &controls).map_err(CliError::Run)?;
    write_estimate(cfg, &dir, &problem, &result)?;
    println!(
        "mc: level {level}, {} samples, mean norm {:.6e} -> {}",
        cfg.estimator.samples,
        problem.bochner(&result.mean_field),
        dir.display()
    );
    Ok(result)
}

/// `mlmc`: multilevel telescoped estimate up to the target level.
pub fn run_mlmc(cfg: &ExperimentConfig) -> Result<EstimatorResult, CliError> {
    let dir = out_dir(cfg)?;
    let problem = cfg.build_problem()?;
    let fine_level = cfg.target_level();
    let counts = sample_counts(fine_level, cfg.estimator.samples, cfg.estimator.beta)
        .map_err(CliError::Run)?;
    let controls = controls_multilevel(cfg, fine_level);
    let result = mlmc_estimate(&problem, fine_level, &counts, &controls).map_err(CliError::Run)?;
    write_estimate(cfg, &dir, &problem, &result)?;
    println!(
        "mlmc: L = {fine_level}, counts {:?}, mean norm {:.6e} -> {}",
        counts,
        problem.bochner(&result.mean_field),
        dir.display()
    );
    Ok(result)
}

/// One row of the controlled-convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub method: &'static str,
    pub level: usize,
    pub samples: u64,
    pub repetitions: usize,
    pub rmse: f64,
}

/// `convergence`: controlled MC (N_l = β^l) and controlled MLMC
/// (N_coarse = β^L) tables over l = 0..target, measured against an
/// independent-stream reference mean on the finest hierarchy level.
///
/// Each estimate is compared on its own level against the reference
/// restricted down to that level (time-node injection plus spatial L2
/// projection), so the error metric sees only the discretization and
/// sampling content of the estimate itself.  Prolonging the coarse
/// estimates up instead would add the interpolation error of the level
/// transfer on top, which decays slower than the scheme itself.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>, CliError> {
    let dir = out_dir(cfg)?;
    let problem = cfg.build_problem()?;
    let lmax = cfg.target_level();
    let reference_level = problem.hierarchy.finest();
    let workers = cfg.scheduler.workers.max(1);
    let seed = cfg.estimator.master_seed;
    let reps = cfg.estimator.repetitions;
    let reference = reference_mean(
        &problem,
        reference_level,
        cfg.estimator.reference_samples,
        seed,
        workers,
    )
    .map_err(CliError::Run)?;
    // reference_at[l] is the reference mean restricted down to level l.
    let mut reference_at = vec![reference];
    for pair in problem.pairs[..reference_level].iter().rev() {
        let last = reference_at.last().expect("seeded with the reference");
        reference_at.push(pair.restrict(last).map_err(CliError::Run)?);
    }
    reference_at.reverse();

    let mut rows = Vec::new();
    // The level drives seeds, schedules and norms, not just the lookup.
    #[allow(clippy::needless_range_loop)]
    for l in 0..=lmax {
        let mass = problem.mass(l);
        let dt = problem.dt(l);
        let n_mc = (cfg.estimator.beta.powi(l as i32)).round() as u64;
        let mut mc_means = Vec::with_capacity(reps);
        let mut ml_means = Vec::with_capacity(reps);
        let counts = sample_counts(l, n_mc, cfg.estimator.beta).map_err(CliError::Run)?;
        for j in 0..reps {
            let rep_seed = seed.wrapping_add(j as u64);
            let mut mc_controls = controls_for_level(cfg, l);
            mc_controls.master_seed = rep_seed;
            let mc = mc_estimate(&problem, l, n_mc, &mc_controls).map_err(CliError::Run)?;
            mc_means.push(mc.mean_field);
            let mut ml_controls = controls_multilevel(cfg, l);
            ml_controls.master_seed = rep_seed;
            let ml = mlmc_estimate(&problem, l, &counts, &ml_controls).map_err(CliError::Run)?;
            ml_means.push(ml.mean_field);
        }
        rows.push(ConvergenceRow {
            method: "mc",
            level: l,
            samples: n_mc,
            repetitions: reps,
            rmse: rmse(&mc_means, &reference_at[l], mass, dt).map_err(CliError::Run)?,
        });
        rows.push(ConvergenceRow {
            method: "mlmc",
            level: l,
            samples: n_mc,
            repetitions: reps,
            rmse: rmse(&ml_means, &reference_at[l], mass, dt).map_err(CliError::Run)?,
        });
    }

    let mut preamble = cfg.preamble();
    preamble.push_str(&format!("# reference_level = {reference_level}\n"));
    preamble.push_str(&format!(
        "# reference_samples = {}\n",
        cfg.estimator.reference_samples
    ));
    let mut table = CsvTable::new(
        &preamble,
        &[
            "method [-]",
            "level [-]",
            "samples [-]",
            "repetitions [-]",
            &format!("rmse {}", norm_unit(cfg.geometry.dim)),
        ],
    );
    for row in &rows {
        table.row(&[
            row.method.to_string(),
            format!("{}", row.level),
            format!("{}", row.samples),
            format!("{}", row.repetitions),
            num(row.rmse),
        ]);
    }
    let path = dir.join("convergence.csv");
    table.write(&path)?;
    for method in ["mc", "mlmc"] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == method && r.rmse > 0.0)
            .map(|r| (r.level as f64, r.rmse.log2()))
            .collect();
        if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            println!(
                "convergence: {method} fitted log2(RMSE)/level slope = {:.3}",
                fit_slope(&xs, &ys)
            );
        }
    }
    println!("convergence: table -> {}", path.display());
    Ok(rows)
}

/// Number of solves used to estimate each per-sample work figure.
pub const WORK_TIMING_SAMPLES: u64 = 8;

/// Measure per-sample work per level with small warm-started MC runs.
pub fn measure_w_prime(problem: &Problem, levels: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let mut w_prime = Vec::with_capacity(levels + 1);
    for l in 0..=levels {
        let controls = RunControls {
            master_seed: seed,
            workers: 1,
            pools: Vec::new(),
        };
        let run = mc_estimate(problem, l, WORK_TIMING_SAMPLES, &controls).map_err(CliError::Run)?;
        w_prime.push(run.work_units[0]);
    }
    Ok(w_prime)
}

/// `work`: measured and model work totals at the configured fine level.
/// The measured table is a wall-clock measurement artifact; the model
/// table is deterministic.
pub fn run_work(cfg: &ExperimentConfig) -> Result<(f64, f64), CliError> {
    let dir = out_dir(cfg)?;
    let problem = cfg.build_problem()?;
    let fine_level = cfg.target_level();
    let counts = sample_counts(fine_level, cfg.estimator.samples, cfg.estimator.beta)
        .map_err(CliError::Run)?;
    let n_mc = cfg.estimator.samples;

    let w_prime = measure_w_prime(&problem, fine_level, cfg.estimator.master_seed)?;
    let measured = measured_work(&w_prime, &counts, n_mc).map_err(CliError::Run)?;
    let model = model_work(measured.gamma_d, &counts, n_mc).map_err(CliError::Run)?;

    let preamble = cfg.preamble();
    let mut measured_csv = CsvTable::new(
        &preamble,
        &[
            "level [-]",
            "mlmc_samples [-]",
            "per_sample_work [s]",
            "correction_work [s]",
        ],
    );
    #[allow(clippy::needless_range_loop)] // three parallel per-level arrays
    for l in 0..=fine_level {
        measured_csv.row(&[
            format!("{l}"),
            format!("{}", counts[l]),
            num(measured.w_prime[l]),
            num(measured.w_correction[l]),
        ]);
    }
    measured_csv.write(&dir.join("work_measured_levels.csv"))?;

    let mut totals = CsvTable::new(
        &preamble,
        &[
            "method [-]",
            "basis [-]",
            "fine_level [-]",
            "gamma_d [-]",
            "total_work [s (measured) | coarse-solve units (model)]",
        ],
    );
    totals.row(&[
        "mc".into(),
        "measured".into(),
        format!("{fine_level}"),
        num(measured.gamma_d),
        num(measured.total_mc),
    ]);
    totals.row(&[
        "mlmc".into(),
        "measured".into(),
        format!("{fine_level}"),
        num(measured.gamma_d),
        num(measured.total_mlmc),
    ]);
    totals.row(&[
        "mc".into(),
        "model".into(),
        format!("{fine_level}"),
        num(model.gamma_d),
        num(model.total_mc),
    ]);
    totals.row(&[
        "mlmc".into(),
        "model".into(),
        format!("{fine_level}"),
        num(model.gamma_d),
        num(model.total_mlmc),
    ]);
    totals.write(&dir.join("work_measured.csv"))?;
    println!(
        "work: measured W_MLMC/W_MC = {:.4} (gamma_d = {:.2}) -> {}",
        measured.total_mlmc / measured.total_mc,
        measured.gamma_d,
        dir.display()
    );
    Ok((measured.total_mlmc, measured.total_mc))
}

/// Norm helper reused by the verification suite and tests.
pub fn field_norm(problem: &Problem, field: &SpaceTimeField) -> f64 {
    bochner_norm(field, problem.mass(field.level), problem.dt(field.level))
}
