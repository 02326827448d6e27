//! Monte Carlo and multilevel Monte Carlo estimation over the space-time
//! hierarchy, discrete Bochner norms and RMSE, sample-count rules, and the
//! analytic/measured work models.
//!
//! Sample streams are keyed by (master seed, level tag, index), so coupled
//! coarse/fine solves of one correction share their parameters by
//! construction, every level draws fresh independent samples, and results
//! are accumulated in sample-index order after collection — estimates are a
//! pure function of configuration and seed, not of worker count.

use crate::fem::Stimulus;
use crate::mesh::MeshHierarchy;
use crate::random_field::{draw_sample, KlExpansion};
use crate::scheduler::{execute, execute_batched, plan_batches, SchedulePlan, TraceRow};
use crate::solve::{newton_solve, sequential_solve, SolverOptions};
use crate::sparse::CsrMatrix;
use crate::system::{build_system, IonModel, SpaceTimeField};
use crate::transfer::{prolong_through, ProjectionMode, TransferPair};
use crate::{fem, Error, Result};
use std::time::Instant;

/// Salt XOR'd into the master seed for reference computations so that
/// reference sample streams never overlap estimator streams.
pub const REFERENCE_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Fixed reference accumulation chunk: partial sums are formed over blocks
/// of this many consecutive samples, keeping the mean bitwise independent
/// of worker count and pool layout.
pub const REFERENCE_CHUNK: u64 = 64;

/// Everything needed to solve one sample on any level of the hierarchy.
pub struct Problem {
    pub hierarchy: MeshHierarchy,
    pub kl: KlExpansion,
    pub ion: IonModel,
    pub stimulus: Stimulus,
    pub solver: SolverOptions,
    /// pairs[l] transfers level l to level l+1 (exact L2 restriction).
    pub pairs: Vec<TransferPair>,
    /// Unperturbed (y = 0) solution per level, the Newton warm start.
    pub warm_starts: Vec<SpaceTimeField>,
    masses: Vec<CsrMatrix>,
}

impl Problem {
    /// Assemble transfer pairs, per-level mass matrices, and the per-level
    /// unperturbed solutions reused as warm starts by every sample solve.
    pub fn new(
        hierarchy: MeshHierarchy,
        kl: KlExpansion,
        ion: IonModel,
        stimulus: Stimulus,
        solver: SolverOptions,
    ) -> Result<Problem> {
        let finest = hierarchy.finest();
        let mut pairs = Vec::with_capacity(finest);
        for l in 0..finest {
            pairs.push(TransferPair::new(&hierarchy, l, ProjectionMode::Exact)?);
        }
        let masses: Vec<CsrMatrix> = (0..=finest)
            .map(|l| fem::assemble_mass(&hierarchy.level(l).mesh))
            .collect();
        let mut warm_starts = Vec::with_capacity(finest + 1);
        for l in 0..=finest {
            let g = kl.realize(l, &vec![0.0; kl.n_modes()]);
            let sys = build_system(hierarchy.level(l), l, &g, ion, &stimulus, None)?;
            let (u, _) = newton_solve(&sys, &sys.zero_field(), &solver)?;
            warm_starts.push(u);
        }
        Ok(Problem {
            hierarchy,
            kl,
            ion,
            stimulus,
            solver,
            pairs,
            warm_starts,
            masses,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.hierarchy.finest() + 1
    }

    pub fn mass(&self, level: usize) -> &CsrMatrix {
        &self.masses[level]
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.hierarchy.level(level).time.dt
    }

    /// Solve one sample on `level` with the warm-started monolithic path.
    /// Returns the field and the wall seconds of realize+assemble+solve.
    pub fn solve_sample(&self, level: usize, y: &[f64]) -> Result<(SpaceTimeField, f64)> {
        let clock = Instant::now();
        let g = self.kl.realize(level, y);
        let sys = build_system(
            self.hierarchy.level(level),
            level,
            &g,
            self.ion,
            &self.stimulus,
            None,
        )?;
        let (u, _) = newton_solve(&sys, &self.warm_starts[level], &self.solver)?;
        Ok((u, clock.elapsed().as_secs_f64()))
    }

    /// Same sample through the sequential time-stepping path (used for
    /// reference means and cross-validation).
    pub fn solve_sample_sequential(&self, level: usize, y: &[f64]) -> Result<SpaceTimeField> {
        let g = self.kl.realize(level, y);
        let sys = build_system(
            self.hierarchy.level(level),
            level,
            &g,
            self.ion,
            &self.stimulus,
            None,
        )?;
        let (u, _) = sequential_solve(&sys, &SolverOptions::sequential())?;
        Ok(u)
    }

    /// Discrete space-time norm of a field on its own level.
    pub fn bochner(&self, field: &SpaceTimeField) -> f64 {
        bochner_norm(field, &self.masses[field.level], self.dt(field.level))
    }
}

/// N_l = max(1, round(N_coarse·β^{−l})) for l = 0..=fine_level.
pub fn sample_counts(fine_level: usize, n_coarse: u64, beta: f64) -> Result<Vec<u64>> {
    if n_coarse == 0 {
        return Err(Error::InvalidConfig(
            "coarse sample count must be >= 1".into(),
        ));
    }
    if !(beta > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling ratio must exceed 1, got {beta}"
        )));
    }
    Ok((0..=fine_level)
        .map(|l| {
            let raw = n_coarse as f64 * beta.powi(-(l as i32));
            (raw.round() as u64).max(1)
        })
        .collect())
}

/// ‖v‖ = sqrt(Σ_k Δt·v_kᵀ M v_k): the discrete L²([0,T]; L²(D)) norm.
pub fn bochner_norm(field: &SpaceTimeField, mass: &CsrMatrix, dt: f64) -> f64 {
    let n = field.n;
    let mut mv = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..field.m {
        let block = field.block(k);
        mass.matvec(block, &mut mv);
        acc += dt * crate::sparse::dot(block, &mv);
    }
    acc.sqrt()
}

/// Variant adding the diffusion seminorm: Σ_k Δt·(v_kᵀMv_k + v_kᵀKv_k)
/// with K the unit-coefficient stiffness matrix.
pub fn bochner_norm_h1(
    field: &SpaceTimeField,
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    dt: f64,
) -> f64 {
    let n = field.n;
    let mut mv = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..field.m {
        let block = field.block(k);
        mass.matvec(block, &mut mv);
        acc += dt * crate::sparse::dot(block, &mv);
        stiffness.matvec(block, &mut mv);
        acc += dt * crate::sparse::dot(block, &mv);
    }
    acc.sqrt()
}

/// RMSE over repetitions: sqrt(K⁻¹ Σ_j ‖mean_j − reference‖²).
pub fn rmse(
    means: &[SpaceTimeField],
    reference: &SpaceTimeField,
    mass: &CsrMatrix,
    dt: f64,
) -> Result<f64> {
    if means.is_empty() {
        return Err(Error::InvalidConfig(
            "rmse needs at least one repetition".into(),
        ));
    }
    let mut acc = 0.0;
    for mean in means {
        if mean.level != reference.level || mean.values.len() != reference.values.len() {
            return Err(Error::InvalidConfig(
                "rmse inputs must live on the reference level".into(),
            ));
        }
        let diff = SpaceTimeField::from_values(
            mean.level,
            mean.n,
            mean.m,
            mean.values
                .iter()
                .zip(&reference.values)
                .map(|(a, b)| a - b)
                .collect(),
        );
        let norm = bochner_norm(&diff, mass, dt);
        acc += norm * norm;
    }
    Ok((acc / means.len() as f64).sqrt())
}

/// Scheduling and seeding controls shared by the estimator entry points.
#[derive(Debug, Clone)]
pub struct RunControls {
    pub master_seed: u64,
    /// OS threads; 0 picks one per pool slot (capped by the machine).
    pub workers: usize,
    /// Per-level pool sizes (batch counts); empty means one batch per level.
    pub pools: Vec<usize>,
}

impl RunControls {
    pub fn new(master_seed: u64) -> RunControls {
        RunControls {
            master_seed,
            workers: 1,
            pools: Vec::new(),
        }
    }

    fn pools_for(&self, levels: usize) -> Result<Vec<usize>> {
        if self.pools.is_empty() {
            return Ok(vec![1; levels]);
        }
        if self.pools.len() != levels {
            return Err(Error::InvalidConfig(format!(
                "{} pool sizes for {levels} active level(s)",
                self.pools.len()
            )));
        }
        Ok(self.pools.clone())
    }
}

/// Per-level summary of an estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    pub samples: u64,
    /// Mean space-time norm of the level's correction (u_l − u_{l−1}).
    pub mean_correction_norm: f64,
    /// Unbiased sample variance of those norms (0 for a single sample).
    pub correction_norm_variance: f64,
    /// Total wall seconds spent solving this level's samples.
    pub seconds: f64,
}

/// Output of `mc_estimate` / `mlmc_estimate`.
#[derive(Debug, Clone)]
pub struct EstimatorResult {
    /// Level the fields live on (the fine level L).
    pub level: usize,
    pub mean_field: SpaceTimeField,
    /// Pointwise sample variance (MC) or telescoped second-moment variance
    /// (MLMC), clamped to be nonnegative.
    pub variance_field: SpaceTimeField,
    /// Averaged correction per level, each on its own level's grid (the
    /// telescope terms before prolongation; a single entry for MC).
    pub correction_means: Vec<SpaceTimeField>,
    pub per_level: Vec<LevelStats>,
    /// Mean per-sample wall seconds per level (measured work W_l).
    pub work_units: Vec<f64>,
    pub master_seed: u64,
    /// Entries of the raw variance field below -ε_var (diagnostic; all
    /// negatives are clamped to zero either way).
    pub negative_variance_entries: usize,
    pub worst_negative_variance: f64,
    /// Scheduler utilization trace of the run.
    pub trace: Vec<TraceRow>,
}

struct SamplePayload {
    /// Correction field on the sample's level (the solution itself for MC
    /// and for level 0).
    values: Vec<f64>,
    /// Pointwise u_l² − (prolonged u_{l−1})² for the variance telescope.
    squares: Option<Vec<f64>>,
    norm: f64,
    seconds: f64,
}

fn mc_plan(n: u64, pools: &[usize]) -> Result<SchedulePlan> {
    plan_batches(&[n], pools)
}

/// Plain Monte Carlo on one level: mean and unbiased pointwise sample
/// variance of N warm-started solves, sample i drawing stream
/// (master_seed, tag = level, i).
pub fn mc_estimate(
    problem: &Problem,
    level: usize,
    n: u64,
    controls: &RunControls,
) -> Result<EstimatorResult> {
    if level >= problem.n_levels() {
        return Err(Error::InvalidConfig(format!("level {level} out of range")));
    }
    let pools = controls.pools_for(1)?;
    let plan = mc_plan(n, &pools)?;
    let seed = controls.master_seed;
    let modes = problem.kl.n_modes();
    let mass = problem.mass(level);
    let dt = problem.dt(level);
    let out = execute(&plan, controls.workers, |_plan_level, index| {
        let y = draw_sample(seed, level as u64, index, modes);
        let (u, seconds) = problem
            .solve_sample(level, &y)
            .map_err(|e| e.for_sample(level, index))?;
        let norm = bochner_norm(&u, mass, dt);
        Ok(SamplePayload {
            values: u.values,
            squares: None,
            norm,
            seconds,
        })
    })?;
    let trace = out.trace.clone();
    let flat = out.into_payloads();
    let dim =
        problem.hierarchy.level(level).mesh.n_nodes() * problem.hierarchy.level(level).time.steps;

    // First pass: mean (accumulated in sample-index order).
    let mut mean = vec![0.0; dim];
    let mut norms = Vec::with_capacity(flat.len());
    let mut seconds = 0.0;
    for (_, _, p) in &flat {
        for (m, v) in mean.iter_mut().zip(&p.values) {
            *m += v;
        }
        norms.push(p.norm);
        seconds += p.seconds;
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|v| *v *= inv_n);
    // Second pass: unbiased pointwise variance.
    let mut var = vec![0.0; dim];
    if n > 1 {
        for (_, _, p) in &flat {
            for i in 0..dim {
                let d = p.values[i] - mean[i];
                var[i] += d * d;
            }
        }
        let inv = 1.0 / (n as f64 - 1.0);
        var.iter_mut().for_each(|v| *v *= inv);
    }
    let (nm, nv) = scalar_stats(&norms);
    let shape = problem.hierarchy.level(level);
    let mean_field =
        SpaceTimeField::from_values(level, shape.mesh.n_nodes(), shape.time.steps, mean);
    Ok(EstimatorResult {
        level,
        correction_means: vec![mean_field.clone()],
        mean_field,
        variance_field: SpaceTimeField::from_values(
            level,
            shape.mesh.n_nodes(),
            shape.time.steps,
            var,
        ),
        per_level: vec![LevelStats {
            level,
            samples: n,
            mean_correction_norm: nm,
            correction_norm_variance: nv,
            seconds,
        }],
        work_units: vec![seconds / n as f64],
        master_seed: seed,
        negative_variance_entries: 0,
        worst_negative_variance: 0.0,
        trace,
    })
}

/// Multilevel Monte Carlo up to `fine_level`: level l draws `counts[l]`
/// fresh samples (stream tag l); each correction solves the level-l and
/// level-(l−1) systems with the identical parameter vector, prolongs the
/// coarse solution one level, and contributes u_l − u_{l−1}. Per-level
/// averages are prolonged to the fine level and telescoped into the mean;
/// the variance field telescopes the pointwise second moments the same way.
pub fn mlmc_estimate(
    problem: &Problem,
    fine_level: usize,
    counts: &[u64],
    controls: &RunControls,
) -> Result<EstimatorResult> {
    if fine_level >= problem.n_levels() {
        return Err(Error::InvalidConfig(format!(
            "fine level {fine_level} out of range"
        )));
    }
    if counts.len() != fine_level + 1 {
        return Err(Error::InvalidConfig(format!(
            "{} sample counts for {} levels",
            counts.len(),
            fine_level + 1
        )));
    }
    let pools = controls.pools_for(fine_level + 1)?;
    let plan = plan_batches(counts, &pools)?;
    let seed = controls.master_seed;
    let modes = problem.kl.n_modes();
    let out = execute(&plan, controls.workers, |level, index| {
        let clock = Instant::now();
        let y = draw_sample(seed, level as u64, index, modes);
        let (fine, _) = problem.solve_sample(level, &y)?;
        let (corr, squares) = if level == 0 {
            let squares = fine.values.iter().map(|v| v * v).collect();
            (fine.values, squares)
        } else {
            let (coarse, _) = problem.solve_sample(level - 1, &y)?;
            let lifted = problem.pairs[level - 1].prolong(&coarse);
            let corr: Vec<f64> = fine
                .values
                .iter()
                .zip(&lifted.values)
                .map(|(f, c)| f - c)
                .collect();
            let squares = fine
                .values
                .iter()
                .zip(&lifted.values)
                .map(|(f, c)| f * f - c * c)
                .collect();
            (corr, squares)
        };
        let shape = problem.hierarchy.level(level);
        let corr_field =
            SpaceTimeField::from_values(level, shape.mesh.n_nodes(), shape.time.steps, corr);
        let norm = bochner_norm(&corr_field, problem.mass(level), problem.dt(level));
        Ok(SamplePayload {
            values: corr_field.values,
            squares: Some(squares),
            norm,
            seconds: clock.elapsed().as_secs_f64(),
        })
    })?;
    let trace = out.trace.clone();
    let flat = out.into_payloads();

    // Per-level accumulation in sample-index order.
    let mut per_level = Vec::with_capacity(fine_level + 1);
    let mut work_units = Vec::with_capacity(fine_level + 1);
    let mut correction_means = Vec::with_capacity(fine_level + 1);
    let fine_shape = problem.hierarchy.level(fine_level);
    let fine_dim = fine_shape.mesh.n_nodes() * fine_shape.time.steps;
    let mut mean = vec![0.0; fine_dim];
    let mut second = vec![0.0; fine_dim];
    for l in 0..=fine_level {
        let shape = problem.hierarchy.level(l);
        let dim = shape.mesh.n_nodes() * shape.time.steps;
        let mut mean_l = vec![0.0; dim];
        let mut second_l = vec![0.0; dim];
        let mut norms = Vec::new();
        let mut seconds = 0.0;
        for (pl, _, p) in flat.iter().filter(|(pl, _, _)| *pl == l) {
            debug_assert_eq!(*pl, l);
            for (m, v) in mean_l.iter_mut().zip(&p.values) {
                *m += v;
            }
            for (s, v) in second_l.iter_mut().zip(p.squares.as_ref().unwrap()) {
                *s += v;
            }
            norms.push(p.norm);
            seconds += p.seconds;
        }
        let n_l = counts[l];
        debug_assert_eq!(norms.len() as u64, n_l);
        let inv = 1.0 / n_l as f64;
        mean_l.iter_mut().for_each(|v| *v *= inv);
        second_l.iter_mut().for_each(|v| *v *= inv);
        let mean_l_field =
            SpaceTimeField::from_values(l, shape.mesh.n_nodes(), shape.time.steps, mean_l);
        let lifted_mean = prolong_through(&problem.pairs, &mean_l_field, fine_level);
        correction_means.push(mean_l_field);
        let lifted_second = prolong_through(
            &problem.pairs,
            &SpaceTimeField::from_values(l, shape.mesh.n_nodes(), shape.time.steps, second_l),
            fine_level,
        );
        for i in 0..fine_dim {
            mean[i] += lifted_mean.values[i];
            second[i] += lifted_second.values[i];
        }
        let (nm, nv) = scalar_stats(&norms);
        per_level.push(LevelStats {
            level: l,
            samples: n_l,
            mean_correction_norm: nm,
            correction_norm_variance: nv,
            seconds,
        });
        work_units.push(seconds / n_l as f64);
    }

    // Telescoped variance with the nonnegativity clamp.
    let scale = second.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-12 * scale;
    let mut negative = 0usize;
    let mut worst = 0.0f64;
    let mut var = vec![0.0; fine_dim];
    for i in 0..fine_dim {
        let v = second[i] - mean[i] * mean[i];
        if v < 0.0 {
            if v < -eps {
                negative += 1;
                worst = worst.min(v);
            }
            var[i] = 0.0;
        } else {
            var[i] = v;
        }
    }
    Ok(EstimatorResult {
        level: fine_level,
        mean_field: SpaceTimeField::from_values(
            fine_level,
            fine_shape.mesh.n_nodes(),
            fine_shape.time.steps,
            mean,
        ),
        variance_field: SpaceTimeField::from_values(
            fine_level,
            fine_shape.mesh.n_nodes(),
            fine_shape.time.steps,
            var,
        ),
        correction_means,
        per_level,
        work_units,
        master_seed: seed,
        negative_variance_entries: negative,
        worst_negative_variance: worst,
        trace,
    })
}

/// Test fixture: one shared sample set (fine-level stream) reused by every
/// telescope term, each term prolonged to the fine level before summing.
/// The telescope then cancels exactly and the result equals the fine-level
/// MC mean of the same samples.
pub fn mlmc_estimate_shared(
    problem: &Problem,
    fine_level: usize,
    n: u64,
    controls: &RunControls,
) -> Result<SpaceTimeField> {
    let pools = controls.pools_for(1)?;
    let plan = mc_plan(n, &pools)?;
    let seed = controls.master_seed;
    let modes = problem.kl.n_modes();
    let out = execute(&plan, controls.workers, |_pl, index| {
        let y = draw_sample(seed, fine_level as u64, index, modes);
        let mut telescoped: Option<Vec<f64>> = None;
        let mut below: Option<SpaceTimeField> = None;
        for l in 0..=fine_level {
            let (u, _) = problem
                .solve_sample(l, &y)
                .map_err(|e| e.for_sample(fine_level, index))?;
            let corr = match &below {
                None => u.clone(),
                Some(prev) => {
                    let lifted = problem.pairs[l - 1].prolong(prev);
                    SpaceTimeField::from_values(
                        l,
                        u.n,
                        u.m,
                        u.values
                            .iter()
                            .zip(&lifted.values)
                            .map(|(a, b)| a - b)
                            .collect(),
                    )
                }
            };
            let lifted_corr = prolong_through(&problem.pairs, &corr, fine_level);
            match telescoped.as_mut() {
                None => telescoped = Some(lifted_corr.values),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&lifted_corr.values) {
                        *a += v;
                    }
                }
            }
            below = Some(u);
        }
        Ok(telescoped.unwrap())
    })?;
    let flat = out.into_payloads();
    let shape = problem.hierarchy.level(fine_level);
    let dim = shape.mesh.n_nodes() * shape.time.steps;
    let mut mean = vec![0.0; dim];
    for (_, _, values) in &flat {
        for (m, v) in mean.iter_mut().zip(values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    Ok(SpaceTimeField::from_values(
        fine_level,
        shape.mesh.n_nodes(),
        shape.time.steps,
        mean,
    ))
}

/// Streamed reference mean: `n` sequential-path solves on `level` using the
/// salted independent stream, accumulated as fixed-size chunk partial sums
/// so the result is bitwise reproducible for any worker count.
pub fn reference_mean(
    problem: &Problem,
    level: usize,
    n: u64,
    master_seed: u64,
    workers: usize,
) -> Result<SpaceTimeField> {
    let seed = master_seed ^ REFERENCE_STREAM_SALT;
    let chunks = n.div_ceil(REFERENCE_CHUNK).max(1) as usize;
    let plan = plan_batches(&[n], &[chunks])?;
    let modes = problem.kl.n_modes();
    let out = execute_batched(&plan, workers, |batch| {
        let shape = problem.hierarchy.level(level);
        let mut acc = vec![0.0; shape.mesh.n_nodes() * shape.time.steps];
        for index in batch.start..batch.start + batch.len {
            let y = draw_sample(seed, level as u64, index, modes);
            let u = problem
                .solve_sample_sequential(level, &y)
                .map_err(|e| e.for_sample(level, index))?;
            for (a, v) in acc.iter_mut().zip(&u.values) {
                *a += v;
            }
        }
        Ok(acc)
    })?;
    let shape = problem.hierarchy.level(level);
    let dim = shape.mesh.n_nodes() * shape.time.steps;
    let mut mean = vec![0.0; dim];
    for r in &out.results {
        for (m, v) in mean.iter_mut().zip(&r.payload[0]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    Ok(SpaceTimeField::from_values(
        level,
        shape.mesh.n_nodes(),
        shape.time.steps,
        mean,
    ))
}

fn scalar_stats(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Work accounting for one hierarchy: per-sample work W'_l, correction work
/// W_l = W'_{l−1} + W'_l, and the method totals.
#[derive(Debug, Clone)]
pub struct WorkReport {
    pub w_prime: Vec<f64>,
    pub w_correction: Vec<f64>,
    pub mlmc_counts: Vec<u64>,
    pub mc_samples: u64,
    pub total_mc: f64,
    pub total_mlmc: f64,
    pub gamma_d: f64,
}

/// Measured work: full accounting W_MLMC = Σ_l (W'_{l−1}+W'_l)·N_l and
/// W_MC = W'_L·N_MC; γ_d is the mean dyadic growth rate of the timings.
pub fn measured_work(w_prime: &[f64], mlmc_counts: &[u64], mc_samples: u64) -> Result<WorkReport> {
    if w_prime.is_empty() || w_prime.len() != mlmc_counts.len() {
        return Err(Error::InvalidConfig(
            "work model needs one timing per level".into(),
        ));
    }
    if let Some(w) = w_prime.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "per-sample work must be positive, got {w}"
        )));
    }
    for pair in w_prime.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidConfig(format!(
                "per-sample work must increase with level ({} then {})",
                pair[0], pair[1]
            )));
        }
    }
    let levels = w_prime.len();
    let mut w_correction = Vec::with_capacity(levels);
    let mut total_mlmc = 0.0;
    for l in 0..levels {
        let w_l = if l == 0 {
            w_prime[0]
        } else {
            w_prime[l - 1] + w_prime[l]
        };
        w_correction.push(w_l);
        total_mlmc += w_l * mlmc_counts[l] as f64;
    }
    let total_mc = w_prime[levels - 1] * mc_samples as f64;
    let gamma_d = if levels > 1 {
        w_prime
            .windows(2)
            .map(|p| (p[1] / p[0]).log2())
            .sum::<f64>()
            / (levels - 1) as f64
    } else {
        0.0
    };
    Ok(WorkReport {
        w_prime: w_prime.to_vec(),
        w_correction,
        mlmc_counts: mlmc_counts.to_vec(),
        mc_samples,
        total_mc,
        total_mlmc,
        gamma_d,
    })
}

/// Asymptotic model: W'_l = 2^{γ_d·l}. The MLMC total keeps the model's
/// leading-order convention (corrections l = 0..L−1 charged W'_l each),
/// which reproduces the closed forms L·2^{4L} for γ_d = 4 and
/// (2^{4L} − 2^{γ_d·L})/(1 − 2^{γ_d−4}) for γ_d < 4 exactly.
pub fn model_work(gamma_d: f64, mlmc_counts: &[u64], mc_samples: u64) -> Result<WorkReport> {
    if mlmc_counts.is_empty() {
        return Err(Error::InvalidConfig(
            "work model needs at least one level".into(),
        ));
    }
    let levels = mlmc_counts.len();
    let w_prime: Vec<f64> = (0..levels).map(|l| (gamma_d * l as f64).exp2()).collect();
    let mut w_correction = Vec::with_capacity(levels);
    for l in 0..levels {
        w_correction.push(if l == 0 {
            w_prime[0]
        } else {
            w_prime[l - 1] + w_prime[l]
        });
    }
    let total_mlmc = if levels == 1 {
        w_prime[0] * mlmc_counts[0] as f64
    } else {
        (0..levels - 1)
            .map(|l| w_prime[l] * mlmc_counts[l] as f64)
            .sum()
    };
    let total_mc = w_prime[levels - 1] * mc_samples as f64;
    Ok(WorkReport {
        w_prime,
        w_correction,
        mlmc_counts: mlmc_counts.to_vec(),
        mc_samples,
        total_mc,
        total_mlmc,
        gamma_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;
    use crate::random_field::{build_kl, DumpingFactor, ModeInnerProduct};

    fn test_problem(levels: usize, max_modes: usize) -> Problem {
        let hier = build_hierarchy(1, levels, 2, 1.0, 0.4, 2).unwrap();
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            max_modes,
            ModeInnerProduct::Euclidean,
            1.0,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let stim = Stimulus {
            amplitude: 4.0,
            baseline: 1.0,
            center: [0.3, 0.0, 0.0],
            width: 0.25,
            t1: f64::INFINITY,
        };
        Problem::new(hier, kl, IonModel::linear(), stim, SolverOptions::default()).unwrap()
    }

    #[test]
    fn sample_count_rule_matches_the_dyadic_ratio() {
        assert_eq!(
            sample_counts(3, 4096, 16.0).unwrap(),
            vec![4096, 256, 16, 1]
        );
        assert_eq!(sample_counts(0, 100, 16.0).unwrap(), vec![100]);
        // Balance: halving h forces N_{l+1}/N_l = 2⁻⁴.
        let counts = sample_counts(2, 1 << 12, 16.0).unwrap();
        for pair in counts.windows(2) {
            assert_eq!(pair[0], 16 * pair[1]);
        }
        assert!(sample_counts(1, 0, 16.0).is_err());
        assert!(sample_counts(1, 8, 1.0).is_err());
    }

    #[test]
    fn constant_fields_have_closed_form_norms() {
        // ‖c‖ = c·sqrt(T·|D|): c = 2, T = 0.64, |D| = 1 → 1.6.
        let hier = build_hierarchy(1, 0, 31, 1.0, 0.64, 4).unwrap();
        let mass = fem::assemble_mass(&hier.level(0).mesh);
        let field = SpaceTimeField::from_values(0, 32, 4, vec![2.0; 32 * 4]);
        let norm = bochner_norm(&field, &mass, hier.level(0).time.dt);
        assert!((norm - 1.6).abs() < 1e-12, "norm {norm}");
    }

    #[test]
    fn norm_matches_a_dense_quadrature_oracle() {
        // n = 5, m = 4: compare against Simpson integration of the squared
        // P1 interpolant over each cell and step.
        let hier = build_hierarchy(1, 0, 4, 1.0, 0.4, 4).unwrap();
        let mesh = &hier.level(0).mesh;
        let dt = hier.level(0).time.dt;
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64) * 0.3 - 1.0).collect();
        let field = SpaceTimeField::from_values(0, 5, 4, vals.clone());
        let mut acc = 0.0;
        for k in 0..4 {
            let block = field.block(k);
            for e in 0..mesh.n_elements() {
                let (i0, i1) = (mesh.element(e)[0], mesh.element(e)[1]);
                let (a, b) = (mesh.node(i0)[0], mesh.node(i1)[0]);
                let f = |x: f64| {
                    let lam = (x - a) / (b - a);
                    let v = (1.0 - lam) * block[i0] + lam * block[i1];
                    v * v
                };
                let mid = 0.5 * (a + b);
                acc += dt * (b - a) / 6.0 * (f(a) + 4.0 * f(mid) + f(b));
            }
        }
        let mass = fem::assemble_mass(mesh);
        let norm = bochner_norm(&field, &mass, dt);
        assert!((norm - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn h1_variant_adds_the_gradient_seminorm() {
        let hier = build_hierarchy(1, 0, 4, 1.0, 0.4, 2).unwrap();
        let mesh = &hier.level(0).mesh;
        let mass = fem::assemble_mass(mesh);
        let stiff = fem::assemble_stiffness(mesh, &[1.0; 5]);
        let dt = hier.level(0).time.dt;
        // A constant has zero seminorm: both norms coincide.
        let flat = SpaceTimeField::from_values(0, 5, 2, vec![3.0; 10]);
        let l2 = bochner_norm(&flat, &mass, dt);
        let h1 = bochner_norm_h1(&flat, &mass, &stiff, dt);
        assert!((l2 - h1).abs() < 1e-12);
        // A sloped field gains energy.
        let vals: Vec<f64> = (0..10).map(|i| (i % 5) as f64).collect();
        let sloped = SpaceTimeField::from_values(0, 5, 2, vals);
        assert!(bochner_norm_h1(&sloped, &mass, &stiff, dt) > bochner_norm(&sloped, &mass, dt));
    }

    #[test]
    fn rmse_is_absolutely_homogeneous_and_zero_at_the_reference() {
        let hier = build_hierarchy(1, 0, 4, 1.0, 0.4, 2).unwrap();
        let mass = fem::assemble_mass(&hier.level(0).mesh);
        let dt = hier.level(0).time.dt;
        let reference =
            SpaceTimeField::from_values(0, 5, 2, (0..10).map(|i| i as f64 * 0.1).collect());
        assert_eq!(
            rmse(std::slice::from_ref(&reference), &reference, &mass, dt).unwrap(),
            0.0
        );
        let e: Vec<f64> = (0..10).map(|i| ((i as f64) * 0.7).sin()).collect();
        let a = 3.7f64;
        let one = SpaceTimeField::from_values(
            0,
            5,
            2,
            reference
                .values
                .iter()
                .zip(&e)
                .map(|(r, v)| r + v)
                .collect(),
        );
        let scaled = SpaceTimeField::from_values(
            0,
            5,
            2,
            reference
                .values
                .iter()
                .zip(&e)
                .map(|(r, v)| r + a * v)
                .collect(),
        );
        let r1 = rmse(&[one], &reference, &mass, dt).unwrap();
        let r2 = rmse(&[scaled], &reference, &mass, dt).unwrap();
        assert!((r2 - a * r1).abs() < 1e-14 * r2.max(1.0));
    }

    #[test]
    fn work_models_reproduce_the_closed_forms_exactly() {
        for big_l in 1..=6u32 {
            let counts = sample_counts(big_l as usize, 1u64 << (4 * big_l), 16.0).unwrap();
            let n_mc = 1u64 << (4 * big_l);
            // γ_d = 4 (3D): W_MLMC = L·2^{4L}, exactly.
            let cube = model_work(4.0, &counts, n_mc).unwrap();
            assert_eq!(
                cube.total_mlmc,
                (big_l as f64) * (4.0 * big_l as f64).exp2()
            );
            assert_eq!(
                cube.total_mc,
                (4.0 * big_l as f64).exp2() * (4.0 * big_l as f64).exp2()
            );
            // γ_d = 2 (1D): W_MLMC = (2^{4L} − 2^{2L})/(1 − 2^{−2}), exactly.
            let line = model_work(2.0, &counts, n_mc).unwrap();
            let expect = ((4.0 * big_l as f64).exp2() - (2.0 * big_l as f64).exp2())
                / (1.0 - (-2.0f64).exp2());
            assert_eq!(line.total_mlmc, expect);
        }
    }

    #[test]
    fn single_level_work_degenerates_to_plain_mc() {
        let report = measured_work(&[0.25], &[40], 40).unwrap();
        assert_eq!(report.total_mlmc, 0.25 * 40.0);
        assert_eq!(report.total_mlmc, report.total_mc);
        let model = model_work(2.0, &[40], 40).unwrap();
        assert_eq!(model.total_mlmc, model.total_mc);
    }

    #[test]
    fn measured_growth_rate_recovers_the_dyadic_exponent() {
        let report = measured_work(&[1.0, 4.0, 16.0], &[256, 16, 1], 256).unwrap();
        assert!((report.gamma_d - 2.0).abs() < 1e-12);
        assert_eq!(report.w_correction, vec![1.0, 5.0, 20.0]);
        assert_eq!(report.total_mlmc, 256.0 + 80.0 + 20.0);
        assert_eq!(report.total_mc, 16.0 * 256.0);
        assert!(measured_work(&[1.0, 0.0], &[4, 1], 4).is_err());
        assert!(measured_work(&[2.0, 1.0], &[4, 1], 4).is_err());
    }

    #[test]
    fn zero_stochastic_dimension_collapses_to_the_deterministic_solution() {
        let problem = test_problem(1, 0);
        assert_eq!(problem.kl.n_modes(), 0);
        let controls = RunControls::new(7);
        let out = mc_estimate(&problem, 1, 3, &controls).unwrap();
        let (det, _) = problem.solve_sample(1, &[]).unwrap();
        let gap = out
            .mean_field
            .values
            .iter()
            .zip(&det.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-13);
        let scale = det.norm_inf();
        assert!(out.variance_field.norm_inf() <= 1e-20 * scale.max(1.0) * scale.max(1.0));
    }

    #[test]
    fn one_sample_mean_is_that_sample() {
        let problem = test_problem(1, 8);
        let controls = RunControls::new(99);
        let out = mc_estimate(&problem, 1, 1, &controls).unwrap();
        let y = draw_sample(99, 1, 0, problem.kl.n_modes());
        let (direct, _) = problem.solve_sample(1, &y).unwrap();
        assert_eq!(out.mean_field.values, direct.values);
        assert!(out.variance_field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_term_telescope_equals_plain_mc() {
        let problem = test_problem(1, 8);
        let controls = RunControls::new(1234);
        let mc = mc_estimate(&problem, 0, 6, &controls).unwrap();
        let ml = mlmc_estimate(&problem, 0, &[6], &controls).unwrap();
        assert_eq!(mc.mean_field.values, ml.mean_field.values);
        // The MC pointwise variance is the unbiased two-pass estimator; the
        // telescoped second-moment variance is the biased N-normalized one.
        // They agree after the (N−1)/N correction, up to the cancellation
        // error of the plug-in form (absolute scale mean², not variance).
        let n = 6.0f64;
        for i in 0..mc.variance_field.values.len() {
            let a = mc.variance_field.values[i];
            let b = ml.variance_field.values[i];
            let m = mc.mean_field.values[i];
            let tol = 1e-12 * (b.abs() + m * m + 1e-30);
            assert!(
                (a * (n - 1.0) / n - b).abs() <= tol,
                "variance mismatch at {i}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn shared_sample_telescope_cancels_to_the_fine_mc_mean() {
        let problem = test_problem(2, 8);
        let controls = RunControls::new(42);
        let shared = mlmc_estimate_shared(&problem, 2, 8, &controls).unwrap();
        let mc = mc_estimate(&problem, 2, 8, &controls).unwrap();
        let scale = mc.mean_field.norm_inf().max(1.0);
        let gap = shared
            .values
            .iter()
            .zip(&mc.mean_field.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-12 * scale, "telescope gap {gap}");
    }

    #[test]
    fn estimates_are_bitwise_invariant_to_workers_and_pools() {
        let problem = test_problem(1, 8);
        let a = mlmc_estimate(
            &problem,
            1,
            &[5, 2],
            &RunControls {
                master_seed: 31,
                workers: 1,
                pools: vec![1, 1],
            },
        )
        .unwrap();
        let b = mlmc_estimate(
            &problem,
            1,
            &[5, 2],
            &RunControls {
                master_seed: 31,
                workers: 4,
                pools: vec![3, 2],
            },
        )
        .unwrap();
        assert_eq!(a.mean_field.values, b.mean_field.values);
        assert_eq!(a.variance_field.values, b.variance_field.values);
        for (x, y) in a.per_level.iter().zip(&b.per_level) {
            assert_eq!(x.level, y.level);
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.mean_correction_norm, y.mean_correction_norm);
            assert_eq!(x.correction_norm_variance, y.correction_norm_variance);
        }
    }

    #[test]
    fn telescoped_estimator_is_unbiased_against_fine_mc() {
        // Grand means of a linear functional agree within 3 combined
        // standard errors over 200 paired repetitions.
        let problem = test_problem(1, 8);
        let functional = |field: &SpaceTimeField| -> f64 {
            let mass = problem.mass(field.level);
            let dt = problem.dt(field.level);
            let ones = vec![1.0; field.n];
            let mut mv = vec![0.0; field.n];
            mass.matvec(&ones, &mut mv);
            (0..field.m)
                .map(|k| dt * crate::sparse::dot(field.block(k), &mv))
                .sum()
        };
        let reps = 200;
        let mut ml_vals = Vec::with_capacity(reps);
        let mut mc_vals = Vec::with_capacity(reps);
        for r in 0..reps {
            let controls = RunControls::new(1000 + r as u64);
            let ml = mlmc_estimate(&problem, 1, &[4, 1], &controls).unwrap();
            ml_vals.push(functional(&ml.mean_field));
            let mc = mc_estimate(&problem, 1, 1, &controls).unwrap();
            mc_vals.push(functional(&mc.mean_field));
        }
        let (ml_mean, ml_var) = scalar_stats(&ml_vals);
        let (mc_mean, mc_var) = scalar_stats(&mc_vals);
        let se = ((ml_var + mc_var) / reps as f64).sqrt();
        assert!(
            (ml_mean - mc_mean).abs() <= 3.0 * se,
            "grand means {ml_mean} vs {mc_mean}, 3se = {}",
            3.0 * se
        );
    }

    #[test]
    fn correction_variance_decays_with_level() {
        // Low diffusion so the solution keeps spatial structure: with a
        // domain-filling diffusion length every sample flattens towards the
        // (conserved) mean state and the level-0 variance degenerates.
        let hier = build_hierarchy(1, 2, 8, 1.0, 0.64, 2).unwrap();
        let kl = build_kl(
            &hier,
            0.25,
            1e-2,
            12,
            ModeInnerProduct::Euclidean,
            3.325e-3,
            0.5,
            DumpingFactor::Auto,
        )
        .unwrap();
        let stim = Stimulus {
            amplitude: 5.0,
            baseline: 0.0,
            center: [0.3, 0.0, 0.0],
            width: 0.15,
            t1: f64::INFINITY,
        };
        let problem =
            Problem::new(hier, kl, IonModel::linear(), stim, SolverOptions::default()).unwrap();
        let mut sums = [0.0f64; 3];
        let reps = 20;
        for r in 0..reps {
            let controls = RunControls::new(5000 + r as u64);
            let out = mlmc_estimate(&problem, 2, &[8, 8, 8], &controls).unwrap();
            for l in 0..3 {
                sums[l] += out.per_level[l].correction_norm_variance;
            }
        }
        assert!(
            sums[0] > sums[1] && sums[1] > sums[2],
            "correction variances must fall: {sums:?}"
        );
    }

    #[test]
    fn reference_mean_streams_deterministically() {
        let problem = test_problem(1, 8);
        let a = reference_mean(&problem, 1, 70, 11, 1).unwrap();
        let b = reference_mean(&problem, 1, 70, 11, 4).unwrap();
        assert_eq!(a.values, b.values);
        // The salted stream differs from the estimation stream.
        let est = mc_estimate(&problem, 1, 70, &RunControls::new(11)).unwrap();
        let gap = a
            .values
            .iter()
            .zip(&est.mean_field.values)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(gap > 0.0, "independent streams should differ");
    }

    #[test]
    fn failures_carry_level_and_index() {
        let problem = test_problem(1, 8);
        // An out-of-range level is rejected before any solve.
        assert!(mc_estimate(&problem, 5, 2, &RunControls::new(0)).is_err());
        // Mismatched counts are rejected.
        assert!(mlmc_estimate(&problem, 1, &[4], &RunControls::new(0)).is_err());
        // A forced solve failure names the true level and sample index.
        let mut broken = test_problem(1, 8);
        broken.solver.max_newton = 0;
        let err = mc_estimate(&broken, 1, 3, &RunControls::new(0)).unwrap_err();
        match err {
            Error::ExecutionAborted { failures } => {
                assert!(!failures.is_empty());
                match &failures[0] {
                    Error::SampleFailed { level, index, .. } => {
                        assert_eq!(*level, 1);
                        assert_eq!(*index, 0);
                    }
                    other => panic!("expected sample provenance, got {other}"),
                }
            }
            other => panic!("expected aborted execution, got {other}"),
        }
    }
}
