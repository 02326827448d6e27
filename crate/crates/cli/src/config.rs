//! Experiment configuration: a flat, sectioned TOML file whose defaults
//! reproduce the 1D cardiac experiment, plus parse-time validation and the
//! command-line overrides.

use serde::{Deserialize, Serialize};
use std::path::Path;
use stmlmc::estimator::Problem;
use stmlmc::fem::Stimulus;
use stmlmc::krylov::GmresOptions;
use stmlmc::mesh::build_hierarchy;
use stmlmc::random_field::{build_kl, DumpingFactor, ModeInnerProduct};
use stmlmc::solve::SolverOptions;
use stmlmc::system::IonModel;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Spatial dimension (1, 2 or 3).
    pub dim: usize,
    /// Edge length of the axis-aligned domain [0, extent]^dim in cm.
    pub extent: f64,
    /// Cells per axis on the coarsest level.
    pub base_cells: usize,
    /// Finest level index L of the hierarchy (levels 0..=L).
    pub levels: usize,
    /// End time in ms.
    pub t_final: f64,
    /// Time steps on the coarsest level.
    pub base_steps: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            dim: 1,
            extent: 1.0,
            base_cells: 31,
            levels: 3,
            t_final: 0.64,
            base_steps: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlConfig {
    /// Kernel width in exp(-d²/width) (used verbatim, not squared).
    pub sigma: f64,
    /// Relative trace tolerance of the pivoted Cholesky truncation.
    pub tolerance: f64,
    /// Hard cap on the number of retained modes.
    pub max_modes: usize,
    /// Mean diffusion G0 in cm²·mV/ms.
    pub g0: f64,
    /// Ellipticity margin: |perturbation| ≤ delta·G0.
    pub delta: f64,
    /// Dumping factor: "auto" saturates the ellipticity bound, a number is
    /// validated against it.
    pub s: DumpingSpec,
    /// "euclidean" or "mass" inner product for the KL modes.
    pub inner_product: String,
}

impl Default for KlConfig {
    fn default() -> Self {
        KlConfig {
            sigma: 0.25,
            tolerance: 1e-2,
            max_modes: 200,
            g0: 3.325e-3,
            delta: 0.5,
            s: DumpingSpec::Auto("auto".into()),
            inner_product: "euclidean".into(),
        }
    }
}

/// Dumping factor: the literal string "auto" or a positive number.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DumpingSpec {
    Fixed(f64),
    Auto(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonConfig {
    /// Cubic reaction rate in mV⁻²·ms⁻¹; zero selects the linear equation.
    pub alpha: f64,
    pub u_rest: f64,
    pub u_th: f64,
    pub u_peak: f64,
}

impl Default for IonConfig {
    fn default() -> Self {
        IonConfig {
            alpha: 1.4e-3,
            u_rest: 0.0,
            u_th: 28.0,
            u_peak: 115.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusConfig {
    /// Peak applied current in mV/ms.
    pub amplitude: f64,
    /// Spatially uniform offset added to the bump.
    pub baseline: f64,
    /// Bump centre (components beyond `dim` are ignored).
    pub x0: [f64; 3],
    /// Bump width σ in exp(-|x-x0|²/σ²), in cm.
    pub width: f64,
    /// The stimulus is applied for t in [0, t1) ms; `t1 = inf` keeps it on.
    pub t1: f64,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        StimulusConfig {
            amplitude: 115.0,
            baseline: 0.0,
            x0: [0.0, 0.0, 0.0],
            width: 0.5,
            t1: 0.005,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// "mc" or "mlmc".
    pub kind: String,
    /// Target level (MC) or fine level L (MLMC). Defaults to the finest.
    pub level: Option<usize>,
    /// N for MC; N_coarse for MLMC.
    pub samples: u64,
    /// Per-level sample ratio β (MLMC).
    pub beta: f64,
    /// Repetitions K for convergence studies.
    pub repetitions: usize,
    pub master_seed: u64,
    /// Samples of the independent reference mean.
    pub reference_samples: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kind: "mlmc".into(),
            level: None,
            samples: 4096,
            beta: 16.0,
            repetitions: 1,
            master_seed: 7777,
            reference_samples: 16384,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub gmres_restart: usize,
    pub gmres_rel_tol: f64,
    pub gmres_abs_tol: f64,
    pub gmres_max_iterations: usize,
    pub ilu_chunks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let opts = SolverOptions::default();
        SolverConfig {
            newton_tol: opts.newton_tol,
            max_newton: opts.max_newton,
            max_halvings: opts.max_halvings,
            gmres_restart: opts.gmres.restart,
            gmres_rel_tol: opts.gmres.rel_tol,
            gmres_abs_tol: opts.gmres.abs_tol,
            gmres_max_iterations: opts.gmres.max_iterations,
            ilu_chunks: opts.ilu_chunks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Worker threads (0 = one per pool slot).
    pub workers: usize,
    /// Per-level pool sizes; empty derives one batch per level.
    pub pools: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// 1-based time steps to dump as VTK; empty selects the final step.
    pub vtk_steps: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            vtk_steps: Vec::new(),
        }
    }
}

/// The full experiment description; defaults reproduce the 1D hierarchy
/// with the cardiac FitzHugh–Nagumo parameters.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub kl: KlConfig,
    pub ion: IonConfig,
    pub stimulus: StimulusConfig,
    pub estimator: EstimatorConfig,
    pub solver: SolverConfig,
    pub scheduler: SchedulerConfig,
    pub output: OutputConfig,
}

/// Command-line overrides applied on top of the file (or default) config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub samples: Option<u64>,
    pub pool_spec: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, over: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = over.seed {
            self.estimator.master_seed = seed;
        }
        if let Some(levels) = over.levels {
            self.geometry.levels = levels;
        }
        if let Some(samples) = over.samples {
            self.estimator.samples = samples;
        }
        if let Some(workers) = over.workers {
            self.scheduler.workers = workers;
        }
        if let Some(dir) = &over.out {
            self.output.dir = dir.clone();
        }
        if let Some(spec) = &over.pool_spec {
            self.scheduler.pools = spec
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| {
                        CliError::Config(format!("--pool-spec: '{tok}' is not a positive integer"))
                    })
                })
                .collect::<Result<Vec<usize>, CliError>>()?;
        }
        Ok(())
    }

    /// Parse-time validation of every bound the library modules demand.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        let g = &self.geometry;
        if !(1..=3).contains(&g.dim) {
            errors.push(format!("geometry.dim: must be 1, 2 or 3 (got {})", g.dim));
        }
        if g.extent <= 0.0 || !g.extent.is_finite() {
            errors.push(format!(
                "geometry.extent: must be positive (got {})",
                g.extent
            ));
        }
        if g.base_cells == 0 {
            errors.push("geometry.base_cells: must be at least 1".into());
        }
        if g.levels > 12 {
            errors.push(format!(
                "geometry.levels: {} levels exceed the supported range of 12",
                g.levels
            ));
        }
        if g.t_final <= 0.0 || !g.t_final.is_finite() {
            errors.push(format!(
                "geometry.t_final: must be positive (got {})",
                g.t_final
            ));
        }
        if g.base_steps == 0 {
            errors.push("geometry.base_steps: must be at least 1".into());
        }
        let k = &self.kl;
        if k.sigma <= 0.0 || !k.sigma.is_finite() {
            errors.push(format!("kl.sigma: must be positive (got {})", k.sigma));
        }
        if !(k.tolerance > 0.0 && k.tolerance < 1.0) {
            errors.push(format!(
                "kl.tolerance: must lie in (0, 1) (got {})",
                k.tolerance
            ));
        }
        if k.g0 <= 0.0 || !k.g0.is_finite() {
            errors.push(format!("kl.g0: must be positive (got {})", k.g0));
        }
        if !(k.delta > 0.0 && k.delta <= 1.0) {
            errors.push(format!("kl.delta: must lie in (0, 1] (got {})", k.delta));
        }
        match &k.s {
            DumpingSpec::Fixed(s) if !(s.is_finite() && *s > 0.0) => {
                errors.push(format!("kl.s: must be positive or \"auto\" (got {s})"));
            }
            DumpingSpec::Auto(word) if word != "auto" => {
                errors.push(format!(
                    "kl.s: must be a number or \"auto\" (got \"{word}\")"
                ));
            }
            _ => {}
        }
        if !matches!(k.inner_product.as_str(), "euclidean" | "mass") {
            errors.push(format!(
                "kl.inner_product: must be \"euclidean\" or \"mass\" (got \"{}\")",
                k.inner_product
            ));
        }
        let ion = &self.ion;
        if ion.alpha < 0.0 {
            errors.push(format!(
                "ion.alpha: must be nonnegative (got {})",
                ion.alpha
            ));
        }
        if ion.alpha > 0.0 && !(ion.u_rest < ion.u_th && ion.u_th < ion.u_peak) {
            errors.push(format!(
                "ion: potentials must be ordered u_rest < u_th < u_peak (got {}, {}, {})",
                ion.u_rest, ion.u_th, ion.u_peak
            ));
        }
        if self.stimulus.width <= 0.0 {
            errors.push(format!(
                "stimulus.width: must be positive (got {})",
                self.stimulus.width
            ));
        }
        if self.stimulus.t1 < 0.0 {
            errors.push(format!(
                "stimulus.t1: must be nonnegative (got {})",
                self.stimulus.t1
            ));
        }
        let e = &self.estimator;
        if !matches!(e.kind.as_str(), "mc" | "mlmc") {
            errors.push(format!(
                "estimator.kind: must be \"mc\" or \"mlmc\" (got \"{}\")",
                e.kind
            ));
        }
        if e.samples == 0 {
            errors.push("estimator.samples: must be at least 1".into());
        }
        // Negated comparison so a NaN beta is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(e.beta > 1.0) {
            errors.push(format!("estimator.beta: must exceed 1 (got {})", e.beta));
        }
        if e.repetitions == 0 {
            errors.push("estimator.repetitions: must be at least 1".into());
        }
        if e.reference_samples == 0 {
            errors.push("estimator.reference_samples: must be at least 1".into());
        }
        if let Some(level) = e.level {
            if level > g.levels {
                errors.push(format!(
                    "estimator.level: {} exceeds geometry.levels = {}",
                    level, g.levels
                ));
            }
        }
        let s = &self.solver;
        for (name, v) in [
            ("solver.newton_tol", s.newton_tol),
            ("solver.gmres_rel_tol", s.gmres_rel_tol),
            ("solver.gmres_abs_tol", s.gmres_abs_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name}: must be positive (got {v})"));
            }
        }
        if s.gmres_restart == 0 {
            errors.push("solver.gmres_restart: must be at least 1".into());
        }
        if s.ilu_chunks == 0 {
            errors.push("solver.ilu_chunks: must be at least 1".into());
        }
        if self.scheduler.pools.contains(&0) {
            errors.push("scheduler.pools: entries must be positive".into());
        }
        if !self.scheduler.pools.is_empty() && self.scheduler.pools.len() != g.levels + 1 {
            errors.push(format!(
                "scheduler.pools: {} entries for {} levels (need one per level or none)",
                self.scheduler.pools.len(),
                g.levels + 1
            ));
        }
        if self.output.vtk_steps.contains(&0) {
            errors.push("output.vtk_steps: steps are 1-based".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors.join("; ")))
        }
    }

    /// The target level: explicit `estimator.level` or the finest.
    pub fn target_level(&self) -> usize {
        self.estimator.level.unwrap_or(self.geometry.levels)
    }

    pub fn ion_model(&self) -> Result<IonModel, CliError> {
        if self.ion.alpha == 0.0 {
            Ok(IonModel::linear())
        } else {
            IonModel::cubic(
                self.ion.alpha,
                self.ion.u_rest,
                self.ion.u_th,
                self.ion.u_peak,
            )
            .map_err(|e| CliError::Config(format!("ion: {e}")))
        }
    }

    pub fn stimulus(&self) -> Stimulus {
        Stimulus {
            amplitude: self.stimulus.amplitude,
            baseline: self.stimulus.baseline,
            center: self.stimulus.x0,
            width: self.stimulus.width,
            t1: self.stimulus.t1,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            newton_tol: self.solver.newton_tol,
            max_newton: self.solver.max_newton,
            max_halvings: self.solver.max_halvings,
            gmres: GmresOptions {
                restart: self.solver.gmres_restart,
                rel_tol: self.solver.gmres_rel_tol,
                abs_tol: self.solver.gmres_abs_tol,
                max_iterations: self.solver.gmres_max_iterations,
            },
            ilu_chunks: self.solver.ilu_chunks,
        }
    }

    pub fn dumping(&self) -> DumpingFactor {
        match &self.kl.s {
            DumpingSpec::Fixed(s) => DumpingFactor::Fixed(*s),
            DumpingSpec::Auto(_) => DumpingFactor::Auto,
        }
    }

    pub fn inner_product(&self) -> ModeInnerProduct {
        match self.kl.inner_product.as_str() {
            "mass" => ModeInnerProduct::MassWeighted,
            _ => ModeInnerProduct::Euclidean,
        }
    }

    /// Build the full sampling problem (hierarchy, KL, warm starts).
    /// Construction failures are configuration errors by definition.
    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let g = &self.geometry;
        let hierarchy = build_hierarchy(
            g.dim,
            g.levels,
            g.base_cells,
            g.extent,
            g.t_final,
            g.base_steps,
        )
        .map_err(|e| CliError::Config(format!("geometry: {e}")))?;
        let kl = build_kl(
            &hierarchy,
            self.kl.sigma,
            self.kl.tolerance,
            self.kl.max_modes,
            self.inner_product(),
            self.kl.g0,
            self.kl.delta,
            self.dumping(),
        )
        .map_err(|e| CliError::Config(format!("kl: {e}")))?;
        let ion = self.ion_model()?;
        Problem::new(hierarchy, kl, ion, self.stimulus(), self.solver_options())
            .map_err(CliError::Run)
    }

    /// Resolved-config echo for artifact preambles: the TOML rendering of
    /// this config, one `# `-prefixed line each. Execution-environment
    /// settings (worker count, pool split, output directory) are omitted:
    /// they do not influence any computed value, and keeping them out lets
    /// runs that differ only in those settings produce byte-identical
    /// tables.
    pub fn preamble(&self) -> String {
        let mut value = toml::Value::try_from(self).unwrap_or(toml::Value::Boolean(false));
        if let Some(table) = value.as_table_mut() {
            table.remove("scheduler");
            if let Some(output) = table.get_mut("output").and_then(|v| v.as_table_mut()) {
                output.remove("dir");
                if output.is_empty() {
                    table.remove("output");
                }
            }
        }
        let rendered = toml::to_string(&value).unwrap_or_default();
        let mut out = String::new();
        for line in rendered.lines() {
            if line.is_empty() {
                continue;
            }
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
