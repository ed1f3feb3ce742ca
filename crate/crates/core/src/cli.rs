//! Configuration-driven commands: `run`, `verify` and `study`.
//!
//! A configuration is a TOML document:
//!
//! ```toml
//! seed = 0
//!
//! [mesh]
//! domain = [[0.0, 1.0], [0.0, 1.0]]
//! counts = [16, 16]            # or coords = [[...], [...]]
//!
//! [time]
//! t_final = 0.5
//! dt = 0.03125
//!
//! [problem]
//! preset = "rotating-patch"    # trivial | taylor-green | rotating-patch | unsteady
//!
//! [solver]
//! strategy = "direct"          # or "iterative"
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "vtk"]     # also "mesh" and "matrices"
//! cadence = 4
//! ```
//!
//! Every written file goes through a temporary sibling and a rename. CSV
//! files carry the SHA-256 of the configuration text and the seed, and no
//! wall-clock data, so equal inputs give byte-identical outputs.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::MacMesh;
use crate::io::{atomic_write, write_mesh_tables, write_scalar_csv, write_table, write_velocity_csv, write_vtk, Header};
use crate::linsolve::{transport_matrix, SaddleSystem, SolverOptions, Strategy};
use crate::presets::{Preset, Problem, Swirl};
use crate::timestepper::{run, sample_forcing, SchemeConfig};
use crate::verify::{
    check_adjointness, check_coercivity, check_duality, convergence_study, measure_translates, StepDiagnostics,
    StudyOptions, Thresholds, TimestepPolicy, ConvergenceReport,
};

pub const IDENTITY_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub domain: Vec<[f64; 2]>,
    pub counts: Option<Vec<usize>>,
    pub coords: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: Preset,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    /// Overrides for the swirl presets.
    pub swirl: Option<SwirlConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwirlConfig {
    pub radius: Option<f64>,
    pub speed: Option<f64>,
    pub modulation: Option<f64>,
    pub patch_center: Option<[f64; 2]>,
    pub patch_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub strategy: Strategy,
    pub transport_tol: f64,
    pub oseen_tol: f64,
    pub divergence_tol: f64,
    pub check_preconditions: bool,
    pub gmres_restart: usize,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            strategy: o.strategy,
            transport_tol: o.transport_tol,
            oseen_tol: o.oseen_tol,
            divergence_tol: o.divergence_tol,
            check_preconditions: o.check_preconditions,
            gmres_restart: o.gmres_restart,
            max_iterations: o.max_iterations,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            strategy: self.strategy,
            transport_tol: self.transport_tol,
            oseen_tol: self.oseen_tol,
            divergence_tol: self.divergence_tol,
            check_preconditions: self.check_preconditions,
            gmres_restart: self.gmres_restart,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Per-field CSV snapshots.
    Csv,
    /// Legacy VTK snapshots plus a `.vtk.series` index.
    Vtk,
    /// Face and dual-face tables.
    Mesh,
    /// Assembled systems of the first step in coordinate format.
    Matrices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    /// Snapshot every `cadence` steps; the final state is always written.
    pub cadence: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("output"),
            formats: vec![Format::Csv],
            cadence: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub trials: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { trials: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Defaults to `problem.preset`.
    pub preset: Option<Preset>,
    pub levels: Vec<usize>,
    /// `δt = dt_factor · h`.
    pub dt_factor: f64,
    pub t_final: f64,
    pub min_factor: f64,
    /// Largest accepted relative change of the energy norms between the two
    /// finest levels.
    pub max_energy_spread: f64,
    pub translates: TranslateConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            preset: None,
            levels: vec![16, 32, 64],
            dt_factor: 0.5,
            t_final: 0.5,
            min_factor: 1.5,
            max_energy_spread: 0.2,
            translates: TranslateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslateConfig {
    pub enabled: bool,
    pub preset: Preset,
    pub cells: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Shifts in multiples of `dt`.
    pub shifts: Vec<usize>,
    pub min_slope: f64,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            preset: Preset::Unsteady,
            cells: 32,
            dt: 1.0 / 64.0,
            t_final: 1.0,
            shifts: vec![1, 2, 4, 8],
            min_slope: 0.4,
        }
    }
}

impl RunConfig {
    /// Parses TOML, reporting the key path of the offending entry.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner().message().trim()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::parse(&text)?;
        Ok((config, text))
    }

    pub fn dim(&self) -> usize {
        self.mesh.domain.len()
    }

    /// Checks the schema constraints that types cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("at `{key}`: {msg}")));
        let dim = self.dim();
        if dim != 2 && dim != 3 {
            return bad("mesh.domain", format!("expected 2 or 3 intervals, got {dim}"));
        }
        for (a, [lo, hi]) in self.mesh.domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(&format!("mesh.domain[{a}]"), format!("empty interval [{lo}, {hi}]"));
            }
        }
        match (&self.mesh.counts, &self.mesh.coords) {
            (Some(c), None) => {
                if c.len() != dim {
                    return bad("mesh.counts", format!("expected {dim} entries, got {}", c.len()));
                }
                if let Some(a) = c.iter().position(|&n| n == 0) {
                    return bad(&format!("mesh.counts[{a}]"), "must be positive".into());
                }
            }
            (None, Some(c)) => {
                if c.len() != dim {
                    return bad("mesh.coords", format!("expected {dim} lists, got {}", c.len()));
                }
            }
            _ => return bad("mesh", "exactly one of `counts` and `coords` is required".into()),
        }
        let t = &self.time;
        if !(t.t_final > 0.0 && t.t_final.is_finite()) {
            return bad("time.t_final", format!("must be positive, got {}", t.t_final));
        }
        if !(t.dt > 0.0 && t.dt <= t.t_final) {
            return bad("time.dt", format!("must satisfy 0 < dt <= t_final = {}, got {}", t.t_final, t.dt));
        }
        if let (Some(lo), Some(hi)) = (self.problem.rho_min, self.problem.rho_max) {
            if !(lo > 0.0 && lo <= hi) {
                return bad("problem", format!("need 0 < rho_min <= rho_max, got [{lo}, {hi}]"));
            }
        }
        if self.problem.swirl.is_some() && !matches!(self.problem.preset, Preset::RotatingPatch | Preset::Unsteady) {
            return bad("problem.swirl", "only valid with the rotating-patch and unsteady presets".into());
        }
        if self.problem.preset != Preset::Trivial && self.mesh.domain.iter().any(|&[lo, hi]| lo != 0.0 || hi != 1.0) {
            return bad("mesh.domain", format!("preset `{}` is defined on the unit box", self.problem.preset.name()));
        }
        let s = &self.solver;
        for (key, v) in [
            ("solver.transport_tol", s.transport_tol),
            ("solver.oseen_tol", s.oseen_tol),
            ("solver.divergence_tol", s.divergence_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(key, format!("must lie in (0, 1), got {v}"));
            }
        }
        if s.gmres_restart == 0 || s.max_iterations == 0 {
            return bad("solver", "gmres_restart and max_iterations must be positive".into());
        }
        if self.output.cadence == 0 {
            return bad("output.cadence", "must be positive".into());
        }
        if self.verify.trials == 0 {
            return bad("verify.trials", "must be positive".into());
        }
        let st = &self.study;
        if st.levels.len() < 3 || st.levels.windows(2).any(|w| w[1] <= w[0]) || st.levels[0] == 0 {
            return bad("study.levels", format!("need at least 3 strictly increasing sizes, got {:?}", st.levels));
        }
        if !(st.dt_factor > 0.0 && st.t_final > 0.0 && st.min_factor > 0.0 && st.max_energy_spread > 0.0) {
            return bad("study", "dt_factor, t_final, min_factor and max_energy_spread must be positive".into());
        }
        let tr = &st.translates;
        if !(tr.dt > 0.0 && tr.dt <= tr.t_final && tr.cells > 0) {
            return bad("study.translates", "need cells > 0 and 0 < dt <= t_final".into());
        }
        if tr.shifts.iter().filter(|&&m| m > 0).count() < 3 {
            return bad("study.translates.shifts", "need at least 3 positive shifts".into());
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<MacMesh> {
        let domain: Vec<(f64, f64)> = self.mesh.domain.iter().map(|&[a, b]| (a, b)).collect();
        match (&self.mesh.counts, &self.mesh.coords) {
            (Some(c), _) => MacMesh::uniform(&domain, c),
            (_, Some(c)) => MacMesh::new(&domain, c),
            _ => unreachable!("validated"),
        }
    }

    pub fn build_problem(&self) -> Result<Arc<dyn Problem>> {
        let dim = self.dim();
        let Some(o) = &self.problem.swirl else {
            return self.problem.preset.build(dim);
        };
        let mut s = match self.problem.preset {
            Preset::Unsteady => Swirl::unsteady(dim),
            _ => Swirl::rotating_patch(dim),
        };
        s.radius = o.radius.unwrap_or(s.radius);
        s.speed = o.speed.unwrap_or(s.speed);
        s.modulation = o.modulation.unwrap_or(s.modulation);
        s.patch_center = o.patch_center.unwrap_or(s.patch_center);
        s.patch_radius = o.patch_radius.unwrap_or(s.patch_radius);
        Ok(Arc::new(s))
    }

    pub fn scheme(&self, mesh: Arc<MacMesh>) -> Result<SchemeConfig> {
        let mut c = SchemeConfig::from_problem(mesh, self.build_problem()?, self.time.t_final, self.time.dt);
        c.rho_min = self.problem.rho_min.unwrap_or(c.rho_min);
        c.rho_max = self.problem.rho_max.unwrap_or(c.rho_max);
        c.solver = self.solver.options();
        Ok(c)
    }
}

/// One PASS/FAIL line of a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{s} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    fn write_summary(&self, header: &Header) -> Result<()> {
        atomic_write(&self.out_dir.join("summary.txt"), |w| {
            header.write(w)?;
            for n in &self.notes {
                writeln!(w, "# {n}")?;
            }
            for c in &self.checks {
                writeln!(w, "{c}")?;
            }
            let verdict = if self.passed() { "PASS" } else { "FAIL" };
            writeln!(w, "{verdict} overall")
        })
    }
}

/// Options shared by the three commands.
#[derive(Debug, Clone, Default)]
pub struct CommandOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
}

struct Loaded {
    config: RunConfig,
    header: Header,
    out_dir: PathBuf,
    seed: u64,
}

fn load(opts: &CommandOptions) -> Result<Loaded> {
    let (config, text) = RunConfig::load(&opts.config)?;
    let seed = opts.seed.unwrap_or(config.seed);
    let header = Header {
        config_sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
        seed: Some(seed),
    };
    let out_dir = opts.out.clone().unwrap_or_else(|| config.output.directory.clone());
    Ok(Loaded {
        config,
        header,
        out_dir,
        seed,
    })
}

fn fmt_e(v: f64) -> String {
    format!("{v:.3e}")
}

/// Runs the scheme and writes `diagnostics.csv`, snapshots and `summary.txt`.
pub fn cmd_run(opts: &CommandOptions) -> Result<Outcome> {
    let Loaded {
        config, header, out_dir, ..
    } = load(opts)?;
    let mesh = Arc::new(config.build_mesh()?);
    let scheme = config.scheme(mesh.clone())?;
    let out = run(&scheme)?;
    let th = Thresholds::from_solver(&scheme.solver);
    let diag = &out.diagnostics;
    let mut outcome = Outcome {
        out_dir: out_dir.clone(),
        ..Default::default()
    };
    outcome.notes.push(format!(
        "preset {}, {} cells, {} steps of dt = {:e}",
        config.problem.preset.name(),
        mesh.n_cells(),
        out.steps,
        out.dt
    ));
    if out.dt_adjusted() {
        outcome
            .notes
            .push(format!("dt reduced from {:e} so that it divides t_final", out.requested_dt));
    }

    let rows: Vec<Vec<String>> = diag.steps.iter().map(|s| s.row(&th)).collect();
    atomic_write(&out_dir.join("diagnostics.csv"), |w| {
        write_table(w, &header, &StepDiagnostics::COLUMNS, &rows)
    })?;

    let traj = &out.trajectory;
    let cadence = config.output.cadence;
    let last = traj.len() - 1;
    let snapshots: Vec<usize> = (0..traj.len()).filter(|&k| k % cadence == 0 || k == last).collect();
    let formats = &config.output.formats;
    if formats.contains(&Format::Csv) {
        for &k in &snapshots {
            let dir = out_dir.join("fields");
            atomic_write(&dir.join(format!("density_{k:06}.csv")), |w| {
                write_scalar_csv(w, &header, &traj.density[k])
            })?;
            atomic_write(&dir.join(format!("velocity_{k:06}.csv")), |w| {
                write_velocity_csv(w, &header, &traj.velocity[k])
            })?;
            atomic_write(&dir.join(format!("pressure_{k:06}.csv")), |w| {
                write_scalar_csv(w, &header, &traj.pressure[k])
            })?;
        }
    }
    if formats.contains(&Format::Vtk) {
        let dir = out_dir.join("vtk");
        let mut index = Vec::new();
        for &k in &snapshots {
            let name = format!("state_{k:06}.vtk");
            let title = format!("n = {k}, t = {:e}", traj.times[k]);
            atomic_write(&dir.join(&name), |w| {
                write_vtk(w, &mesh, &title, &traj.density[k], &traj.velocity[k], &traj.pressure[k])
            })?;
            index.push(format!("    {{ \"name\": \"{name}\", \"time\": {:e} }}", traj.times[k]));
        }
        atomic_write(&dir.join("state.vtk.series"), |w| {
            writeln!(w, "{{\n  \"file-series-version\": \"1.0\",\n  \"files\": [")?;
            writeln!(w, "{}", index.join(",\n"))?;
            writeln!(w, "  ]\n}}")
        })?;
    }
    if formats.contains(&Format::Mesh) {
        atomic_write(&out_dir.join("mesh.csv"), |w| write_mesh_tables(w, &header, &mesh))?;
    }
    if formats.contains(&Format::Matrices) && traj.len() > 1 {
        let dir = out_dir.join("matrices");
        let (rho0, u0) = (&traj.density[0], &traj.velocity[0]);
        atomic_write(&dir.join("transport_000001.txt"), |w| {
            transport_matrix(&mesh, u0, out.dt).write_coordinate(w)
        })?;
        let f = sample_forcing(&mesh, scheme.forcing.as_ref(), traj.times[1]);
        let system = SaddleSystem::oseen(&mesh, rho0, &traj.density[1], u0, &f, out.dt)?;
        let (m, rhs) = system.monolithic(Some(0));
        atomic_write(&dir.join("oseen_000001.txt"), |w| m.write_coordinate(w))?;
        atomic_write(&dir.join("oseen_rhs_000001.txt"), |w| {
            rhs.iter().try_for_each(|v| writeln!(w, "{v:.17e}"))
        })?;
    }

    let steps = &diag.steps;
    let max = |f: &dyn Fn(&StepDiagnostics) -> f64| steps.iter().map(f).fold(0.0f64, f64::max);
    let min = |f: &dyn Fn(&StepDiagnostics) -> f64| steps.iter().map(f).fold(f64::INFINITY, f64::min);
    let c = &mut outcome.checks;
    c.push(match &out.failure {
        None => Check::new("completed", true, format!("{} of {} steps", steps.len(), out.steps)),
        Some(f) => Check::new("completed", false, format!("step {}: {}", f.step, f.error)),
    });
    c.push(Check::new(
        "density bounds",
        steps.iter().all(|s| s.bounds_ok(&th)),
        format!(
            "smallest margin {} (tolerance {})",
            fmt_e(min(&|s| s.lower_margin.min(s.upper_margin))),
            fmt_e(th.margin)
        ),
    ));
    c.push(Check::new(
        "density L2 decay",
        steps.iter().all(|s| s.l2_decay_ok(&th)),
        format!("largest increase {}", fmt_e(max(&|s| s.rho_l2 - s.rho_l2_prev))),
    ));
    c.push(Check::new(
        "dual mass balance",
        steps.iter().all(|s| s.dual_mass_ok(&th)),
        format!("max residual {} (tolerance {})", fmt_e(max(&|s| s.dual_mass_residual)), fmt_e(th.dual_mass)),
    ));
    c.push(Check::new(
        "kinetic energy identity",
        steps.iter().all(|s| s.kinetic_ok(&th)),
        format!(
            "max residual {} (tolerance {}), max remainder {}",
            fmt_e(max(&|s| s.kinetic_residual)),
            fmt_e(th.kinetic),
            fmt_e(steps.iter().map(|s| s.kinetic_remainder_max).fold(f64::NEG_INFINITY, f64::max))
        ),
    ));
    c.push(Check::new(
        "divergence",
        steps.iter().all(|s| s.divergence_ok(&th)),
        format!("max L2 norm {} (tolerance {})", fmt_e(max(&|s| s.div_l2)), fmt_e(th.divergence)),
    ));
    if diag.unforced {
        c.push(Check::new(
            "energy non-increasing",
            diag.energy_nonincreasing(1e-12),
            format!("initial {}", fmt_e(diag.initial_energy)),
        ));
    }
    outcome.notes.push(format!(
        "L2(H1) norm {:.6e}, Linf(L2) norm {:.6e}",
        diag.l2_h1(),
        diag.linf_l2()
    ));
    outcome.write_summary(&header)?;
    Ok(outcome)
}

/// Duality, adjointness and coercivity on random fields.
pub fn cmd_verify(opts: &CommandOptions) -> Result<Outcome> {
    let Loaded {
        config,
        header,
        out_dir,
        seed,
    } = load(opts)?;
    let mesh = config.build_mesh()?;
    let c = mesh.counts();
    if (0..mesh.dim()).any(|a| c[a] < 3) {
        return Err(Error::Precondition(format!(
            "the identity battery needs at least 3 cells per direction, got {:?}",
            &c[..mesh.dim()]
        )));
    }
    let trials = config.verify.trials;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duality = check_duality(&mesh, trials, &mut rng)?;
    let adjoint = check_adjointness(&mesh, trials, &mut rng)?;
    let coercive = check_coercivity(&mesh, trials, &mut rng)?;
    let results = [
        ("duality", duality, IDENTITY_TOL),
        ("adjointness", adjoint, IDENTITY_TOL),
        ("coercivity", coercive.identity, IDENTITY_TOL),
        ("laplacian symmetry", coercive.symmetry, SYMMETRY_TOL),
    ];
    let mut outcome = Outcome {
        out_dir: out_dir.clone(),
        ..Default::default()
    };
    outcome
        .notes
        .push(format!("{} cells, {trials} random trials per check", mesh.n_cells()));
    let mut rows = Vec::new();
    for (name, value, tol) in results {
        let passed = value < tol || (name == "laplacian symmetry" && value <= tol);
        rows.push(vec![
            name.to_string(),
            format!("{value:.17e}"),
            format!("{tol:e}"),
            if passed { "PASS" } else { "FAIL" }.to_string(),
        ]);
        outcome.checks.push(Check::new(
            name,
            passed,
            format!("max relative residual {} (tolerance {})", fmt_e(value), fmt_e(tol)),
        ));
    }
    atomic_write(&out_dir.join("identities.csv"), |w| {
        write_table(w, &header, &["check", "residual", "threshold", "status"], &rows)
    })?;
    outcome.write_summary(&header)?;
    Ok(outcome)
}

/// Levels `base · 2^k` for `k < count`.
pub fn doubled_levels(base: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| base << k).collect()
}

/// Convergence study and time-translate measurement.
pub fn cmd_study(opts: &CommandOptions) -> Result<Outcome> {
    let Loaded {
        config, header, out_dir, ..
    } = load(opts)?;
    let st = &config.study;
    let levels = match opts.levels {
        Some(n) if n < 3 => {
            return Err(Error::Config(format!("--levels must be at least 3, got {n}")));
        }
        Some(n) => doubled_levels(st.levels[0], n),
        None => st.levels.clone(),
    };
    let preset = st.preset.unwrap_or(config.problem.preset);
    let solver = config.solver.options();
    let study = StudyOptions {
        preset,
        dim: config.dim(),
        levels,
        policy: TimestepPolicy::Proportional { factor: st.dt_factor },
        t_final: st.t_final,
        solver: solver.clone(),
        min_factor: st.min_factor,
    };
    let report = convergence_study(&study)?;
    atomic_write(&out_dir.join("convergence.csv"), |w| {
        write_table(w, &header, &ConvergenceReport::COLUMNS, &report.rows())
    })?;
    let mut outcome = Outcome {
        out_dir: out_dir.clone(),
        ..Default::default()
    };
    outcome.notes.push(format!(
        "preset {}, levels {:?}, dt = {} h, T = {}",
        preset.name(),
        study.levels,
        st.dt_factor,
        st.t_final
    ));
    let list = |v: Vec<f64>| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ");
    outcome.checks.push(Check::new(
        "monotone error decay",
        report.monotone(),
        format!(
            "velocity reductions [{}], density reductions [{}]",
            list(report.velocity_reductions()),
            list(report.density_reductions())
        ),
    ));
    outcome.checks.push(Check::new(
        "reduction factor",
        report.passed(),
        format!("every factor at least {}", st.min_factor),
    ));
    if let Some((a, b)) = report.energy_spread() {
        outcome.checks.push(Check::new(
            "energy norm boundedness",
            a < st.max_energy_spread && b < st.max_energy_spread,
            format!(
                "relative change between finest levels: L2(H1) {a:.4}, Linf(L2) {b:.4} (limit {})",
                st.max_energy_spread
            ),
        ));
    }

    let tr = &st.translates;
    if tr.enabled {
        let problem = tr.preset.build(config.dim())?;
        let mesh = Arc::new(MacMesh::unit(config.dim(), tr.cells)?);
        let mut scheme = SchemeConfig::from_problem(mesh.clone(), problem.clone(), tr.t_final, tr.dt);
        scheme.solver = solver;
        scheme.diagnostics = false;
        let out = run(&scheme)?;
        if let Some(f) = out.failure {
            return Err(f.error);
        }
        let dt = out.dt;
        let mut taus = vec![0.0];
        taus.extend(tr.shifts.iter().map(|&m| m as f64 * dt));
        let rep = measure_translates(&mesh, &out.trajectory, &taus, problem.density_bounds())?;
        let rows: Vec<Vec<String>> = rep
            .entries
            .iter()
            .map(|(t, i)| vec![format!("{t:.17e}"), format!("{i:.17e}")])
            .collect();
        atomic_write(&out_dir.join("translates.csv"), |w| {
            write_table(w, &header, &["tau", "integral"], &rows)
        })?;
        outcome.checks.push(Check::new(
            "translate slope",
            rep.slope >= tr.min_slope,
            format!(
                "fitted slope {:.4} (minimum {}), bound scale {:.4}",
                rep.slope, tr.min_slope, rep.scale
            ),
        ));
    }
    outcome.write_summary(&header)?;
    Ok(outcome)
}

#[derive(Debug, Parser)]
#[command(name = "macflow", version, about = "MAC finite-volume solver for variable-density incompressible flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed, overriding `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of refinement levels for `study`, doubling from the first
    /// configured level.
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scheme and write the trajectory and diagnostics.
    Run(CommonArgs),
    /// Run the discrete identity battery on random fields.
    Verify(CommonArgs),
    /// Run the convergence study and the time-translate measurement.
    Study(CommonArgs),
}

/// Parses arguments, runs the command and returns the exit code:
/// 0 when every check passes, 1 when a check fails, 2 on errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (cmd, a): (fn(&CommandOptions) -> Result<Outcome>, _) = match cli.command {
        Command::Run(a) => (cmd_run, a),
        Command::Verify(a) => (cmd_verify, a),
        Command::Study(a) => (cmd_study, a),
    };
    let opts = CommandOptions {
        config: a.config,
        out: a.out,
        seed: a.seed,
        levels: a.levels,
    };
    match cmd(&opts) {
        Ok(outcome) => {
            for n in &outcome.notes {
                println!("# {n}");
            }
            for c in &outcome.checks {
                println!("{c}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
domain = [[0.0, 1.0], [0.0, 1.0]]
counts = [4, 4]

[time]
t_final = 0.5
dt = 0.25

[problem]
preset = "trivial"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.solver.strategy, Strategy::Direct);
        assert_eq!(c.output.cadence, 1);
        assert_eq!(c.study.levels, vec![16, 32, 64]);
        assert_eq!(c.verify.trials, 100);
    }

    #[test]
    fn unknown_keys_are_reported_with_their_path() {
        let text = MINIMAL.replace("counts = [4, 4]", "counts = [4, 4]\ncellz = 3");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("mesh") && e.contains("cellz"), "{e}");
        let text = MINIMAL.replace("dt = 0.25", "dt = \"small\"");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("time.dt"), "{e}");
    }

    #[test]
    fn validation_failures() {
        let cases = [
            (MINIMAL.replace("dt = 0.25", "dt = 0.75"), "time.dt"),
            (MINIMAL.replace("counts = [4, 4]", "counts = [4]"), "mesh.counts"),
            (MINIMAL.replace("counts = [4, 4]", ""), "mesh"),
            (MINIMAL.replace("[0.0, 1.0], [0.0, 1.0]", "[0.0, 2.0], [0.0, 1.0]").replace("trivial", "taylor-green"), "mesh.domain"),
            (MINIMAL.replace("trivial\"", "trivial\"\n[problem.swirl]\nspeed = 1.0"), "problem.swirl"),
        ];
        for (text, key) in cases {
            let e = RunConfig::parse(&text).unwrap_err().to_string();
            assert!(e.contains(key), "{key}: {e}");
        }
    }

    #[test]
    fn swirl_overrides_apply() {
        let text = MINIMAL.replace("trivial\"", "rotating-patch\"\n[problem.swirl]\nspeed = 1.0");
        let c = RunConfig::parse(&text).unwrap();
        let p = c.build_problem().unwrap();
        let reference = Swirl {
            speed: 1.0,
            ..Swirl::rotating_patch(2)
        };
        let x = [0.5, 0.7];
        assert_eq!(p.velocity(&x, 0.0), reference.velocity(&x, 0.0));
    }

    #[test]
    fn doubling() {
        assert_eq!(doubled_levels(8, 4), vec![8, 16, 32, 64]);
    }

    #[test]
    fn check_lines() {
        assert_eq!(Check::new("a", true, "x").to_string(), "PASS a: x");
        assert_eq!(Check::new("b", false, "y").to_string(), "FAIL b: y");
    }
}
