//! Identity checks, per-step diagnostics, time translates and refinement
//! studies.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::{
    cell_average, inner_dual, norm_h1, norm_l2_cells, norm_lp_dual, ScalarField, Trajectory,
    VelocityField,
};
use crate::grid::MacMesh;
use crate::linsolve::{project_divergence_free, SolveReport, SolverOptions};
use crate::operators::{
    convection_apply, div_dual, div_velocity, dual_density, dual_flux_divergence, dual_gradient, flux_reconstruction,
    grad_pressure, laplacian_apply, laplacian_matrix, upwind_flux,
};
use crate::presets::{velocity_face_means, Preset};
use crate::timestepper::{run, SchemeConfig, SchemeState};

/// Acceptance thresholds for the per-step checks.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// Absolute slack on the density bounds and on the L² decay.
    pub margin: f64,
    pub dual_mass: f64,
    pub kinetic: f64,
    pub divergence: f64,
}

impl Thresholds {
    pub fn from_solver(opts: &SolverOptions) -> Self {
        Self {
            margin: 1e-12,
            dual_mass: 10.0 * opts.transport_tol,
            kinetic: 10.0 * opts.oseen_tol,
            divergence: 10.0 * opts.oseen_tol,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::from_solver(&SolverOptions::default())
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    pub n: usize,
    pub t: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// `min ρⁿ⁺¹ - ρ_min` (declared); negative means a violation.
    pub lower_margin: f64,
    /// `ρ_max - max ρⁿ⁺¹` (declared).
    pub upper_margin: f64,
    pub rho_l2: f64,
    pub rho_l2_prev: f64,
    pub div_l2: f64,
    pub dual_mass_residual: f64,
    pub kinetic_residual: f64,
    /// Largest value of `-(1/2δt) ρ_{D_σ}ⁿ (u_σⁿ⁺¹ - u_σⁿ)²`.
    pub kinetic_remainder_max: f64,
    /// `½ Σ |D_σ| ρ_{D_σ}ⁿ⁺¹ (u_σⁿ⁺¹)²`.
    pub kinetic_energy: f64,
    /// `δt ‖uⁿ⁺¹‖²_{1,ε,0}`.
    pub dissipation: f64,
    pub h1: f64,
    pub l2: f64,
    pub transport_residual: f64,
    pub oseen_residual: f64,
    pub momentum_residual: f64,
    pub iterations: usize,
    pub fell_back: bool,
}

impl StepDiagnostics {
    pub const COLUMNS: [&'static str; 21] = [
        "n",
        "t",
        "rho_min",
        "rho_max",
        "lower_margin",
        "upper_margin",
        "rho_l2",
        "div_l2",
        "dual_mass_residual",
        "kinetic_residual",
        "kinetic_remainder_max",
        "kinetic_energy",
        "h1",
        "l2",
        "transport_residual",
        "momentum_residual",
        "bounds_ok",
        "l2_decay_ok",
        "dual_mass_ok",
        "kinetic_ok",
        "divergence_ok",
    ];

    pub fn bounds_ok(&self, th: &Thresholds) -> bool {
        self.lower_margin >= -th.margin && self.upper_margin >= -th.margin
    }

    pub fn l2_decay_ok(&self, th: &Thresholds) -> bool {
        self.rho_l2 <= self.rho_l2_prev + th.margin
    }

    pub fn dual_mass_ok(&self, th: &Thresholds) -> bool {
        self.dual_mass_residual <= th.dual_mass
    }

    pub fn kinetic_ok(&self, th: &Thresholds) -> bool {
        self.kinetic_residual <= th.kinetic && self.kinetic_remainder_max <= 0.0
    }

    pub fn divergence_ok(&self, th: &Thresholds) -> bool {
        self.div_l2 <= th.divergence
    }

    pub fn all_ok(&self, th: &Thresholds) -> bool {
        self.bounds_ok(th) && self.l2_decay_ok(th) && self.dual_mass_ok(th) && self.kinetic_ok(th) && self.divergence_ok(th)
    }

    /// One CSV row matching [`Self::COLUMNS`].
    pub fn row(&self, th: &Thresholds) -> Vec<String> {
        let flag = |b: bool| if b { "PASS" } else { "FAIL" }.to_string();
        let mut r = vec![self.n.to_string()];
        r.extend(
            [
                self.t,
                self.rho_min,
                self.rho_max,
                self.lower_margin,
                self.upper_margin,
                self.rho_l2,
                self.div_l2,
                self.dual_mass_residual,
                self.kinetic_residual,
                self.kinetic_remainder_max,
                self.kinetic_energy,
                self.h1,
                self.l2,
                self.transport_residual,
                self.momentum_residual,
            ]
            .iter()
            .map(|v| format!("{v:.17e}")),
        );
        r.extend([
            flag(self.bounds_ok(th)),
            flag(self.l2_decay_ok(th)),
            flag(self.dual_mass_ok(th)),
            flag(self.kinetic_ok(th)),
            flag(self.divergence_ok(th)),
        ]);
        r
    }
}

/// Per-step diagnostics of a run together with the running energy norms.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub dt: f64,
    pub declared_bounds: (f64, f64),
    pub unforced: bool,
    pub initial_rho_l2: f64,
    pub initial_l2: f64,
    pub initial_energy: f64,
    pub steps: Vec<StepDiagnostics>,
    sum_h1_sq: f64,
    max_l2: f64,
}

impl DiagnosticsRecord {
    pub fn new(mesh: &MacMesh, state: &SchemeState, dt: f64, declared_bounds: (f64, f64), unforced: bool) -> Self {
        let l2 = inner_dual(mesh, &state.u, &state.u).sqrt();
        Self {
            dt,
            declared_bounds,
            unforced,
            initial_rho_l2: norm_l2_cells(mesh, &state.rho),
            initial_l2: l2,
            initial_energy: kinetic_energy(mesh, &state.rho_dual, &state.u),
            steps: Vec::new(),
            sum_h1_sq: 0.0,
            max_l2: l2,
        }
    }

    pub fn push(&mut self, d: StepDiagnostics) {
        self.sum_h1_sq += self.dt * d.h1 * d.h1;
        self.max_l2 = self.max_l2.max(d.l2);
        self.steps.push(d);
    }

    /// `‖u‖_{L²(H¹)} = (Σ_n δt ‖uⁿ⁺¹‖²_{1,ε,0})^{1/2}` over the recorded steps.
    pub fn l2_h1(&self) -> f64 {
        self.sum_h1_sq.sqrt()
    }

    /// `‖u‖_{L∞(L²)} = max_n ‖uⁿ‖_{L²}`, including the initial datum.
    pub fn linf_l2(&self) -> f64 {
        self.max_l2
    }

    /// `Eⁿ⁺¹ + δt‖uⁿ⁺¹‖²_{1,ε,0} ≤ Eⁿ` at every step, up to `tol` relative.
    pub fn energy_nonincreasing(&self, tol: f64) -> bool {
        let mut prev = self.initial_energy;
        for s in &self.steps {
            if s.kinetic_energy + s.dissipation > prev + tol * prev.max(1.0) {
                return false;
            }
            prev = s.kinetic_energy;
        }
        true
    }

    /// Descriptions of every failed per-step check.
    pub fn failures(&self, th: &Thresholds) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.steps {
            let checks = [
                ("density bounds", s.bounds_ok(th)),
                ("density L2 decay", s.l2_decay_ok(th)),
                ("dual mass balance", s.dual_mass_ok(th)),
                ("kinetic energy identity", s.kinetic_ok(th)),
                ("divergence", s.divergence_ok(th)),
            ];
            for (name, ok) in checks {
                if !ok {
                    out.push(format!("step {}: {name}", s.n));
                }
            }
        }
        if self.unforced && !self.energy_nonincreasing(1e-12) {
            out.push("kinetic energy increased without forcing".into());
        }
        out
    }
}

fn kinetic_energy(mesh: &MacMesh, rho_dual: &[Vec<f64>], u: &VelocityField) -> f64 {
    let mut e = 0.0;
    for fs in mesh.face_sets() {
        for &f in &fs.interior {
            let v = u.components[fs.dir][f];
            e += 0.5 * fs.faces[f].dual_measure * rho_dual[fs.dir][f] * v * v;
        }
    }
    e
}

/// Diagnostics of the step `prev → next`.
#[allow(clippy::too_many_arguments)]
pub fn step_diagnostics(
    mesh: &MacMesh,
    prev: &SchemeState,
    next: &SchemeState,
    forcing: &VelocityField,
    dt: f64,
    transport: &SolveReport,
    oseen: &SolveReport,
    record: &DiagnosticsRecord,
) -> Result<StepDiagnostics> {
    let (lo, hi) = record.declared_bounds;
    let kin = check_kinetic(mesh, prev, next, forcing, dt)?;
    let h1 = norm_h1(mesh, &next.u);
    Ok(StepDiagnostics {
        n: next.n,
        t: next.t,
        rho_min: next.rho.min(),
        rho_max: next.rho.max(),
        lower_margin: next.rho.min() - lo,
        upper_margin: hi - next.rho.max(),
        rho_l2: norm_l2_cells(mesh, &next.rho),
        rho_l2_prev: norm_l2_cells(mesh, &prev.rho),
        div_l2: norm_l2_cells(mesh, &div_velocity(mesh, &next.u)?),
        dual_mass_residual: check_dual_mass(mesh, &prev.rho, &next.rho, &prev.u, dt)?,
        kinetic_residual: kin.max_residual,
        kinetic_remainder_max: kin.max_remainder,
        kinetic_energy: kinetic_energy(mesh, &next.rho_dual, &next.u),
        dissipation: dt * h1 * h1,
        h1,
        l2: inner_dual(mesh, &next.u, &next.u).sqrt(),
        transport_residual: transport.transport_residual,
        oseen_residual: oseen.residual,
        momentum_residual: oseen.momentum_residual,
        iterations: oseen.iterations,
        fell_back: oseen.fell_back,
    })
}

/// Largest `|(ρ_{D_σ}ⁿ⁺¹ - ρ_{D_σ}ⁿ)/δt + div_{D_σ}(ρⁿ⁺¹, uⁿ)|` over interior
/// dual cells.
pub fn check_dual_mass(
    mesh: &MacMesh,
    rho_n: &ScalarField,
    rho_n1: &ScalarField,
    u_n: &VelocityField,
    dt: f64,
) -> Result<f64> {
    let d0 = dual_density(mesh, rho_n)?;
    let d1 = dual_density(mesh, rho_n1)?;
    let mut worst = 0.0f64;
    for fs in mesh.face_sets() {
        let i = fs.dir;
        let div = div_dual(mesh, rho_n1, u_n, i)?;
        for &f in &fs.interior {
            worst = worst.max(((d1[i][f] - d0[i][f]) / dt + div[f]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KineticCheck {
    pub max_residual: f64,
    /// Always `≤ 0`.
    pub max_remainder: f64,
}

/// Per-dual-cell residual of the kinetic energy balance
///
/// `(1/2δt)(ρ_Dⁿ⁺¹|u'|² - ρ_Dⁿ|u|²) + (1/2|D|) Σ_ε F_{σ,ε} u'_σ u'_σ'
///  - (Δu')u' + (∇p)u' - f u' = -(1/2δt) ρ_Dⁿ (u' - u)²`
///
/// with `u = uⁿ`, `u' = uⁿ⁺¹`, `p = pⁿ⁺¹` and fluxes of `(ρⁿ⁺¹, uⁿ)`.
pub fn check_kinetic(
    mesh: &MacMesh,
    prev: &SchemeState,
    next: &SchemeState,
    forcing: &VelocityField,
    dt: f64,
) -> Result<KineticCheck> {
    let d0 = dual_density(mesh, &prev.rho)?;
    let d1 = dual_density(mesh, &next.rho)?;
    let fluxes = upwind_flux(mesh, &next.rho, &prev.u)?;
    let lap = laplacian_apply(mesh, &next.u)?;
    let grad = grad_pressure(mesh, &next.p)?;
    let mut out = KineticCheck {
        max_residual: 0.0,
        max_remainder: f64::NEG_INFINITY,
    };
    for fs in mesh.face_sets() {
        let i = fs.dir;
        let (u0, u1) = (&prev.u.components[i], &next.u.components[i]);
        for &f in &fs.interior {
            let dm = fs.faces[f].dual_measure;
            let (a, b) = (u0[f], u1[f]);
            let mut conv = 0.0;
            for &(e, sign) in &fs.incident[f] {
                let df = &fs.dual_faces[e];
                let other = if sign > 0.0 { df.plus } else { df.minus };
                let w = other.face().map_or(0.0, |g| u1[g]);
                conv += fluxes.dual_outward(i, e, sign) * b * w;
            }
            let lhs = (d1[i][f] * b * b - d0[i][f] * a * a) / (2.0 * dt) + conv / (2.0 * dm) - lap.components[i][f] * b
                + grad.components[i][f] * b
                - forcing.components[i][f] * b;
            let rem = -d0[i][f] * (b - a) * (b - a) / (2.0 * dt);
            out.max_residual = out.max_residual.max((lhs - rem).abs());
            out.max_remainder = out.max_remainder.max(rem);
        }
    }
    if out.max_remainder == f64::NEG_INFINITY {
        out.max_remainder = 0.0;
    }
    Ok(out)
}

/// Relative residual of the discrete momentum equation re-evaluated from the
/// fields: `max_σ |r_σ| / max_σ(term magnitudes)`.
pub fn momentum_residual(
    mesh: &MacMesh,
    prev: &SchemeState,
    next: &SchemeState,
    forcing: &VelocityField,
    dt: f64,
) -> Result<f64> {
    let d0 = dual_density(mesh, &prev.rho)?;
    let d1 = dual_density(mesh, &next.rho)?;
    let conv = convection_apply(mesh, &next.rho, &prev.u, &next.u)?;
    let lap = laplacian_apply(mesh, &next.u)?;
    let grad = grad_pressure(mesh, &next.p)?;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for fs in mesh.face_sets() {
        let i = fs.dir;
        for &f in &fs.interior {
            let terms = [
                d1[i][f] * next.u.components[i][f] / dt,
                -d0[i][f] * prev.u.components[i][f] / dt,
                conv.components[i][f],
                -lap.components[i][f],
                grad.components[i][f],
                -forcing.components[i][f],
            ];
            worst = worst.max(terms.iter().sum::<f64>().abs());
            scale = terms.iter().fold(scale, |m, t| m.max(t.abs()));
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Cell values drawn uniformly from `[lo, hi)`.
pub fn random_density<R: Rng>(mesh: &MacMesh, rng: &mut R, lo: f64, hi: f64) -> ScalarField {
    ScalarField {
        values: (0..mesh.n_cells()).map(|_| rng.gen_range(lo..hi)).collect(),
    }
}

/// Interior face values drawn uniformly from `[-1, 1)`.
pub fn random_velocity<R: Rng>(mesh: &MacMesh, rng: &mut R) -> VelocityField {
    let x: Vec<f64> = (0..mesh.n_velocity_unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    VelocityField::from_unknowns(mesh, &x)
}

fn relative(residual: f64, magnitude: f64) -> f64 {
    if magnitude > 0.0 {
        residual / magnitude
    } else {
        residual
    }
}

/// Residual of `∫ div_D(ρ, v) w = -∫ (ρv)_ε · (∇w)_ε` for one direction,
/// relative to the sum of the term magnitudes.
pub fn duality_residual(mesh: &MacMesh, rho: &ScalarField, v: &VelocityField, w: &VelocityField, i: usize) -> Result<f64> {
    let fs = mesh.faces(i);
    let div = div_dual(mesh, rho, v, i)?;
    let wi = &w.components[i];
    let mut lhs = 0.0;
    let mut mag = 0.0;
    for &f in &fs.interior {
        let t = fs.faces[f].dual_measure * div[f] * wi[f];
        lhs += t;
        mag += t.abs();
    }
    let recon = flux_reconstruction(mesh, rho, v, i)?;
    let grad = dual_gradient(mesh, wi, i)?;
    let mut rhs = 0.0;
    for ((df, r), g) in fs.dual_faces.iter().zip(&recon).zip(&grad) {
        let t = -df.measure * df.dist * r * g;
        rhs += t;
        mag += t.abs();
    }
    Ok(relative((lhs - rhs).abs(), mag))
}

/// Largest relative duality residual over `trials` random `(ρ, v, w)` and
/// all directions.
pub fn check_duality<R: Rng>(mesh: &MacMesh, trials: usize, rng: &mut R) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let rho = random_density(mesh, rng, 1.0, 2.0);
        let v = random_velocity(mesh, rng);
        let w = random_velocity(mesh, rng);
        for i in 0..mesh.dim() {
            worst = worst.max(duality_residual(mesh, &rho, &v, &w, i)?);
        }
    }
    Ok(worst)
}

/// Residual of `∫ p div v + ∫ ∇p · v = 0`, relative to the term magnitudes.
pub fn adjointness_residual(mesh: &MacMesh, p: &ScalarField, v: &VelocityField) -> Result<f64> {
    let div = div_velocity(mesh, v)?;
    let grad = grad_pressure(mesh, p)?;
    let a: Vec<f64> = (0..mesh.n_cells())
        .map(|k| mesh.cell_volume(k) * p.values[k] * div.values[k])
        .collect();
    let mut terms = a;
    for fs in mesh.face_sets() {
        for (f, face) in fs.faces.iter().enumerate() {
            terms.push(face.dual_measure * grad.components[fs.dir][f] * v.components[fs.dir][f]);
        }
    }
    let sum: f64 = terms.iter().sum();
    let mag: f64 = terms.iter().map(|t| t.abs()).sum();
    Ok(relative(sum.abs(), mag))
}

pub fn check_adjointness<R: Rng>(mesh: &MacMesh, trials: usize, rng: &mut R) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = random_density(mesh, rng, -1.0, 1.0);
        let v = random_velocity(mesh, rng);
        worst = worst.max(adjointness_residual(mesh, &p, &v)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct CoercivityCheck {
    /// Largest `|-∫Δv·v - ‖v‖²_{1,ε,0}| / ‖v‖²_{1,ε,0}`.
    pub identity: f64,
    /// Largest `|A - Aᵀ|` entry of the assembled Laplacian.
    pub symmetry: f64,
}

pub fn check_coercivity<R: Rng>(mesh: &MacMesh, trials: usize, rng: &mut R) -> Result<CoercivityCheck> {
    let mut identity = 0.0f64;
    for _ in 0..trials {
        let v = random_velocity(mesh, rng);
        let lap = laplacian_apply(mesh, &v)?;
        let form = -inner_dual(mesh, &lap, &v);
        let n2 = norm_h1(mesh, &v).powi(2);
        identity = identity.max(relative((form - n2).abs(), n2));
    }
    Ok(CoercivityCheck {
        identity,
        symmetry: laplacian_matrix(mesh).matrix.asymmetry(),
    })
}

#[derive(Debug, Clone)]
pub struct TranslateReport {
    /// `(τ, ∫₀^{T-τ} ∫_Ω |u(t+τ) - u(t)|²)`.
    pub entries: Vec<(f64, f64)>,
    pub dt: f64,
    /// Least-squares slope of `log I(τ)` against `log(τ + δt)` over `τ > 0`.
    pub slope: f64,
    /// `(ρ_max/ρ_min)(‖u‖³_{L²(H¹)} + 1)`.
    pub scale: f64,
}

/// Translate integrals of the piecewise-constant-in-time velocity
/// `u(t) = uⁿ⁺¹` on `(t_n, t_{n+1}]`. Every `τ` must be a multiple of `δt` in
/// `[0, T)`; at least three positive values are needed for the fit.
pub fn measure_translates(
    mesh: &MacMesh,
    trajectory: &Trajectory,
    taus: &[f64],
    density_bounds: (f64, f64),
) -> Result<TranslateReport> {
    let dt = trajectory.dt;
    let steps = trajectory.steps();
    let positive = taus.iter().filter(|&&t| t > 0.0).count();
    if positive < 3 {
        return Err(Error::Precondition(format!(
            "translate fit needs at least 3 positive shifts, got {positive}"
        )));
    }
    let mut entries = Vec::new();
    for &tau in taus {
        let m = (tau / dt).round();
        if (m * dt - tau).abs() > 1e-9 * dt || m < 0.0 || m as usize >= steps {
            return Err(Error::Precondition(format!(
                "shift {tau} is not a multiple of dt = {dt} inside [0, T)"
            )));
        }
        let m = m as usize;
        let mut integral = 0.0;
        for n in 1..=(steps - m) {
            let a = &trajectory.velocity[n];
            let b = &trajectory.velocity[n + m];
            let diff = VelocityField {
                components: a
                    .components
                    .iter()
                    .zip(&b.components)
                    .map(|(x, y)| x.iter().zip(y).map(|(x, y)| y - x).collect())
                    .collect(),
            };
            integral += dt * inner_dual(mesh, &diff, &diff);
        }
        entries.push((tau, integral));
    }
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .filter(|(t, i)| *t > 0.0 && *i > 0.0)
        .map(|(t, i)| ((t + dt).ln(), i.ln()))
        .collect();
    let slope = fit_slope(&pts);
    let l2h1 = trajectory.velocity[1..]
        .iter()
        .map(|u| dt * norm_h1(mesh, u).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(TranslateReport {
        entries,
        dt,
        slope,
        scale: density_bounds.1 / density_bounds.0 * (l2h1.powi(3) + 1.0),
    })
}

/// Least-squares slope; NaN for fewer than two points.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TimestepPolicy {
    /// `δt = factor · h`, with `h` the largest cell width.
    Proportional { factor: f64 },
    Fixed { dt: f64 },
}

impl TimestepPolicy {
    pub fn dt(&self, mesh: &MacMesh) -> f64 {
        match *self {
            TimestepPolicy::Proportional { factor } => {
                let h = (0..mesh.dim())
                    .flat_map(|a| mesh.widths(a).iter().copied())
                    .fold(0.0, f64::max);
                factor * h
            }
            TimestepPolicy::Fixed { dt } => dt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LevelResult {
    pub cells: usize,
    pub h: f64,
    pub dt: f64,
    pub regularity: f64,
    pub velocity_error: f64,
    pub density_error: f64,
    pub pressure_error: f64,
    pub l2_h1: f64,
    pub linf_l2: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub preset: Preset,
    pub t_final: f64,
    pub levels: Vec<LevelResult>,
    pub min_factor: f64,
}

impl ConvergenceReport {
    pub const COLUMNS: [&'static str; 11] = [
        "cells",
        "h",
        "dt",
        "regularity",
        "velocity_error",
        "density_error",
        "pressure_error",
        "velocity_reduction",
        "density_reduction",
        "l2_h1",
        "linf_l2",
    ];

    pub fn velocity_reductions(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[0].velocity_error / w[1].velocity_error).collect()
    }

    pub fn density_reductions(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[0].density_error / w[1].density_error).collect()
    }

    /// Strictly decreasing velocity and density errors.
    pub fn monotone(&self) -> bool {
        self.levels
            .windows(2)
            .all(|w| w[1].velocity_error < w[0].velocity_error && w[1].density_error < w[0].density_error)
    }

    pub fn passed(&self) -> bool {
        self.monotone()
            && self
                .velocity_reductions()
                .iter()
                .chain(&self.density_reductions())
                .all(|&r| r >= self.min_factor)
    }

    /// Relative spread of the two energy norms between the last two levels.
    pub fn energy_spread(&self) -> Option<(f64, f64)> {
        let n = self.levels.len();
        if n < 2 {
            return None;
        }
        let (a, b) = (&self.levels[n - 2], &self.levels[n - 1]);
        let spread = |x: f64, y: f64| (x - y).abs() / x.max(y);
        Some((spread(a.l2_h1, b.l2_h1), spread(a.linf_l2, b.linf_l2)))
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        let vr = self.velocity_reductions();
        let dr = self.density_reductions();
        self.levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let red = |r: &[f64]| if k == 0 { String::new() } else { format!("{:.6}", r[k - 1]) };
                vec![
                    l.cells.to_string(),
                    format!("{:.17e}", l.h),
                    format!("{:.17e}", l.dt),
                    format!("{:.6}", l.regularity),
                    format!("{:.17e}", l.velocity_error),
                    format!("{:.17e}", l.density_error),
                    format!("{:.17e}", l.pressure_error),
                    red(&vr),
                    red(&dr),
                    format!("{:.17e}", l.l2_h1),
                    format!("{:.17e}", l.linf_l2),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub preset: Preset,
    pub dim: usize,
    /// Cells per direction on the unit box, strictly increasing.
    pub levels: Vec<usize>,
    pub policy: TimestepPolicy,
    pub t_final: f64,
    pub solver: SolverOptions,
    pub min_factor: f64,
}

/// Runs the preset on each level and measures `L²(0,T; L²)` errors against
/// face means (velocity), cell means (density) and mean-free cell means
/// (pressure) of the exact solution.
pub fn convergence_study(opts: &StudyOptions) -> Result<ConvergenceReport> {
    if opts.levels.len() < 3 {
        return Err(Error::Precondition(format!(
            "a convergence study needs at least 3 levels, got {}",
            opts.levels.len()
        )));
    }
    if opts.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("levels must strictly refine".into()));
    }
    let problem = opts.preset.build(opts.dim)?;
    let mut levels = Vec::new();
    for &n in &opts.levels {
        let mesh = Arc::new(MacMesh::unit(opts.dim, n)?);
        let mut config = SchemeConfig::from_problem(mesh.clone(), problem.clone(), opts.t_final, opts.policy.dt(&mesh));
        config.solver = opts.solver.clone();
        config.diagnostics = false;
        let out = run(&config)?;
        if let Some(f) = out.failure {
            return Err(f.error);
        }
        let traj = &out.trajectory;
        let dt = traj.dt;
        let (mut eu, mut er, mut ep, mut h1) = (0.0, 0.0, 0.0, 0.0);
        let mut linf = 0.0f64;
        for k in 0..traj.len() {
            let t = traj.times[k];
            linf = linf.max(norm_lp_dual(&mesh, &traj.velocity[k], 2.0)?);
            if k == 0 {
                continue;
            }
            let ue = velocity_face_means(&mesh, problem.as_ref(), t);
            let re = cell_average(&mesh, |x| problem.density(x, t));
            let mut pe = cell_average(&mesh, |x| problem.pressure(x, t));
            pe.remove_mean(&mesh);
            let mut du = traj.velocity[k].clone();
            for (a, b) in du.components.iter_mut().zip(&ue.components) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
            }
            let dr = ScalarField {
                values: traj.density[k].values.iter().zip(&re.values).map(|(a, b)| a - b).collect(),
            };
            let mut ph = traj.pressure[k].clone();
            ph.remove_mean(&mesh);
            let dp = ScalarField {
                values: ph.values.iter().zip(&pe.values).map(|(a, b)| a - b).collect(),
            };
            eu += dt * inner_dual(&mesh, &du, &du);
            er += dt * norm_l2_cells(&mesh, &dr).powi(2);
            ep += dt * norm_l2_cells(&mesh, &dp).powi(2);
            h1 += dt * norm_h1(&mesh, &traj.velocity[k]).powi(2);
        }
        levels.push(LevelResult {
            cells: n,
            h: mesh.mesh_step(),
            dt,
            regularity: mesh.regularity(),
            velocity_error: eu.sqrt(),
            density_error: er.sqrt(),
            pressure_error: ep.sqrt(),
            l2_h1: h1.sqrt(),
            linf_l2: linf,
        });
    }
    Ok(ConvergenceReport {
        preset: opts.preset,
        t_final: opts.t_final,
        levels,
        min_factor: opts.min_factor,
    })
}

/// `|∫ C(ρ,u)v · w| / (‖ρ‖_∞ ‖u‖₁ ‖v‖₁ ‖w‖₁)`, or `None` when the bound is 0.
pub fn convection_ratio(
    mesh: &MacMesh,
    rho: &ScalarField,
    u: &VelocityField,
    v: &VelocityField,
    w: &VelocityField,
) -> Result<Option<f64>> {
    let rho_inf = rho.values.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let bound = rho_inf * norm_h1(mesh, u) * norm_h1(mesh, v) * norm_h1(mesh, w);
    if bound == 0.0 {
        return Ok(None);
    }
    let c = convection_apply(mesh, rho, u, v)?;
    Ok(Some(inner_dual(mesh, &c, w).abs() / bound))
}

#[derive(Debug, Clone, Copy)]
pub struct ConvectionBound {
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub samples: usize,
    pub skipped: usize,
}

/// Ratio statistics of the trilinear bound over random `ρ ∈ [1,2]`,
/// projected divergence-free `u` and arbitrary `v`, `w`.
pub fn measure_convection_bound<R: Rng>(mesh: &MacMesh, samples: usize, rng: &mut R) -> Result<ConvectionBound> {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for _ in 0..samples {
        let rho = random_density(mesh, rng, 1.0, 2.0);
        let u = project_divergence_free(mesh, &random_velocity(mesh, rng))?;
        let v = random_velocity(mesh, rng);
        let w = random_velocity(mesh, rng);
        match convection_ratio(mesh, &rho, &u, &v, &w)? {
            Some(r) => ratios.push(r),
            None => skipped += 1,
        }
    }
    let n = ratios.len();
    Ok(ConvectionBound {
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        mean_ratio: if n > 0 { ratios.iter().sum::<f64>() / n as f64 } else { 0.0 },
        samples: n,
        skipped,
    })
}

/// Fluxes of the dual cells of direction `i` summed per cell, for constant
/// `ρ` and divergence-free `u`; zero up to roundoff.
pub fn dual_flux_closure(mesh: &MacMesh, rho: &ScalarField, u: &VelocityField, i: usize) -> Result<f64> {
    let fluxes = upwind_flux(mesh, rho, u)?;
    Ok(dual_flux_divergence(mesh, &fluxes, i)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestepper::{initialize, step};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graded_2d() -> MacMesh {
        MacMesh::new(
            &[(0.0, 1.0), (0.0, 2.0)],
            &[vec![0.0, 0.1, 0.35, 0.5, 0.8, 1.0], vec![0.0, 0.3, 1.0, 1.2, 2.0]],
        )
        .unwrap()
    }

    #[test]
    fn identity_batteries_pass_on_uniform_and_graded_meshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let meshes = [
            MacMesh::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[5, 4]).unwrap(),
            graded_2d(),
            MacMesh::unit(3, 3).unwrap(),
            MacMesh::new(
                &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
                &[vec![0.0, 0.2, 0.7, 1.0], vec![0.0, 0.5, 0.6, 1.0], vec![0.0, 0.4, 0.9, 1.0]],
            )
            .unwrap(),
        ];
        for m in &meshes {
            assert!(check_duality(m, 20, &mut rng).unwrap() < 1e-12);
            assert!(check_adjointness(m, 20, &mut rng).unwrap() < 1e-12);
            let c = check_coercivity(m, 20, &mut rng).unwrap();
            assert!(c.identity < 1e-12 && c.symmetry <= 1e-13);
        }
    }

    #[test]
    fn duality_on_zero_velocity_is_exact() {
        let m = MacMesh::unit(2, 4).unwrap();
        let rho = ScalarField::constant(&m, 1.0);
        let z = VelocityField::zeros(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_velocity(&m, &mut rng);
        assert_eq!(duality_residual(&m, &rho, &z, &w, 0).unwrap(), 0.0);
    }

    #[test]
    fn duality_single_face_by_hand() {
        // ρ ≡ 1, v = 1 on one interior x-face, w = 1 on a neighbouring one.
        let m = MacMesh::unit(2, 3).unwrap();
        let fs = m.faces(0);
        let (a, b) = (fs.id([1, 1, 0]), fs.id([2, 1, 0]));
        let mut v = VelocityField::zeros(&m);
        v.components[0][a] = 1.0;
        let mut w = VelocityField::zeros(&m);
        w.components[0][b] = 1.0;
        let rho = ScalarField::constant(&m, 1.0);
        // The only nonzero dual flux is through the Case1 face inside cell
        // (1,1): Φ = ½|σ|v_a = 1/6, leaving D_a and entering D_b.
        let div = div_dual(&m, &rho, &v, 0).unwrap();
        let lhs = fs.faces[b].dual_measure * div[b];
        assert!((lhs + 1.0 / 6.0).abs() < 1e-15);
        assert!(duality_residual(&m, &rho, &v, &w, 0).unwrap() < 1e-15);
    }

    #[test]
    fn kinetic_remainder_is_nonpositive_and_zero_state_is_exact() {
        let mesh = Arc::new(MacMesh::unit(2, 4).unwrap());
        let c = SchemeConfig::from_problem(mesh.clone(), Preset::Trivial.build(2).unwrap(), 1.0, 0.5);
        let s0 = initialize(&c).unwrap();
        let out = step(&s0, &c, 0.5).unwrap();
        let k = check_kinetic(&mesh, &s0, &out.state, &out.forcing, 0.5).unwrap();
        assert_eq!(k.max_residual, 0.0);
        assert_eq!(k.max_remainder, 0.0);
    }

    #[test]
    fn kinetic_identity_holds_for_a_manufactured_step() {
        let mesh = Arc::new(MacMesh::unit(2, 8).unwrap());
        let c = SchemeConfig::from_problem(mesh.clone(), Preset::RotatingPatch.build(2).unwrap(), 1.0, 0.0625);
        let s0 = initialize(&c).unwrap();
        let o1 = step(&s0, &c, 0.0625).unwrap();
        let o2 = step(&o1.state, &c, 0.0625).unwrap();
        let k = check_kinetic(&mesh, &o1.state, &o2.state, &o2.forcing, 0.0625).unwrap();
        assert!(k.max_residual <= 1e-9, "{}", k.max_residual);
        assert!(k.max_remainder <= 0.0);
    }

    /// Independent translate oracle: integrate over a fine time grid, looking
    /// up the active interval of each sample.
    fn translate_oracle(mesh: &MacMesh, traj: &Trajectory, tau: f64) -> f64 {
        let t_final = traj.final_time();
        let dt = traj.dt;
        let at = |t: f64| -> &VelocityField {
            let n = ((t / dt).ceil() as usize).clamp(1, traj.steps());
            &traj.velocity[n]
        };
        let span = t_final - tau;
        let samples = (span / dt).round() as usize * 16;
        let h = span / samples as f64;
        (0..samples)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                let (a, b) = (at(t), at(t + tau));
                let d = VelocityField {
                    components: a
                        .components
                        .iter()
                        .zip(&b.components)
                        .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x - y).collect())
                        .collect(),
                };
                h * inner_dual(mesh, &d, &d)
            })
            .sum()
    }

    #[test]
    fn translates_match_direct_quadrature() {
        let mesh = Arc::new(MacMesh::unit(2, 6).unwrap());
        let c = SchemeConfig::from_problem(mesh.clone(), Preset::Unsteady.build(2).unwrap(), 0.5, 0.05);
        let out = run(&c).unwrap();
        let dt = out.dt;
        let taus = [0.0, dt, 2.0 * dt, 4.0 * dt, 8.0 * dt];
        let rep = measure_translates(&mesh, &out.trajectory, &taus, (1.0, 2.0)).unwrap();
        assert_eq!(rep.entries[0].1, 0.0);
        for &(tau, i) in &rep.entries[1..] {
            let o = translate_oracle(&mesh, &out.trajectory, tau);
            assert!((i - o).abs() <= 1e-9 * o.max(1e-300), "{tau}: {i} vs {o}");
            assert!(i > 0.0);
        }
        assert!(rep.slope.is_finite());
        assert!(measure_translates(&mesh, &out.trajectory, &[dt, 2.0 * dt], (1.0, 2.0)).is_err());
        assert!(measure_translates(&mesh, &out.trajectory, &[dt, 1.5 * dt, 2.0 * dt], (1.0, 2.0)).is_err());
    }

    #[test]
    fn steady_trajectory_has_zero_translates() {
        let mesh = Arc::new(MacMesh::unit(2, 4).unwrap());
        let c = SchemeConfig::from_problem(mesh.clone(), Preset::Trivial.build(2).unwrap(), 1.0, 0.1);
        let out = run(&c).unwrap();
        let rep = measure_translates(&mesh, &out.trajectory, &[0.1, 0.2, 0.4], (1.0, 1.0)).unwrap();
        assert!(rep.entries.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn slope_fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| (x.ln(), 0.5 * x.ln() + 3.0)).collect();
        assert!((fit_slope(&pts) - 0.5).abs() < 1e-14);
        assert!(fit_slope(&pts[..1]).is_nan());
    }

    #[test]
    fn trivial_study_is_exact() {
        let rep = convergence_study(&StudyOptions {
            preset: Preset::Trivial,
            dim: 2,
            levels: vec![2, 4, 8],
            policy: TimestepPolicy::Proportional { factor: 0.5 },
            t_final: 0.25,
            solver: SolverOptions::default(),
            min_factor: 1.5,
        })
        .unwrap();
        for l in &rep.levels {
            assert!(l.velocity_error == 0.0 && l.density_error < 1e-15 && l.pressure_error == 0.0);
            assert!((l.regularity - 1.0).abs() < 1e-15);
        }
        assert!(!rep.monotone());
    }

    #[test]
    fn study_rejects_bad_levels() {
        let mut o = StudyOptions {
            preset: Preset::Trivial,
            dim: 2,
            levels: vec![2, 4],
            policy: TimestepPolicy::Fixed { dt: 0.1 },
            t_final: 0.2,
            solver: SolverOptions::default(),
            min_factor: 1.5,
        };
        assert!(convergence_study(&o).is_err());
        o.levels = vec![4, 4, 8];
        assert!(convergence_study(&o).is_err());
    }

    #[test]
    fn convection_ratio_degenerate_and_homogeneous() {
        let m = MacMesh::unit(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_density(&m, &mut rng, 1.0, 2.0);
        let u = project_divergence_free(&m, &random_velocity(&m, &mut rng)).unwrap();
        let v = random_velocity(&m, &mut rng);
        let w = random_velocity(&m, &mut rng);
        assert!(convection_ratio(&m, &rho, &u, &VelocityField::zeros(&m), &w).unwrap().is_none());
        let r1 = convection_ratio(&m, &rho, &u, &v, &w).unwrap().unwrap();
        let r2 = convection_ratio(&m, &rho, &u.scaled(2.0), &v, &w).unwrap().unwrap();
        assert!((r1 - r2).abs() <= 1e-13 * r1);
    }

    #[test]
    fn dual_fluxes_close_for_constant_density() {
        let m = MacMesh::unit(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = project_divergence_free(&m, &random_velocity(&m, &mut rng)).unwrap();
        let rho = ScalarField::constant(&m, 1.7);
        for i in 0..2 {
            assert!(dual_flux_closure(&m, &rho, &u, i).unwrap() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn identities_hold_on_random_graded_meshes(
            seed in any::<u64>(),
            xs in proptest::collection::vec(0.2f64..1.0, 3..6),
            ys in proptest::collection::vec(0.2f64..1.0, 3..6),
        ) {
            let axis = |w: &[f64]| {
                let mut c = vec![0.0];
                for d in w { c.push(c.last().unwrap() + d); }
                c
            };
            let (cx, cy) = (axis(&xs), axis(&ys));
            let m = MacMesh::new(&[(0.0, *cx.last().unwrap()), (0.0, *cy.last().unwrap())], &[cx, cy]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(check_duality(&m, 3, &mut rng).unwrap() < 1e-12);
            prop_assert!(check_adjointness(&m, 3, &mut rng).unwrap() < 1e-12);
            prop_assert!(check_coercivity(&m, 3, &mut rng).unwrap().identity < 1e-12);
        }
    }
}
