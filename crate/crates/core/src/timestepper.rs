//! The time loop: transport for `ρⁿ⁺¹` from `(ρⁿ, uⁿ)`, then the Oseen solve
//! for `(uⁿ⁺¹, pⁿ⁺¹)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{cell_average, fortin_interpolate, ScalarField, Trajectory, VelocityField};
use crate::grid::MacMesh;
use crate::linsolve::{solve_oseen, solve_transport, SolveReport, SolverOptions};
use crate::operators::dual_density;
use crate::presets::{manufactured_forcing, velocity_face_means, Forcing, Problem};
use crate::verify::{step_diagnostics, DiagnosticsRecord};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
pub type FaceFieldFn = Arc<dyn Fn(&MacMesh) -> VelocityField + Send + Sync>;

#[derive(Clone)]
pub struct SchemeConfig {
    pub mesh: Arc<MacMesh>,
    pub t_final: f64,
    pub dt: f64,
    /// Declared bounds of `ρ₀`.
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho0: ScalarFn,
    pub u0: VectorFn,
    /// Face values of `u⁽⁰⁾`, overriding the quadrature of `u0` when set.
    pub u0_faces: Option<FaceFieldFn>,
    /// `None` means `f ≡ 0`.
    pub forcing: Option<Forcing>,
    pub solver: SolverOptions,
    pub diagnostics: bool,
}

impl SchemeConfig {
    /// Initial data, bounds and forcing taken from an exact solution.
    pub fn from_problem(mesh: Arc<MacMesh>, problem: Arc<dyn Problem>, t_final: f64, dt: f64) -> Self {
        let (rho_min, rho_max) = problem.density_bounds();
        let p0 = problem.clone();
        let p1 = problem.clone();
        let p2 = problem.clone();
        Self {
            mesh,
            t_final,
            dt,
            rho_min,
            rho_max,
            rho0: Arc::new(move |x| p0.density(x, 0.0)),
            u0: Arc::new(move |i, x| p1.velocity(x, 0.0)[i]),
            u0_faces: Some(Arc::new(move |m| velocity_face_means(m, p2.as_ref(), 0.0))),
            forcing: Some(manufactured_forcing(problem)),
            solver: SolverOptions::default(),
            diagnostics: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("final time must be positive, got {}", self.t_final)));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_final) {
            return Err(Error::Config(format!(
                "time step must satisfy 0 < dt <= T, got dt = {} with T = {}",
                self.dt, self.t_final
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max.is_finite()) {
            return Err(Error::Config(format!(
                "density bounds must satisfy 0 < rho_min <= rho_max, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        Ok(())
    }

    /// Number of steps and the step actually used: `δt` is reduced so that
    /// it divides `T`.
    pub fn schedule(&self) -> (usize, f64) {
        let n = (self.t_final / self.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }
}

/// `(ρⁿ, uⁿ, pⁿ)` at `t_n`, with the dual densities `ρ_{D_σ}ⁿ` cached.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    pub rho: ScalarField,
    pub u: VelocityField,
    pub p: ScalarField,
    pub rho_dual: Vec<Vec<f64>>,
}

/// Cell means of `ρ₀` and face means of `u₀`.
pub fn initialize(config: &SchemeConfig) -> Result<SchemeState> {
    config.validate()?;
    let mesh = &config.mesh;
    let rho = cell_average(mesh, |x| (config.rho0)(x));
    let u = match &config.u0_faces {
        Some(faces) => faces(mesh),
        None => fortin_interpolate(mesh, |i, x| (config.u0)(i, x)),
    };
    let slack = 1e-12 * config.rho_max;
    if let Some((cell, &value)) = rho
        .values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= config.rho_min - slack && v <= config.rho_max + slack))
    {
        return Err(Error::Precondition(format!(
            "initial density {value} in cell {cell} outside declared bounds [{}, {}]",
            config.rho_min, config.rho_max
        )));
    }
    let rho_dual = dual_density(mesh, &rho)?;
    Ok(SchemeState {
        n: 0,
        t: 0.0,
        rho,
        u,
        p: ScalarField::zeros(mesh),
        rho_dual,
    })
}

/// `f_σ` at the centroid of `D_σ` and time `t`, on interior faces.
pub fn sample_forcing(mesh: &MacMesh, forcing: Option<&Forcing>, t: f64) -> VelocityField {
    let mut out = VelocityField::zeros(mesh);
    let Some(f) = forcing else { return out };
    let dim = mesh.dim();
    for fs in mesh.face_sets() {
        for &s in &fs.interior {
            out.components[fs.dir][s] = f(fs.dir, &fs.faces[s].dual_centroid[..dim], t);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SchemeState,
    pub forcing: VelocityField,
    pub transport: SolveReport,
    pub oseen: SolveReport,
}

/// One step of length `dt`.
pub fn step(state: &SchemeState, config: &SchemeConfig, dt: f64) -> Result<StepOutcome> {
    let mesh = &config.mesh;
    let t = state.t + dt;
    let (rho, transport) = solve_transport(mesh, &state.rho, &state.u, dt, &config.solver)?;
    let forcing = sample_forcing(mesh, config.forcing.as_ref(), t);
    let (u, p, oseen) = solve_oseen(mesh, &state.rho, &rho, &state.u, &forcing, dt, &config.solver)?;
    let rho_dual = dual_density(mesh, &rho)?;
    Ok(StepOutcome {
        state: SchemeState {
            n: state.n + 1,
            t,
            rho,
            u,
            p,
            rho_dual,
        },
        forcing,
        transport,
        oseen,
    })
}

#[derive(Debug)]
pub struct StepFailure {
    /// Index of the step that failed (1-based: the step producing `t_n`).
    pub step: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub diagnostics: DiagnosticsRecord,
    pub requested_dt: f64,
    pub dt: f64,
    pub steps: usize,
    pub final_state: SchemeState,
    /// Set when a solve failed; the trajectory then holds the completed steps.
    pub failure: Option<StepFailure>,
}

impl RunOutput {
    pub fn dt_adjusted(&self) -> bool {
        self.dt != self.requested_dt
    }
}

pub fn run(config: &SchemeConfig) -> Result<RunOutput> {
    let (steps, dt) = config.schedule();
    let mesh = &config.mesh;
    let mut state = initialize(config)?;
    let mut trajectory = Trajectory::new(dt);
    trajectory.push(0.0, state.rho.clone(), state.u.clone(), state.p.clone());
    let mut diagnostics = DiagnosticsRecord::new(mesh, &state, dt, (config.rho_min, config.rho_max), config.forcing.is_none());
    let mut failure = None;
    for n in 0..steps {
        match step(&state, config, dt) {
            Ok(out) => {
                let mut next = out.state;
                // Keep the time grid exactly uniform.
                next.t = (n + 1) as f64 * dt;
                if config.diagnostics {
                    let d = step_diagnostics(mesh, &state, &next, &out.forcing, dt, &out.transport, &out.oseen, &diagnostics)?;
                    diagnostics.push(d);
                }
                trajectory.push(next.t, next.rho.clone(), next.u.clone(), next.p.clone());
                state = next;
            }
            Err(error) => {
                failure = Some(StepFailure { step: n + 1, error });
                break;
            }
        }
    }
    Ok(RunOutput {
        trajectory,
        diagnostics,
        requested_dt: config.dt,
        dt,
        steps,
        final_state: state,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::norm_l2_cells;
    use crate::operators::div_velocity;
    use crate::presets::Preset;
    use crate::verify::{check_dual_mass, momentum_residual};

    fn config(preset: Preset, n: usize, t: f64, dt: f64) -> SchemeConfig {
        let mesh = Arc::new(MacMesh::unit(2, n).unwrap());
        SchemeConfig::from_problem(mesh, preset.build(2).unwrap(), t, dt)
    }

    #[test]
    fn trivial_data_is_a_fixed_point() {
        let c = config(Preset::Trivial, 4, 4.0 * 0.1, 0.1);
        let out = run(&c).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.trajectory.len(), 5);
        for k in 0..5 {
            assert!(out.trajectory.density[k].values.iter().all(|&v| v == 1.0));
            assert_eq!(out.trajectory.velocity[k].max_abs(), 0.0);
        }
        assert!((out.trajectory.final_time() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn initialization_examples() {
        let mut c = config(Preset::Trivial, 4, 1.0, 0.1);
        c.u0_faces = None;
        c.rho0 = Arc::new(|x| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin());
        c.rho_min = 0.5;
        c.rho_max = 1.5;
        let s = initialize(&c).unwrap();
        assert!(s.rho.min() > 0.5 && s.rho.max() < 1.5);
        c.rho_max = 1.1;
        assert!(matches!(initialize(&c), Err(Error::Precondition(_))));
        let c = config(Preset::TaylorGreen, 6, 1.0, 0.1);
        let s = initialize(&c).unwrap();
        let d = div_velocity(&c.mesh, &s.u).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn schedule_divides_final_time() {
        let c = config(Preset::Trivial, 2, 1.0, 0.3);
        let (n, dt) = c.schedule();
        assert_eq!(n, 4);
        assert_eq!(dt, 0.25);
        let c = config(Preset::Trivial, 2, 1.0, 0.25);
        assert_eq!(c.schedule(), (4, 0.25));
        let out = run(&config(Preset::Trivial, 2, 1.0, 0.3)).unwrap();
        assert!(out.dt_adjusted());
        let bad = config(Preset::Trivial, 2, 0.1, 0.2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manufactured_step_satisfies_discrete_equations() {
        let c = config(Preset::RotatingPatch, 8, 0.25, 0.125);
        let s0 = initialize(&c).unwrap();
        let o1 = step(&s0, &c, 0.125).unwrap();
        let r = momentum_residual(&c.mesh, &s0, &o1.state, &o1.forcing, 0.125).unwrap();
        assert!(r <= 1e-10, "momentum residual {r}");
        let o2 = step(&o1.state, &c, 0.125).unwrap();
        let m = check_dual_mass(&c.mesh, &o1.state.rho, &o2.state.rho, &o1.state.u, 0.125).unwrap();
        assert!(m <= 1e-11, "dual mass residual {m}");
        assert!(norm_l2_cells(&c.mesh, &o2.state.rho) <= norm_l2_cells(&c.mesh, &o1.state.rho));
    }

    #[test]
    fn unforced_energy_does_not_increase() {
        let mut c = config(Preset::RotatingPatch, 8, 0.5, 0.05);
        c.forcing = None;
        let out = run(&c).unwrap();
        assert!(out.failure.is_none());
        assert!(out.diagnostics.energy_nonincreasing(1e-13));
        let e: Vec<f64> = out.diagnostics.steps.iter().map(|s| s.kinetic_energy).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        assert!(e.last().unwrap() < &out.diagnostics.initial_energy);
    }

    #[test]
    fn accumulators_match_direct_summation() {
        let c = config(Preset::Unsteady, 8, 0.3, 0.1);
        let out = run(&c).unwrap();
        let dt = out.dt;
        let mesh = &c.mesh;
        let l2h1: f64 = out.trajectory.velocity[1..]
            .iter()
            .map(|u| dt * crate::fields::norm_h1(mesh, u).powi(2))
            .sum::<f64>()
            .sqrt();
        let linf = out
            .trajectory
            .velocity
            .iter()
            .map(|u| crate::fields::norm_lp_dual(mesh, u, 2.0).unwrap())
            .fold(0.0, f64::max);
        assert!((out.diagnostics.l2_h1() - l2h1).abs() <= 1e-14 * l2h1);
        assert!((out.diagnostics.linf_l2() - linf).abs() <= 1e-14 * linf);
        assert!(l2h1.is_finite() && l2h1 > 0.0);
    }
}
