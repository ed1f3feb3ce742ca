//! Closed-form solutions of the continuous problem used for verification.
//!
//! Every preset's density is an exact solution of `∂ₜρ + u·∇ρ = 0` for its
//! divergence-free velocity, and the velocity vanishes on `∂Ω`. The forcing
//! is whatever makes the momentum equation hold.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{fortin_interpolate, VelocityField};
use crate::grid::MacMesh;

/// Forcing `f_i(x, t)`.
pub type Forcing = Arc<dyn Fn(usize, &[f64], f64) -> f64 + Send + Sync>;

/// An exact solution together with the derivatives needed to build its
/// forcing. `grad[i][j] = ∂_j u_i`.
pub trait Problem: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64) -> [f64; 3];
    fn velocity_dt(&self, x: &[f64], t: f64) -> [f64; 3];
    fn velocity_grad(&self, x: &[f64], t: f64) -> [[f64; 3]; 3];
    fn velocity_laplacian(&self, x: &[f64], t: f64) -> [f64; 3];
    fn density(&self, x: &[f64], t: f64) -> f64;
    fn pressure(&self, x: &[f64], t: f64) -> f64;
    fn pressure_grad(&self, x: &[f64], t: f64) -> [f64; 3];
    /// Analytic range `[ρ_min, ρ_max]` of the initial density.
    fn density_bounds(&self) -> (f64, f64);
    /// Planar stream function `ψ(x, y, t)` with `u = h(z)(∂_yψ, -∂_xψ, 0)`
    /// and `h` from [`vertical_factor`], when the velocity has that form.
    fn stream_function(&self, _x: f64, _y: f64, _t: f64) -> Option<f64> {
        None
    }
}

/// `h(z) = sin²(πz)` in 3D and 1 in 2D, with its first two derivatives.
pub fn vertical_factor(dim: usize, x: &[f64]) -> (f64, f64, f64) {
    if dim == 2 {
        return (1.0, 0.0, 0.0);
    }
    let z = x[2];
    let s = (PI * z).sin();
    (s * s, PI * (2.0 * PI * z).sin(), 2.0 * PI * PI * (2.0 * PI * z).cos())
}

fn vertical_integral(z0: f64, z1: f64) -> f64 {
    let prim = |z: f64| z / 2.0 - (2.0 * PI * z).sin() / (4.0 * PI);
    prim(z1) - prim(z0)
}

/// Face means of the exact velocity at time `t`. With a stream function they
/// are evaluated exactly, so the result is discretely divergence free to
/// roundoff; otherwise Gauss quadrature is used.
pub fn velocity_face_means(mesh: &MacMesh, problem: &dyn Problem, t: f64) -> VelocityField {
    let dim = mesh.dim();
    if problem.stream_function(0.5, 0.5, t).is_none() {
        return fortin_interpolate(mesh, |i, x| problem.velocity(x, t)[i]);
    }
    let psi = |x: f64, y: f64| problem.stream_function(x, y, t).unwrap();
    let mut u = VelocityField::zeros(mesh);
    for fs in mesh.face_sets().iter().take(2) {
        let i = fs.dir;
        for &f in &fs.interior {
            let face = &fs.faces[f];
            let k = face.index;
            let span = |a: usize| (mesh.coords(a)[k[a]], mesh.coords(a)[k[a] + 1]);
            let vertical = if dim == 3 {
                let (z0, z1) = span(2);
                vertical_integral(z0, z1)
            } else {
                1.0
            };
            let flux = if i == 0 {
                let x = mesh.coords(0)[k[0]];
                let (y0, y1) = span(1);
                psi(x, y1) - psi(x, y0)
            } else {
                let y = mesh.coords(1)[k[1]];
                let (x0, x1) = span(0);
                -(psi(x1, y) - psi(x0, y))
            };
            u.components[i][f] = flux * vertical / face.area;
        }
    }
    u
}

/// `f = ρ(∂ₜu + (u·∇)u) - Δu + ∇p`, which equals the conservative residual
/// `∂ₜ(ρu) + div(ρu⊗u) - Δu + ∇p` when `ρ` is transported by `u`.
pub fn manufactured_forcing(problem: Arc<dyn Problem>) -> Forcing {
    Arc::new(move |i, x, t| {
        let u = problem.velocity(x, t);
        let du = problem.velocity_dt(x, t);
        let g = problem.velocity_grad(x, t);
        let lap = problem.velocity_laplacian(x, t);
        let gp = problem.pressure_grad(x, t);
        let conv: f64 = (0..problem.dim()).map(|j| u[j] * g[i][j]).sum();
        problem.density(x, t) * (du[i] + conv) - lap[i] + gp[i]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Constant density at rest.
    Trivial,
    /// Steady cellular flow at unit density.
    TaylorGreen,
    /// A density bump carried by a steady compactly supported swirl.
    RotatingPatch,
    /// The same swirl with a time-periodic angular speed.
    Unsteady,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Trivial, Preset::TaylorGreen, Preset::RotatingPatch, Preset::Unsteady];

    pub fn build(self, dim: usize) -> Result<Arc<dyn Problem>> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("dimension must be 2 or 3, got {dim}")));
        }
        Ok(match self {
            Preset::Trivial => Arc::new(Trivial { dim, rho: 1.0 }),
            Preset::TaylorGreen => Arc::new(TaylorGreen { dim }),
            Preset::RotatingPatch => Arc::new(Swirl::rotating_patch(dim)),
            Preset::Unsteady => Arc::new(Swirl::unsteady(dim)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Trivial => "trivial",
            Preset::TaylorGreen => "taylor-green",
            Preset::RotatingPatch => "rotating-patch",
            Preset::Unsteady => "unsteady",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Constant density, zero velocity and pressure.
#[derive(Debug, Clone)]
pub struct Trivial {
    pub dim: usize,
    pub rho: f64,
}

impl Problem for Trivial {
    fn name(&self) -> &'static str {
        "trivial"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn velocity_dt(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn velocity_grad(&self, _: &[f64], _: f64) -> [[f64; 3]; 3] {
        [[0.0; 3]; 3]
    }
    fn velocity_laplacian(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn density(&self, _: &[f64], _: f64) -> f64 {
        self.rho
    }
    fn pressure(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn pressure_grad(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn density_bounds(&self) -> (f64, f64) {
        (self.rho, self.rho)
    }
    fn stream_function(&self, _: f64, _: f64, _: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `u = h(z) (sin²(πx) sin(2πy), -sin(2πx) sin²(πy), 0)`, `ρ = 1`, `p = 0`,
/// with `h = 1` in 2D and `sin²(πz)` in 3D.
#[derive(Debug, Clone)]
pub struct TaylorGreen {
    pub dim: usize,
}

impl TaylorGreen {
    fn planar(x: &[f64]) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]) {
        let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        let (s2x, s2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (c2x, c2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        let p2 = PI * PI;
        (
            [sx * sx * s2y, -s2x * sy * sy],
            [
                [PI * s2x * s2y, 2.0 * PI * sx * sx * c2y],
                [-2.0 * PI * c2x * sy * sy, -PI * s2x * s2y],
            ],
            [
                2.0 * p2 * c2x * s2y - 4.0 * p2 * sx * sx * s2y,
                -(2.0 * p2 * s2x * c2y - 4.0 * p2 * s2x * sy * sy),
            ],
        )
    }
}

impl Problem for TaylorGreen {
    fn name(&self) -> &'static str {
        "taylor-green"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], _: f64) -> [f64; 3] {
        let (u, _, _) = Self::planar(x);
        let (h, _, _) = vertical_factor(self.dim, x);
        [h * u[0], h * u[1], 0.0]
    }
    fn velocity_dt(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn velocity_grad(&self, x: &[f64], _: f64) -> [[f64; 3]; 3] {
        let (u, g, _) = Self::planar(x);
        let (h, dh, _) = vertical_factor(self.dim, x);
        [
            [h * g[0][0], h * g[0][1], dh * u[0]],
            [h * g[1][0], h * g[1][1], dh * u[1]],
            [0.0; 3],
        ]
    }
    fn velocity_laplacian(&self, x: &[f64], _: f64) -> [f64; 3] {
        let (u, _, l) = Self::planar(x);
        let (h, _, d2h) = vertical_factor(self.dim, x);
        [h * l[0] + d2h * u[0], h * l[1] + d2h * u[1], 0.0]
    }
    fn density(&self, _: &[f64], _: f64) -> f64 {
        1.0
    }
    fn pressure(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn pressure_grad(&self, _: &[f64], _: f64) -> [f64; 3] {
        [0.0; 3]
    }
    fn density_bounds(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
    fn stream_function(&self, x: f64, y: f64, _: f64) -> Option<f64> {
        Some((PI * x).sin().powi(2) * (PI * y).sin().powi(2) / PI)
    }
}

/// Differential rotation about the vertical axis through `(½, ½)`:
///
/// `u = a(t) g(s) h(z) (-Y, X, 0)`, `X = x - ½`, `Y = y - ½`, `s = X² + Y²`,
/// `g = (1 - s/R²)⁴` inside the disk of radius `R` and 0 outside, `h = 1` in
/// 2D and `sin²(πz)` in 3D. A particle keeps `(s, z)` and turns by
/// `g h A(t)` with `A = ∫a`, so `ρ(x, t) = ρ₀(rotation of x by -g h A(t))`.
///
/// `ρ₀ = 1 + b((x - c)/r)` is a smooth bump of unit height and
/// `p = ¼ cos(πx) cos(πy)`.
#[derive(Debug, Clone)]
pub struct Swirl {
    pub dim: usize,
    pub radius: f64,
    /// Angular speed scale `a₀`.
    pub speed: f64,
    /// Relative amplitude of the `sin(2πt)` modulation of `a`.
    pub modulation: f64,
    pub patch_center: [f64; 2],
    pub patch_radius: f64,
    pub name: &'static str,
}

impl Swirl {
    pub fn rotating_patch(dim: usize) -> Self {
        Self {
            dim,
            radius: 0.4,
            speed: PI,
            modulation: 0.0,
            patch_center: [0.5, 0.65],
            patch_radius: 0.3,
            name: "rotating-patch",
        }
    }

    pub fn unsteady(dim: usize) -> Self {
        Self {
            modulation: 0.5,
            name: "unsteady",
            ..Self::rotating_patch(dim)
        }
    }

    fn a(&self, t: f64) -> f64 {
        self.speed * (1.0 + self.modulation * (2.0 * PI * t).sin())
    }

    fn a_dt(&self, t: f64) -> f64 {
        self.speed * self.modulation * 2.0 * PI * (2.0 * PI * t).cos()
    }

    fn a_int(&self, t: f64) -> f64 {
        self.speed * (t + self.modulation * (1.0 - (2.0 * PI * t).cos()) / (2.0 * PI))
    }

    /// `g`, `g'`, `g''` as functions of `s`.
    fn profile(&self, s: f64) -> (f64, f64, f64) {
        let r2 = self.radius * self.radius;
        if s >= r2 {
            return (0.0, 0.0, 0.0);
        }
        let q = 1.0 - s / r2;
        (q.powi(4), -4.0 * q.powi(3) / r2, 12.0 * q * q / (r2 * r2))
    }

    fn initial_density(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.patch_center[0];
        let dy = y - self.patch_center[1];
        let d2 = (dx * dx + dy * dy) / (self.patch_radius * self.patch_radius);
        if d2 >= 1.0 {
            1.0
        } else {
            1.0 + (1.0 - d2).powi(3)
        }
    }
}

impl Problem for Swirl {
    fn name(&self) -> &'static str {
        self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], t: f64) -> [f64; 3] {
        let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
        let (g, _, _) = self.profile(xx * xx + yy * yy);
        let (h, _, _) = vertical_factor(self.dim, x);
        let w = self.a(t) * g * h;
        [-w * yy, w * xx, 0.0]
    }
    fn velocity_dt(&self, x: &[f64], t: f64) -> [f64; 3] {
        let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
        let (g, _, _) = self.profile(xx * xx + yy * yy);
        let (h, _, _) = vertical_factor(self.dim, x);
        let w = self.a_dt(t) * g * h;
        [-w * yy, w * xx, 0.0]
    }
    fn velocity_grad(&self, x: &[f64], t: f64) -> [[f64; 3]; 3] {
        let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
        let (g, dg, _) = self.profile(xx * xx + yy * yy);
        let (h, dh, _) = vertical_factor(self.dim, x);
        let a = self.a(t);
        [
            [-a * h * 2.0 * xx * yy * dg, -a * h * (g + 2.0 * yy * yy * dg), -a * g * yy * dh],
            [a * h * (g + 2.0 * xx * xx * dg), a * h * 2.0 * xx * yy * dg, a * g * xx * dh],
            [0.0; 3],
        ]
    }
    fn velocity_laplacian(&self, x: &[f64], t: f64) -> [f64; 3] {
        let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
        let s = xx * xx + yy * yy;
        let (g, dg, d2g) = self.profile(s);
        let (h, _, d2h) = vertical_factor(self.dim, x);
        let a = self.a(t);
        let radial = 8.0 * dg + 4.0 * s * d2g;
        [-a * (h * yy * radial + g * yy * d2h), a * (h * xx * radial + g * xx * d2h), 0.0]
    }
    fn density(&self, x: &[f64], t: f64) -> f64 {
        let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
        let (g, _, _) = self.profile(xx * xx + yy * yy);
        let (h, _, _) = vertical_factor(self.dim, x);
        let phi = g * h * self.a_int(t);
        let (s, c) = phi.sin_cos();
        self.initial_density(0.5 + c * xx + s * yy, 0.5 - s * xx + c * yy)
    }
    fn pressure(&self, x: &[f64], _: f64) -> f64 {
        0.25 * (PI * x[0]).cos() * (PI * x[1]).cos()
    }
    fn pressure_grad(&self, x: &[f64], _: f64) -> [f64; 3] {
        [
            -0.25 * PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            -0.25 * PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
            0.0,
        ]
    }
    fn density_bounds(&self) -> (f64, f64) {
        (1.0, 2.0)
    }
    fn stream_function(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        // ψ = -(a/2) ∫₀ˢ g
        let (xx, yy) = (x - 0.5, y - 0.5);
        let r2 = self.radius * self.radius;
        let q = (1.0 - (xx * xx + yy * yy) / r2).max(0.0);
        Some(-0.5 * self.a(t) * r2 / 5.0 * (1.0 - q.powi(5)))
    }
}
