//! Brute-force evaluation of the discrete operators from mesh coordinates and
//! index arithmetic only. Nothing here reads the connectivity tables or
//! calls the library operators.

#![allow(dead_code)]

use macflow::{MacMesh, ScalarField, VelocityField};

pub type Idx = [usize; 3];

fn shift(k: Idx, a: usize, up: bool) -> Idx {
    let mut m = k;
    if up {
        m[a] += 1;
    } else {
        m[a] -= 1;
    }
    m
}

/// One side of a dual cell: outward mass flux, `|ε|`, `d_ε` and the face on
/// the other side (`None` at a wall).
pub struct Side {
    pub flux: f64,
    pub area: f64,
    pub dist: f64,
    pub other: Option<Idx>,
}

pub struct Brute<'a> {
    pub mesh: &'a MacMesh,
    pub dim: usize,
    pub n: Idx,
    pub h: [Vec<f64>; 3],
}

impl<'a> Brute<'a> {
    pub fn new(mesh: &'a MacMesh) -> Self {
        let dim = mesh.dim();
        let mut n = [1; 3];
        let mut h: [Vec<f64>; 3] = [vec![1.0], vec![1.0], vec![1.0]];
        for a in 0..dim {
            let c = mesh.coords(a);
            n[a] = c.len() - 1;
            h[a] = c.windows(2).map(|w| w[1] - w[0]).collect();
        }
        Self { mesh, dim, n, h }
    }

    pub fn cells(&self) -> Vec<Idx> {
        let mut out = Vec::new();
        for z in 0..self.n[2] {
            for y in 0..self.n[1] {
                for x in 0..self.n[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn faces(&self, i: usize) -> Vec<Idx> {
        let mut ext = self.n;
        ext[i] += 1;
        let mut out = Vec::new();
        for z in 0..ext[2] {
            for y in 0..ext[1] {
                for x in 0..ext[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn interior(&self, i: usize, k: Idx) -> bool {
        k[i] > 0 && k[i] < self.n[i]
    }

    pub fn interior_faces(&self, i: usize) -> Vec<Idx> {
        self.faces(i).into_iter().filter(|&k| self.interior(i, k)).collect()
    }

    pub fn area(&self, i: usize, k: Idx) -> f64 {
        (0..3).filter(|&a| a != i).map(|a| self.h[a][k[a]]).product()
    }

    pub fn cell_volume(&self, k: Idx) -> f64 {
        (0..3).map(|a| self.h[a][k[a]]).product()
    }

    pub fn dual_volume(&self, i: usize, k: Idx) -> f64 {
        self.area(i, k) * 0.5 * (self.h[i][k[i] - 1] + self.h[i][k[i]])
    }

    pub fn rho(&self, q: &ScalarField, k: Idx) -> f64 {
        q.values[self.mesh.cell_id(k)]
    }

    pub fn vel(&self, u: &VelocityField, i: usize, k: Idx) -> f64 {
        if self.interior(i, k) {
            u.components[i][self.mesh.faces(i).id(k)]
        } else {
            0.0
        }
    }

    /// `|σ| ρ_up u_σ` along `+e_j`, zero on the boundary.
    pub fn flux(&self, rho: &ScalarField, u: &VelocityField, j: usize, m: Idx) -> f64 {
        if !self.interior(j, m) {
            return 0.0;
        }
        let v = self.vel(u, j, m);
        let up = if v >= 0.0 { shift(m, j, false) } else { m };
        self.area(j, m) * v * self.rho(rho, up)
    }

    /// The `2d` sides of the dual cell of the interior face `(i, k)`.
    pub fn sides(&self, rho: &ScalarField, u: &VelocityField, i: usize, k: Idx) -> Vec<Side> {
        let mut out = Vec::new();
        let g = |j: usize, m: Idx| self.flux(rho, u, j, m);
        let lo = shift(k, i, false);
        out.push(Side {
            flux: 0.5 * (g(i, k) + g(i, shift(k, i, true))),
            area: self.area(i, k),
            dist: self.h[i][k[i]],
            other: Some(shift(k, i, true)),
        });
        out.push(Side {
            flux: -0.5 * (g(i, lo) + g(i, k)),
            area: self.area(i, k),
            dist: self.h[i][k[i] - 1],
            other: Some(lo),
        });
        for j in (0..self.dim).filter(|&j| j != i) {
            let area: f64 = 0.5
                * (self.h[i][k[i] - 1] + self.h[i][k[i]])
                * (0..3).filter(|&a| a != i && a != j).map(|a| self.h[a][k[a]]).product::<f64>();
            let up = shift(k, j, true);
            let has_up = k[j] + 1 < self.n[j];
            out.push(Side {
                flux: 0.5 * (g(j, shift(lo, j, true)) + g(j, up)),
                area,
                dist: if has_up {
                    0.5 * (self.h[j][k[j]] + self.h[j][k[j] + 1])
                } else {
                    0.5 * self.h[j][k[j]]
                },
                other: has_up.then_some(up),
            });
            let has_down = k[j] > 0;
            out.push(Side {
                flux: -0.5 * (g(j, lo) + g(j, k)),
                area,
                dist: if has_down {
                    0.5 * (self.h[j][k[j]] + self.h[j][k[j] - 1])
                } else {
                    0.5 * self.h[j][k[j]]
                },
                other: has_down.then(|| shift(k, j, false)),
            });
        }
        out
    }

    fn other_value(&self, u: &VelocityField, i: usize, other: Option<Idx>) -> f64 {
        other.map_or(0.0, |m| self.vel(u, i, m))
    }

    /// `div_{D_σ}(ρ, v)` for direction `i`, indexed by face id.
    pub fn div_dual(&self, rho: &ScalarField, v: &VelocityField, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.faces(i).len()];
        for k in self.interior_faces(i) {
            let s: f64 = self.sides(rho, v, i, k).iter().map(|s| s.flux).sum();
            out[self.mesh.faces(i).id(k)] = s / self.dual_volume(i, k);
        }
        out
    }

    /// Both sides of the duality identity for direction `i`:
    /// `Σ_σ |D_σ| div_{D_σ}(ρ,v) w_σ` and `-Σ_ε Φ_ε (w⁺ - w⁻)`, plus the
    /// sum of absolute terms of the latter.
    pub fn duality_sides(&self, rho: &ScalarField, v: &VelocityField, w: &VelocityField, i: usize) -> (f64, f64, f64) {
        let div = self.div_dual(rho, v, i);
        let mut lhs = 0.0;
        for k in self.interior_faces(i) {
            let f = self.mesh.faces(i).id(k);
            lhs += self.dual_volume(i, k) * div[f] * w.components[i][f];
        }
        // Φ oriented from σ to the far side; a dual face shared by two
        // interior faces is counted from the lower one only.
        let (mut rhs, mut scale) = (0.0, 0.0);
        for k in self.interior_faces(i) {
            for s in self.sides(rho, v, i, k) {
                let far = match s.other {
                    Some(m) if self.interior(i, m) => {
                        if (0..3).any(|a| m[a] < k[a]) {
                            continue;
                        }
                        self.vel(w, i, m)
                    }
                    _ => 0.0,
                };
                let t = -s.flux * (far - self.vel(w, i, k));
                rhs += t;
                scale += t.abs();
            }
        }
        (lhs, rhs, scale)
    }

    /// `(Δu)_σ`.
    pub fn laplacian(&self, u: &VelocityField) -> VelocityField {
        let mut out = VelocityField {
            components: (0..self.dim).map(|i| vec![0.0; self.mesh.faces(i).len()]).collect(),
        };
        let zero_rho = ScalarField {
            values: vec![0.0; self.mesh.n_cells()],
        };
        for i in 0..self.dim {
            for k in self.interior_faces(i) {
                let uk = self.vel(u, i, k);
                let s: f64 = self
                    .sides(&zero_rho, u, i, k)
                    .iter()
                    .map(|s| s.area / s.dist * (self.other_value(u, i, s.other) - uk))
                    .sum();
                out.components[i][self.mesh.faces(i).id(k)] = s / self.dual_volume(i, k);
            }
        }
        out
    }

    /// `Σ_ε |ε|/d_ε (u⁺ - u⁻)²` with zero values on walls and boundary faces.
    pub fn h1_squared(&self, u: &VelocityField) -> f64 {
        let zero_rho = ScalarField {
            values: vec![0.0; self.mesh.n_cells()],
        };
        let mut total = 0.0;
        for i in 0..self.dim {
            for k in self.interior_faces(i) {
                let uk = self.vel(u, i, k);
                for s in self.sides(&zero_rho, u, i, k) {
                    let shared = s.other.is_some_and(|m| self.interior(i, m));
                    let weight = if shared { 0.5 } else { 1.0 };
                    let d = self.other_value(u, i, s.other) - uk;
                    total += weight * s.area / s.dist * d * d;
                }
            }
        }
        total
    }

    /// `div_K u`.
    pub fn div_cells(&self, u: &VelocityField) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.n_cells()];
        for k in self.cells() {
            let mut s = 0.0;
            for i in 0..self.dim {
                let hi = shift(k, i, true);
                s += self.area(i, hi) * self.vel(u, i, hi) - self.area(i, k) * self.vel(u, i, k);
            }
            out[self.mesh.cell_id(k)] = s / self.cell_volume(k);
        }
        out
    }

    /// `(∇p)_σ = |σ|/|D_σ| (p_L - p_K)`.
    pub fn grad(&self, p: &ScalarField) -> VelocityField {
        let mut out = VelocityField {
            components: (0..self.dim).map(|i| vec![0.0; self.mesh.faces(i).len()]).collect(),
        };
        for i in 0..self.dim {
            for k in self.interior_faces(i) {
                let d = self.rho(p, k) - self.rho(p, shift(k, i, false));
                out.components[i][self.mesh.faces(i).id(k)] = self.area(i, k) / self.dual_volume(i, k) * d;
            }
        }
        out
    }

    /// Volume-weighted mean of the two half cells of each interior face.
    pub fn dual_density(&self, rho: &ScalarField) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| {
                let mut out = vec![0.0; self.mesh.faces(i).len()];
                for k in self.interior_faces(i) {
                    let (a, b) = (self.h[i][k[i] - 1], self.h[i][k[i]]);
                    let lo = self.rho(rho, shift(k, i, false));
                    let hi = self.rho(rho, k);
                    out[self.mesh.faces(i).id(k)] = (a * lo + b * hi) / (a + b);
                }
                out
            })
            .collect()
    }

    pub fn l2_squared(&self, u: &VelocityField) -> f64 {
        (0..self.dim)
            .flat_map(|i| self.interior_faces(i).into_iter().map(move |k| (i, k)))
            .map(|(i, k)| self.dual_volume(i, k) * self.vel(u, i, k).powi(2))
            .sum()
    }

    /// Largest `|(ρ_D' - ρ_D)/δt + div_D(ρ', u)|` over interior faces.
    pub fn dual_mass(&self, rho: &ScalarField, rho1: &ScalarField, u: &VelocityField, dt: f64) -> f64 {
        let (d0, d1) = (self.dual_density(rho), self.dual_density(rho1));
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            let div = self.div_dual(rho1, u, i);
            for k in self.interior_faces(i) {
                let f = self.mesh.faces(i).id(k);
                worst = worst.max(((d1[i][f] - d0[i][f]) / dt + div[f]).abs());
            }
        }
        worst
    }

    /// Largest absolute residual of the per-dual-cell kinetic energy balance
    /// of the step `(ρ, u) → (ρ', u', p')` and the largest remainder term.
    #[allow(clippy::too_many_arguments)]
    pub fn kinetic(
        &self,
        rho: &ScalarField,
        u: &VelocityField,
        rho1: &ScalarField,
        u1: &VelocityField,
        p1: &ScalarField,
        f: &VelocityField,
        dt: f64,
    ) -> (f64, f64) {
        let (d0, d1) = (self.dual_density(rho), self.dual_density(rho1));
        let lap = self.laplacian(u1);
        let gp = self.grad(p1);
        let (mut worst, mut remainder) = (0.0f64, f64::NEG_INFINITY);
        for i in 0..self.dim {
            for k in self.interior_faces(i) {
                let id = self.mesh.faces(i).id(k);
                let vol = self.dual_volume(i, k);
                let (a, b) = (self.vel(u, i, k), self.vel(u1, i, k));
                let conv: f64 = self
                    .sides(rho1, u, i, k)
                    .iter()
                    .map(|s| s.flux * b * self.other_value(u1, i, s.other))
                    .sum::<f64>()
                    / (2.0 * vol);
                let lhs = (d1[i][id] * b * b - d0[i][id] * a * a) / (2.0 * dt) + conv - lap.components[i][id] * b
                    + gp.components[i][id] * b
                    - f.components[i][id] * b;
                let rem = -d0[i][id] * (b - a) * (b - a) / (2.0 * dt);
                worst = worst.max((lhs - rem).abs());
                remainder = remainder.max(rem);
            }
        }
        (worst, remainder)
    }
}

/// Five-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss5(a: f64, b: f64) -> [(f64, f64); 5] {
    const X: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut out = [(0.0, 0.0); 5];
    for q in 0..5 {
        out[q] = (m + r * X[q], r * W[q]);
    }
    out
}

/// Least-squares slope of `y` against `x`.
pub fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}
