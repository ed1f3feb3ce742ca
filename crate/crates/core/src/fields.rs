//! Discrete unknowns, interpolation of initial data and the norms used by
//! the estimates.

use crate::error::{check_len, Error, Result};
use crate::grid::MacMesh;

/// Piecewise-constant function on the primal cells (density or pressure).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

/// Normal velocities on the faces, one array per direction indexed like
/// [`crate::grid::FaceSet::faces`]. Boundary faces hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub components: Vec<Vec<f64>>,
}

impl ScalarField {
    pub fn zeros(mesh: &MacMesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &MacMesh, value: f64) -> Self {
        Self {
            values: vec![value; mesh.n_cells()],
        }
    }

    pub fn check(&self, mesh: &MacMesh) -> Result<()> {
        check_len("scalar field", self.values.len(), mesh.n_cells())
    }

    /// `Σ_K |K| q_K / |Ω|`
    pub fn mean(&self, mesh: &MacMesh) -> f64 {
        integral_cells(mesh, &self.values) / mesh.domain_volume()
    }

    /// Projects onto `L_{M,0}`.
    pub fn remove_mean(&mut self, mesh: &MacMesh) -> f64 {
        let m = self.mean(mesh);
        self.values.iter_mut().for_each(|v| *v -= m);
        m
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl VelocityField {
    pub fn zeros(mesh: &MacMesh) -> Self {
        Self {
            components: mesh.face_sets().iter().map(|fs| vec![0.0; fs.len()]).collect(),
        }
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    /// Checks the shape and that boundary faces carry zero.
    pub fn check(&self, mesh: &MacMesh) -> Result<()> {
        check_len("velocity directions", self.components.len(), mesh.dim())?;
        for (fs, c) in mesh.face_sets().iter().zip(&self.components) {
            check_len("velocity component", c.len(), fs.len())?;
            for (f, face) in fs.faces.iter().enumerate() {
                if !face.is_interior() && c[f] != 0.0 {
                    return Err(Error::Precondition(format!(
                        "boundary face {f} of direction {} carries velocity {}",
                        fs.dir, c[f]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scatters a vector of interior unknowns (directions concatenated).
    pub fn from_unknowns(mesh: &MacMesh, x: &[f64]) -> Self {
        let mut u = Self::zeros(mesh);
        let mut offset = 0;
        for (fs, c) in mesh.face_sets().iter().zip(&mut u.components) {
            for (k, &f) in fs.interior.iter().enumerate() {
                c[f] = x[offset + k];
            }
            offset += fs.interior.len();
        }
        u
    }

    pub fn to_unknowns(&self, mesh: &MacMesh) -> Vec<f64> {
        mesh.face_sets()
            .iter()
            .zip(&self.components)
            .flat_map(|(fs, c)| fs.interior.iter().map(move |&f| c[f]))
            .collect()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| c.iter().map(|v| a * v).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// An ordered sequence of discrete states on a uniform partition of `(0, T)`.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub density: Vec<ScalarField>,
    pub velocity: Vec<VelocityField>,
    pub pressure: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, rho: ScalarField, u: VelocityField, p: ScalarField) {
        self.times.push(t);
        self.density.push(rho);
        self.velocity.push(u);
        self.pressure.push(p);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of completed steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

// Three-point Gauss–Legendre rule on [-1, 1].
const GAUSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Mean over the box `∏[lo_a, hi_a]` of the axes listed in `axes`, the
/// remaining coordinates fixed to `base`.
fn box_mean(axes: &[(usize, f64, f64)], base: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut x = base.to_vec();
    let n = axes.len();
    let mut total = 0.0;
    for flat in 0..3usize.pow(n as u32) {
        let mut w = 1.0;
        let mut code = flat;
        for &(a, lo, hi) in axes {
            let q = code % 3;
            code /= 3;
            x[a] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * GAUSS_NODES[q];
            w *= 0.5 * GAUSS_WEIGHTS[q];
        }
        total += w * f(&x);
    }
    total
}

/// Fortin interpolation: face means of each velocity component, with the
/// boundary faces set to zero.
pub fn fortin_interpolate<F>(mesh: &MacMesh, u0: F) -> VelocityField
where
    F: Fn(usize, &[f64]) -> f64,
{
    let dim = mesh.dim();
    let mut u = VelocityField::zeros(mesh);
    for (i, fs) in mesh.face_sets().iter().enumerate() {
        for &f in &fs.interior {
            let face = &fs.faces[f];
            let axes: Vec<(usize, f64, f64)> = (0..dim)
                .filter(|&a| a != i)
                .map(|a| {
                    let k = face.index[a];
                    (a, mesh.coords(a)[k], mesh.coords(a)[k + 1])
                })
                .collect();
            u.components[i][f] = box_mean(&axes, &face.center[..dim], &mut |x| u0(i, x));
        }
    }
    u
}

/// Cell means `(1/|K|) ∫_K q`.
pub fn cell_average<F>(mesh: &MacMesh, q: F) -> ScalarField
where
    F: Fn(&[f64]) -> f64,
{
    let dim = mesh.dim();
    let values = (0..mesh.n_cells())
        .map(|c| {
            let k = mesh.cell_index(c);
            let axes: Vec<(usize, f64, f64)> = (0..dim)
                .map(|a| (a, mesh.coords(a)[k[a]], mesh.coords(a)[k[a] + 1]))
                .collect();
            box_mean(&axes, mesh.cell_center(c), &mut |x| q(x))
        })
        .collect();
    ScalarField { values }
}

pub(crate) fn integral_cells(mesh: &MacMesh, q: &[f64]) -> f64 {
    mesh.cell_volumes().iter().zip(q).map(|(v, q)| v * q).sum()
}

/// `‖q‖_{L²(Ω)}` of a cell field.
pub fn norm_l2_cells(mesh: &MacMesh, q: &ScalarField) -> f64 {
    mesh.cell_volumes()
        .iter()
        .zip(&q.values)
        .map(|(v, q)| v * q * q)
        .sum::<f64>()
        .sqrt()
}

/// `Σ_i Σ_σ |D_σ| u_σ v_σ`, the L² inner product on the dual partitions.
pub fn inner_dual(mesh: &MacMesh, u: &VelocityField, v: &VelocityField) -> f64 {
    mesh.face_sets()
        .iter()
        .enumerate()
        .map(|(i, fs)| {
            fs.faces
                .iter()
                .enumerate()
                .map(|(f, face)| face.dual_measure * u.components[i][f] * v.components[i][f])
                .sum::<f64>()
        })
        .sum()
}

/// The discrete H¹ seminorm `‖u‖_{1,ε,0}`: the quadratic form of the MAC
/// Laplacian, `Σ_i Σ_ε |ε|/d_ε (u_σ' - u_σ)²` with zero wall values.
pub fn norm_h1(mesh: &MacMesh, u: &VelocityField) -> f64 {
    mesh.face_sets()
        .iter()
        .enumerate()
        .map(|(i, fs)| {
            let c = &u.components[i];
            fs.dual_faces
                .iter()
                .map(|df| {
                    let a = df.minus.face().map_or(0.0, |f| c[f]);
                    let b = df.plus.face().map_or(0.0, |f| c[f]);
                    df.measure / df.dist * (b - a) * (b - a)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Lebesgue exponents used by the estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(u32),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Exponent::Infinity)
        } else if [2.0, 4.0, 6.0].contains(&p) {
            Ok(Exponent::Finite(p as u32))
        } else {
            Err(Error::UnsupportedExponent(p.to_string()))
        }
    }
}

/// `‖u‖_{Lᵖ}` of a velocity field, each component constant on its dual
/// cells. For finite `p` the components are combined as
/// `(Σ_i ‖u_i‖ᵖ_{Lᵖ})^{1/p}`, which is the Euclidean L² norm for `p = 2`.
pub fn norm_lp_dual(mesh: &MacMesh, u: &VelocityField, p: f64) -> Result<f64> {
    let exp = Exponent::new(p)?;
    Ok(match exp {
        Exponent::Infinity => u.max_abs(),
        Exponent::Finite(p) => {
            let s: f64 = mesh
                .face_sets()
                .iter()
                .enumerate()
                .map(|(i, fs)| {
                    fs.faces
                        .iter()
                        .enumerate()
                        .map(|(f, face)| face.dual_measure * u.components[i][f].abs().powi(p as i32))
                        .sum::<f64>()
                })
                .sum();
            s.powf(1.0 / p as f64)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{div_velocity, laplacian_apply};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_velocity(mesh: &MacMesh, rng: &mut ChaCha8Rng) -> VelocityField {
        let n = mesh.n_velocity_unknowns();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        VelocityField::from_unknowns(mesh, &x)
    }

    #[test]
    fn fortin_reproduces_constants() {
        let m = MacMesh::unit(2, 4).unwrap();
        let u = fortin_interpolate(&m, |i, _| if i == 0 { 2.5 } else { 0.0 });
        for (f, face) in m.faces(0).faces.iter().enumerate() {
            let expect = if face.is_interior() { 2.5 } else { 0.0 };
            assert_eq!(u.components[0][f], expect);
        }
        assert!(u.components[1].iter().all(|&v| v == 0.0));
        u.check(&m).unwrap();
    }

    #[test]
    fn fortin_of_linear_divergence_free_field() {
        // (x, -y) has a nonzero trace; exterior faces are still zeroed, so only
        // cells away from the boundary are divergence free.
        let m = MacMesh::new(
            &[(0.0, 1.0), (0.0, 1.0)],
            &[vec![0.0, 0.2, 0.45, 0.7, 1.0], vec![0.0, 0.3, 0.5, 0.8, 1.0]],
        )
        .unwrap();
        let u = fortin_interpolate(&m, |i, x| if i == 0 { x[0] } else { -x[1] });
        let d = div_velocity(&m, &u).unwrap();
        for c in 0..m.n_cells() {
            let k = m.cell_index(c);
            if (1..3).contains(&k[0]) && (1..3).contains(&k[1]) {
                assert!(d.values[c].abs() < 1e-14, "cell {c}: {}", d.values[c]);
            }
        }
        // Derived from ψ = x²(1-x)²y²(1-y)², so it vanishes on the boundary.
        let psi_u = |x: &[f64]| x[0] * x[0] * (1.0 - x[0]).powi(2) * (2.0 * x[1] - 6.0 * x[1] * x[1] + 4.0 * x[1].powi(3));
        let psi_v = |x: &[f64]| -(2.0 * x[0] - 6.0 * x[0] * x[0] + 4.0 * x[0].powi(3)) * x[1] * x[1] * (1.0 - x[1]).powi(2);
        let u = fortin_interpolate(&m, |i, x| if i == 0 { psi_u(x) } else { psi_v(x) });
        let d = div_velocity(&m, &u).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn cell_average_examples() {
        let m = MacMesh::uniform(&[(0.0, 2.0), (0.0, 1.0)], &[2, 1]).unwrap();
        assert!(cell_average(&m, |_| 3.0).values.iter().all(|v| (v - 3.0).abs() < 1e-15));
        let q = cell_average(&m, |x| x[0]);
        assert!((q.values[0] - 0.5).abs() < 1e-15 && (q.values[1] - 1.5).abs() < 1e-15);
        let m = MacMesh::unit(3, 3).unwrap();
        let q = cell_average(&m, |x| 1.5 + 0.5 * (7.0 * x[0]).sin() * (3.0 * x[2]).cos());
        assert!(q.min() >= 1.0 && q.max() <= 2.0);
    }

    #[test]
    fn h1_norm_matches_laplacian_form() {
        let m = MacMesh::unit(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_velocity(&m, &mut rng);
        let lap = laplacian_apply(&m, &u).unwrap();
        let form = -inner_dual(&m, &lap, &u);
        let n = norm_h1(&m, &u);
        assert!((n * n - form).abs() <= 1e-12 * form);
        assert_eq!(norm_h1(&m, &VelocityField::zeros(&m)), 0.0);
        let n2 = norm_h1(&m, &u.scaled(2.0));
        assert!((n2 - 2.0 * n).abs() <= 1e-13 * n);
    }

    #[test]
    fn lp_norms() {
        let m = MacMesh::unit(2, 3).unwrap();
        let ones = fortin_interpolate(&m, |_, _| 1.0);
        let interior_measure: f64 = m
            .face_sets()
            .iter()
            .flat_map(|fs| fs.interior.iter().map(move |&f| fs.faces[f].dual_measure))
            .sum();
        let l2 = norm_lp_dual(&m, &ones, 2.0).unwrap();
        assert!((l2 - interior_measure.sqrt()).abs() < 1e-14);
        let mut u = VelocityField::zeros(&m);
        let f = m.faces(1).interior[2];
        u.components[1][f] = -7.0;
        assert_eq!(norm_lp_dual(&m, &u, f64::INFINITY).unwrap(), 7.0);
        assert!(matches!(norm_lp_dual(&m, &u, 3.0), Err(Error::UnsupportedExponent(_))));
        assert!(norm_lp_dual(&m, &u, 6.0).unwrap() > 0.0);
    }

    #[test]
    fn norms_are_seminorms_on_random_fields() {
        let m = MacMesh::unit(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = random_velocity(&m, &mut rng);
            let v = random_velocity(&m, &mut rng);
            let mut w = u.clone();
            for (a, b) in w.components.iter_mut().zip(&v.components) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            for p in [2.0, 4.0, 6.0, f64::INFINITY] {
                let (nu, nv, nw) = (
                    norm_lp_dual(&m, &u, p).unwrap(),
                    norm_lp_dual(&m, &v, p).unwrap(),
                    norm_lp_dual(&m, &w, p).unwrap(),
                );
                assert!(nw <= (nu + nv) * (1.0 + 1e-12));
                let scaled = norm_lp_dual(&m, &u.scaled(-3.0), p).unwrap();
                assert!((scaled - 3.0 * nu).abs() <= 1e-12 * nu);
            }
            assert!(norm_h1(&m, &w) <= (norm_h1(&m, &u) + norm_h1(&m, &v)) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cell_average_is_linf_contraction() {
        let m = MacMesh::unit(2, 5).unwrap();
        let q = cell_average(&m, |x| (9.0 * x[0]).sin() * (4.0 * x[1]).cos());
        assert!(q.values.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn mean_removal() {
        let m = MacMesh::new(&[(0.0, 1.0), (0.0, 1.0)], &[vec![0.0, 0.3, 1.0], vec![0.0, 0.6, 1.0]]).unwrap();
        let mut q = ScalarField {
            values: vec![1.0, 2.0, 3.0, 4.0],
        };
        q.remove_mean(&m);
        assert!(integral_cells(&m, &q.values).abs() < 1e-15);
    }
}
