//! Discrete spatial operators on the MAC mesh.
//!
//! Sign conventions: a primal face `σ = K|L` of direction `i` has `K` below
//! and `L` above, so `u_{K,σ} = u_σ` and `u_{L,σ} = -u_σ`. Primal mass fluxes
//! are stored once per face along `+e_i` (`G_σ = |σ| ρ_σ u_σ`, hence
//! `F_{K,σ} = G_σ`, `F_{L,σ} = -G_σ`). Dual fluxes `Φ_ε` are stored along
//! `+e_j` for a dual face normal to `e_j`, so `F_{σ,ε} = ±Φ_ε` with the sign
//! recorded in [`crate::grid::FaceSet::incident`].

use crate::error::{check_len, Result};
use crate::fields::{ScalarField, VelocityField};
use crate::grid::{DualCase, DualSide, MacMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Primal and dual mass fluxes for a pair `(ρ, u)`.
#[derive(Debug, Clone)]
pub struct MassFluxSet {
    /// `G_σ` per direction and face, oriented along `+e_i`.
    pub primal: Vec<Vec<f64>>,
    /// `Φ_ε` per velocity direction and dual face, oriented along `+e_axis`.
    pub dual: Vec<Vec<f64>>,
}

impl MassFluxSet {
    /// `F_{K,σ}`, the flux through `σ` outward of `cell`.
    pub fn outward(&self, mesh: &MacMesh, dir: usize, face: usize, cell: usize) -> f64 {
        let f = &mesh.faces(dir).faces[face];
        if f.lower == Some(cell) {
            self.primal[dir][face]
        } else {
            debug_assert_eq!(f.upper, Some(cell));
            -self.primal[dir][face]
        }
    }

    /// `F_{σ,ε}`, the dual flux outward of `D_σ`.
    pub fn dual_outward(&self, dir: usize, dual_face: usize, sign: f64) -> f64 {
        sign * self.dual[dir][dual_face]
    }
}

/// A degree of freedom addressed by an operator matrix row or column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Velocity { dir: usize, face: usize },
    Cell(usize),
}

/// An assembled operator together with the meaning of its rows and columns.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: CsrMatrix,
    pub rows: Vec<Dof>,
    pub cols: Vec<Dof>,
}

pub fn velocity_dofs(mesh: &MacMesh) -> Vec<Dof> {
    mesh.face_sets()
        .iter()
        .flat_map(|fs| {
            fs.interior
                .iter()
                .map(move |&face| Dof::Velocity { dir: fs.dir, face })
        })
        .collect()
}

pub fn cell_dofs(mesh: &MacMesh) -> Vec<Dof> {
    (0..mesh.n_cells()).map(Dof::Cell).collect()
}

/// Offsets of each direction's block in the concatenated velocity unknowns.
pub(crate) fn velocity_offsets(mesh: &MacMesh) -> Vec<usize> {
    let mut off = vec![0];
    for fs in mesh.face_sets() {
        off.push(off.last().unwrap() + fs.interior.len());
    }
    off
}

fn check_pair(mesh: &MacMesh, rho: &ScalarField, u: &VelocityField) -> Result<()> {
    rho.check(mesh)?;
    check_len("velocity directions", u.components.len(), mesh.dim())?;
    for (fs, c) in mesh.face_sets().iter().zip(&u.components) {
        check_len("velocity component", c.len(), fs.len())?;
    }
    Ok(())
}

/// Upwind density `ρ_σ` on every face: the density of the cell the flow
/// leaves, `ρ_K` when `u_{K,σ} ≥ 0`.
pub fn upwind_density(mesh: &MacMesh, rho: &ScalarField, u: &VelocityField) -> Result<Vec<Vec<f64>>> {
    check_pair(mesh, rho, u)?;
    Ok(mesh
        .face_sets()
        .iter()
        .map(|fs| {
            fs.faces
                .iter()
                .enumerate()
                .map(|(f, face)| match (face.lower, face.upper) {
                    (Some(k), Some(l)) => {
                        if u.components[fs.dir][f] >= 0.0 {
                            rho.values[k]
                        } else {
                            rho.values[l]
                        }
                    }
                    (Some(k), None) | (None, Some(k)) => rho.values[k],
                    (None, None) => unreachable!("face without cells"),
                })
                .collect()
        })
        .collect())
}

/// Dual fluxes of the dual mesh of direction `i` from the primal fluxes.
///
/// Case1 (`ε` inside `K`, between its lower face `σ` and upper face `σ'`):
/// `½(F_{K,σ} n_{D_σ,ε}·n_{K,σ} + F_{K,σ'} n_{D_σ,ε}·n_{K,σ'}) = ½(G_σ + G_σ')`.
/// Case2 (`ε` made of halves of `τ ∈ E(K)`, `τ' ∈ E(L)`):
/// `½(F_{K,τ} + F_{L,τ'}) = ½(G_τ + G_τ')` along `+e_axis`.
pub fn dual_flux(mesh: &MacMesh, primal: &[Vec<f64>], i: usize) -> Vec<f64> {
    mesh.faces(i)
        .dual_faces
        .iter()
        .map(|df| match df.case {
            DualCase::Case1 => {
                let (a, b) = (df.minus.face().unwrap(), df.plus.face().unwrap());
                0.5 * (primal[i][a] + primal[i][b])
            }
            DualCase::Case2 => {
                let [t, tp] = df.tangent_faces.unwrap();
                0.5 * (primal[df.axis][t] + primal[df.axis][tp])
            }
        })
        .collect()
}

/// Upwind primal fluxes `F_{K,σ} = |σ| ρ_σ u_{K,σ}` and the derived dual fluxes.
pub fn upwind_flux(mesh: &MacMesh, rho: &ScalarField, u: &VelocityField) -> Result<MassFluxSet> {
    let rho_face = upwind_density(mesh, rho, u)?;
    let primal: Vec<Vec<f64>> = mesh
        .face_sets()
        .iter()
        .map(|fs| {
            fs.faces
                .iter()
                .enumerate()
                .map(|(f, face)| face.area * rho_face[fs.dir][f] * u.components[fs.dir][f])
                .collect()
        })
        .collect();
    let dual = (0..mesh.dim()).map(|i| dual_flux(mesh, &primal, i)).collect();
    Ok(MassFluxSet { primal, dual })
}

/// Upwind divergence `div_M(ρu)_K = (1/|K|) Σ_σ F_{K,σ}`.
pub fn div_primal(mesh: &MacMesh, rho: &ScalarField, u: &VelocityField) -> Result<ScalarField> {
    let fluxes = upwind_flux(mesh, rho, u)?;
    Ok(primal_flux_divergence(mesh, &fluxes.primal))
}

pub(crate) fn primal_flux_divergence(mesh: &MacMesh, primal: &[Vec<f64>]) -> ScalarField {
    let mut div = vec![0.0; mesh.n_cells()];
    for fs in mesh.face_sets() {
        for (f, face) in fs.faces.iter().enumerate() {
            let g = primal[fs.dir][f];
            if let Some(k) = face.lower {
                div[k] += g;
            }
            if let Some(l) = face.upper {
                div[l] -= g;
            }
        }
    }
    for (d, v) in div.iter_mut().zip(mesh.cell_volumes()) {
        *d /= v;
    }
    ScalarField { values: div }
}

/// `(div u)_K = div_M(1 × u)_K`.
pub fn div_velocity(mesh: &MacMesh, u: &VelocityField) -> Result<ScalarField> {
    div_primal(mesh, &ScalarField::constant(mesh, 1.0), u)
}

/// Pressure gradient, the transpose of the divergence:
/// `(∇p)_σ = |σ|/|D_σ| (p_L - p_K)` on interior faces, zero on the boundary.
pub fn grad_pressure(mesh: &MacMesh, p: &ScalarField) -> Result<VelocityField> {
    p.check(mesh)?;
    let mut g = VelocityField::zeros(mesh);
    for fs in mesh.face_sets() {
        for &f in &fs.interior {
            let face = &fs.faces[f];
            let (k, l) = (face.lower.unwrap(), face.upper.unwrap());
            g.components[fs.dir][f] = face.area / face.dual_measure * (p.values[l] - p.values[k]);
        }
    }
    Ok(g)
}

/// MAC Laplacian: `|D_σ| (Δu)_σ = Σ_ε |ε|/d_ε (u_σ' - u_σ)` with the wall
/// value zero on dual faces lying on the boundary.
pub fn laplacian_apply(mesh: &MacMesh, u: &VelocityField) -> Result<VelocityField> {
    check_pair(mesh, &ScalarField::zeros(mesh), u)?;
    let mut out = VelocityField::zeros(mesh);
    for fs in mesh.face_sets() {
        let c = &u.components[fs.dir];
        for &f in &fs.interior {
            let mut acc = 0.0;
            for (df, _, other) in fs.neighbours(f) {
                let w = other.face().map_or(0.0, |g| c[g]);
                acc += df.measure / df.dist * (w - c[f]);
            }
            out.components[fs.dir][f] = acc / fs.faces[f].dual_measure;
        }
    }
    Ok(out)
}

/// Stiffness matrix of the Laplacian on the interior velocity unknowns:
/// row `σ` holds `-|D_σ| (Δu)_σ`. Symmetric positive definite.
pub fn laplacian_matrix(mesh: &MacMesh) -> OperatorMatrix {
    let n = mesh.n_velocity_unknowns();
    let off = velocity_offsets(mesh);
    let mut b = TripletBuilder::new(n, n);
    for fs in mesh.face_sets() {
        for &f in &fs.interior {
            let row = off[fs.dir] + fs.unknown(f).unwrap();
            push_laplacian_row(&mut b, fs, f, row, off[fs.dir]);
        }
    }
    OperatorMatrix {
        matrix: b.build(),
        rows: velocity_dofs(mesh),
        cols: velocity_dofs(mesh),
    }
}

pub(crate) fn push_laplacian_row(
    b: &mut TripletBuilder,
    fs: &crate::grid::FaceSet,
    face: usize,
    row: usize,
    offset: usize,
) {
    for (df, _, other) in fs.neighbours(face) {
        let w = df.measure / df.dist;
        b.push(row, row, w);
        if let DualSide::Face(g) = other {
            if let Some(col) = fs.unknown(g) {
                b.push(row, offset + col, -w);
            }
        }
    }
}

/// Volume-integrated divergence `B` (cells × velocity unknowns):
/// `(B u)_K = -Σ_σ |σ| u_{K,σ} = -|K| (div u)_K`.
pub fn divergence_matrix(mesh: &MacMesh) -> OperatorMatrix {
    let off = velocity_offsets(mesh);
    let mut b = TripletBuilder::new(mesh.n_cells(), mesh.n_velocity_unknowns());
    for fs in mesh.face_sets() {
        for &f in &fs.interior {
            let face = &fs.faces[f];
            let col = off[fs.dir] + fs.unknown(f).unwrap();
            b.push(face.lower.unwrap(), col, -face.area);
            b.push(face.upper.unwrap(), col, face.area);
        }
    }
    OperatorMatrix {
        matrix: b.build(),
        rows: cell_dofs(mesh),
        cols: velocity_dofs(mesh),
    }
}

/// Volume-integrated gradient `Bᵀ`: row `σ` holds `|D_σ| (∇p)_σ`.
pub fn gradient_matrix(mesh: &MacMesh) -> OperatorMatrix {
    let off = velocity_offsets(mesh);
    let mut b = TripletBuilder::new(mesh.n_velocity_unknowns(), mesh.n_cells());
    for fs in mesh.face_sets() {
        for &f in &fs.interior {
            let face = &fs.faces[f];
            let row = off[fs.dir] + fs.unknown(f).unwrap();
            b.push(row, face.lower.unwrap(), -face.area);
            b.push(row, face.upper.unwrap(), face.area);
        }
    }
    OperatorMatrix {
        matrix: b.build(),
        rows: velocity_dofs(mesh),
        cols: cell_dofs(mesh),
    }
}

/// Dual-cell density `|D_σ| ρ_{D_σ} = |D_{K,σ}| ρ_K + |D_{L,σ}| ρ_L`, per
/// direction and face (a boundary half-cell takes its cell's density).
pub fn dual_density(mesh: &MacMesh, rho: &ScalarField) -> Result<Vec<Vec<f64>>> {
    rho.check(mesh)?;
    Ok(mesh
        .face_sets()
        .iter()
        .map(|fs| {
            fs.faces
                .iter()
                .map(|face| {
                    let a = face.lower.map_or(0.0, |k| face.half_lower * rho.values[k]);
                    let b = face.upper.map_or(0.0, |l| face.half_upper * rho.values[l]);
                    (a + b) / face.dual_measure
                })
                .collect()
        })
        .collect())
}

/// `div_{D_σ}(ρ, v) = (1/|D_σ|) Σ_ε F_{σ,ε}` from precomputed fluxes; zero on
/// boundary faces.
pub fn dual_flux_divergence(mesh: &MacMesh, fluxes: &MassFluxSet, i: usize) -> Vec<f64> {
    let fs = mesh.faces(i);
    let mut out = vec![0.0; fs.len()];
    for &f in &fs.interior {
        let s: f64 = fs.incident[f]
            .iter()
            .map(|&(e, sign)| fluxes.dual_outward(i, e, sign))
            .sum();
        out[f] = s / fs.faces[f].dual_measure;
    }
    out
}

/// Dual divergence `div_{D_σ}(ρ, v)` for direction `i`.
pub fn div_dual(mesh: &MacMesh, rho: &ScalarField, v: &VelocityField, i: usize) -> Result<Vec<f64>> {
    let fluxes = upwind_flux(mesh, rho, v)?;
    Ok(dual_flux_divergence(mesh, &fluxes, i))
}

/// Convection operator from precomputed fluxes:
/// `(C^{(i)} v)_σ = (1/|D_σ|) Σ_ε F_{σ,ε} (v_σ + v_σ')/2`.
pub fn convection_with_fluxes(mesh: &MacMesh, fluxes: &MassFluxSet, v: &VelocityField) -> VelocityField {
    let mut out = VelocityField::zeros(mesh);
    for fs in mesh.face_sets() {
        let i = fs.dir;
        let c = &v.components[i];
        for &f in &fs.interior {
            let mut acc = 0.0;
            for &(e, sign) in &fs.incident[f] {
                let df = &fs.dual_faces[e];
                let other = if sign > 0.0 { df.plus } else { df.minus };
                let w = other.face().map_or(0.0, |g| c[g]);
                acc += fluxes.dual_outward(i, e, sign) * 0.5 * (c[f] + w);
            }
            out.components[i][f] = acc / fs.faces[f].dual_measure;
        }
    }
    out
}

/// `C_ε(ρ, u) v`, all components.
pub fn convection_apply(
    mesh: &MacMesh,
    rho: &ScalarField,
    u_convecting: &VelocityField,
    v: &VelocityField,
) -> Result<VelocityField> {
    check_pair(mesh, rho, v)?;
    let fluxes = upwind_flux(mesh, rho, u_convecting)?;
    Ok(convection_with_fluxes(mesh, &fluxes, v))
}

/// Dual gradient of a component `w` of direction `i`: on each dual face,
/// `(w_σ' - w_σ)/d_ε` along `+e_axis`, with zero beyond the wall.
pub fn dual_gradient(mesh: &MacMesh, w: &[f64], i: usize) -> Result<Vec<f64>> {
    let fs = mesh.faces(i);
    check_len("velocity component", w.len(), fs.len())?;
    Ok(fs
        .dual_faces
        .iter()
        .map(|df| {
            let a = df.minus.face().map_or(0.0, |f| w[f]);
            let b = df.plus.face().map_or(0.0, |f| w[f]);
            (b - a) / df.dist
        })
        .collect())
}

/// Reconstruction `(ρv)_ε = F_{σ,ε}/|ε|` on the dual faces of direction `i`,
/// oriented along `+e_axis`.
pub fn flux_reconstruction(mesh: &MacMesh, rho: &ScalarField, v: &VelocityField, i: usize) -> Result<Vec<f64>> {
    let fluxes = upwind_flux(mesh, rho, v)?;
    Ok(mesh
        .faces(i)
        .dual_faces
        .iter()
        .zip(&fluxes.dual[i])
        .map(|(df, phi)| phi / df.measure)
        .collect())
}

/// Factorization `(ρv)_ε = ρ_ε ṽ_ε` of the dual-face reconstruction.
///
/// Case1: `ρ_ε = (ρ_σ + ρ_σ')/2`, `ṽ_ε = (ρ_σ v_σ + ρ_σ' v_σ')/(ρ_σ + ρ_σ')`.
/// Case2: `ρ_ε = (|τ|ρ_τ + |τ'|ρ_τ')/(|τ| + |τ'|)` and
/// `ṽ_ε = (|τ|ρ_τ v_τ + |τ'|ρ_τ' v_τ')/(|τ|ρ_τ + |τ'|ρ_τ')`.
pub fn dual_factorization(
    mesh: &MacMesh,
    rho: &ScalarField,
    v: &VelocityField,
    i: usize,
) -> Result<Vec<(f64, f64)>> {
    let rho_face = upwind_density(mesh, rho, v)?;
    Ok(mesh
        .faces(i)
        .dual_faces
        .iter()
        .map(|df| match df.case {
            DualCase::Case1 => {
                let (a, b) = (df.minus.face().unwrap(), df.plus.face().unwrap());
                let (ra, rb) = (rho_face[i][a], rho_face[i][b]);
                let (va, vb) = (v.components[i][a], v.components[i][b]);
                (0.5 * (ra + rb), (ra * va + rb * vb) / (ra + rb))
            }
            DualCase::Case2 => {
                let j = df.axis;
                let [t, tp] = df.tangent_faces.unwrap();
                let faces = &mesh.faces(j).faces;
                let (at, atp) = (faces[t].area, faces[tp].area);
                let (rt, rtp) = (rho_face[j][t], rho_face[j][tp]);
                let (vt, vtp) = (v.components[j][t], v.components[j][tp]);
                let mass = at * rt + atp * rtp;
                ((mass) / (at + atp), (at * rt * vt + atp * rtp * vtp) / mass)
            }
        })
        .collect())
}
