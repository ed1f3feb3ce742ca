//! Tensor-product MAC geometry.
//!
//! Cells carry the scalar unknowns (density, pressure). The faces orthogonal
//! to `e_i` carry the `i`-th velocity component; each face `σ` owns a dual
//! cell `D_σ` made of the two half-cells on either side of it (a single
//! half-cell on the boundary).
//!
//! The dual cells of direction `i` are separated by dual faces `ε = σ|σ'`:
//!
//! - [`DualCase::Case1`]: `ε` is normal to `e_i` and cuts a primal cell `K`
//!   through its centre, separating the two `i`-faces of `K`.
//! - [`DualCase::Case2`]: `ε` is tangent to `e_i`. It lies on a grid line of
//!   another direction `j` and is the union of two half primal faces
//!   `τ ∈ E(K)`, `τ' ∈ E(L)` where `σ = K|L`. On the boundary only one side
//!   exists and the other side is [`DualSide::Wall`].
//!
//! Ordering is lexicographic with axis 0 varying fastest, for cells, for each
//! face family and for dual faces. Every operator assembles in this order.

use crate::error::{Error, Result};

/// Index of a cell in lexicographic order.
pub type CellId = usize;
/// Index of a face within its direction family `E^(i)`.
pub type FaceId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualCase {
    Case1,
    Case2,
}

/// One side of a dual face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualSide {
    Face(FaceId),
    Wall,
}

impl DualSide {
    pub fn face(self) -> Option<FaceId> {
        match self {
            DualSide::Face(f) => Some(f),
            DualSide::Wall => None,
        }
    }
}

/// A primal face `σ ∈ E^(i)` together with its dual cell `D_σ`.
#[derive(Debug, Clone)]
pub struct Face {
    pub index: [usize; 3],
    /// `|σ|`
    pub area: f64,
    pub center: [f64; 3],
    /// Cell `K` with `n_{K,σ} = +e_i`, absent on the lower boundary.
    pub lower: Option<CellId>,
    /// Cell `L` with `n_{L,σ} = -e_i`, absent on the upper boundary.
    pub upper: Option<CellId>,
    /// `|D_{K,σ}|`
    pub half_lower: f64,
    /// `|D_{L,σ}|`
    pub half_upper: f64,
    /// `|D_σ|`
    pub dual_measure: f64,
    /// `d_σ`: centre-to-centre distance, or centre-to-boundary on `E_ext`.
    pub dist: f64,
    pub dual_centroid: [f64; 3],
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }
}

/// A dual face `ε` of the dual mesh of one velocity direction.
///
/// The orientation is from `minus` to `plus`, i.e. along `+e_axis`, so
/// `n_{D_minus,ε} = +e_axis`.
#[derive(Debug, Clone)]
pub struct DualFace {
    /// Direction `j` of the normal to `ε`.
    pub axis: usize,
    pub case: DualCase,
    pub minus: DualSide,
    pub plus: DualSide,
    /// `|ε|`
    pub measure: f64,
    /// `d_ε`: distance between `x_σ` and `x_σ'` (or to the wall).
    pub dist: f64,
    /// Case1: the primal cell cut by `ε`.
    pub cell: Option<CellId>,
    /// Case2: the two primal faces `τ, τ' ∈ E^(axis)` whose halves form `ε`.
    pub tangent_faces: Option<[FaceId; 2]>,
}

/// Faces, dual cells and dual faces attached to one velocity direction.
#[derive(Debug, Clone)]
pub struct FaceSet {
    pub dir: usize,
    pub counts: [usize; 3],
    pub faces: Vec<Face>,
    /// Interior faces in order; position in this list is the unknown index.
    pub interior: Vec<FaceId>,
    unknown: Vec<Option<usize>>,
    pub dual_faces: Vec<DualFace>,
    /// For each face, the incident dual faces with `F_{σ,ε} = sign · Φ_ε`.
    pub incident: Vec<Vec<(usize, f64)>>,
}

impl FaceSet {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Unknown index of an interior face, `None` on `E_ext`.
    pub fn unknown(&self, face: FaceId) -> Option<usize> {
        self.unknown[face]
    }

    pub fn id(&self, k: [usize; 3]) -> FaceId {
        k[0] + self.counts[0] * (k[1] + self.counts[1] * k[2])
    }

    /// The dual face and the face on its other side, seen from `face`.
    pub fn neighbours(&self, face: FaceId) -> impl Iterator<Item = (&DualFace, f64, DualSide)> + '_ {
        self.incident[face].iter().map(move |&(e, sign)| {
            let df = &self.dual_faces[e];
            let other = if sign > 0.0 { df.plus } else { df.minus };
            (df, sign, other)
        })
    }
}

/// A tensor-product MAC mesh of a box in 2 or 3 dimensions.
#[derive(Debug, Clone)]
pub struct MacMesh {
    dim: usize,
    counts: [usize; 3],
    coords: Vec<Vec<f64>>,
    widths: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    cell_volumes: Vec<f64>,
    cell_centers: Vec<[f64; 3]>,
    face_sets: Vec<FaceSet>,
}

impl MacMesh {
    /// Builds a mesh of `domain_box` from the grid lines of each axis.
    pub fn new(domain_box: &[(f64, f64)], axis_coords: &[Vec<f64>]) -> Result<Self> {
        let dim = domain_box.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidMesh(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if axis_coords.len() != dim {
            return Err(Error::InvalidMesh(format!(
                "{} coordinate arrays given for a {dim}-dimensional box",
                axis_coords.len()
            )));
        }
        for (axis, (&(lo, hi), c)) in domain_box.iter().zip(axis_coords).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidMesh(format!(
                    "axis {axis}: empty or non-finite interval ({lo}, {hi})"
                )));
            }
            if c.len() < 2 {
                return Err(Error::InvalidMesh(format!(
                    "axis {axis}: need at least one cell, got {} grid lines",
                    c.len()
                )));
            }
            if let Some(w) = c.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
                return Err(Error::InvalidMesh(format!(
                    "axis {axis}: coordinates not strictly increasing at position {}",
                    w + 1
                )));
            }
            let tol = 1e-12 * (hi - lo);
            if (c[0] - lo).abs() > tol || (c[c.len() - 1] - hi).abs() > tol {
                return Err(Error::InvalidMesh(format!(
                    "axis {axis}: end points ({}, {}) do not match the domain ({lo}, {hi})",
                    c[0],
                    c[c.len() - 1]
                )));
            }
        }

        let mut counts = [1usize; 3];
        let mut coords = Vec::with_capacity(dim);
        let mut widths = Vec::with_capacity(dim);
        let mut centers = Vec::with_capacity(dim);
        for (axis, c) in axis_coords.iter().enumerate() {
            counts[axis] = c.len() - 1;
            coords.push(c.clone());
            widths.push(c.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
            centers.push(c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect::<Vec<_>>());
        }

        let mut mesh = MacMesh {
            dim,
            counts,
            coords,
            widths,
            centers,
            cell_volumes: Vec::new(),
            cell_centers: Vec::new(),
            face_sets: Vec::new(),
        };
        let n_cells = counts.iter().product();
        mesh.cell_volumes = Vec::with_capacity(n_cells);
        mesh.cell_centers = Vec::with_capacity(n_cells);
        for id in 0..n_cells {
            let k = mesh.cell_index(id);
            let mut vol = 1.0;
            let mut center = [0.0; 3];
            for a in 0..dim {
                vol *= mesh.widths[a][k[a]];
                center[a] = mesh.centers[a][k[a]];
            }
            mesh.cell_volumes.push(vol);
            mesh.cell_centers.push(center);
        }
        mesh.face_sets = (0..dim).map(|i| mesh.build_face_set(i)).collect();
        Ok(mesh)
    }

    /// Uniform mesh with `counts[a]` cells along axis `a`.
    pub fn uniform(domain_box: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if counts.len() != domain_box.len() {
            return Err(Error::InvalidMesh(
                "cell counts and domain box have different dimensions".into(),
            ));
        }
        let coords: Vec<Vec<f64>> = domain_box
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &n)| {
                (0..=n)
                    .map(|k| {
                        if k == n {
                            hi
                        } else {
                            lo + (hi - lo) * k as f64 / n as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(domain_box, &coords)
    }

    /// Uniform mesh of the unit square or cube with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::uniform(&vec![(0.0, 1.0); dim], &vec![n; dim])
    }

    fn build_face_set(&self, i: usize) -> FaceSet {
        let dim = self.dim;
        let mut fcounts = self.counts;
        fcounts[i] += 1;
        let n_faces: usize = fcounts.iter().product();
        let fid = |k: [usize; 3]| k[0] + fcounts[0] * (k[1] + fcounts[1] * k[2]);

        let mut faces = Vec::with_capacity(n_faces);
        for id in 0..n_faces {
            let k = [
                id % fcounts[0],
                (id / fcounts[0]) % fcounts[1],
                id / (fcounts[0] * fcounts[1]),
            ];
            let ki = k[i];
            let lower = (ki > 0).then(|| {
                let mut c = k;
                c[i] -= 1;
                self.cell_id(c)
            });
            let upper = (ki < self.counts[i]).then(|| self.cell_id(k));
            let half_lower = lower.map_or(0.0, |c| 0.5 * self.cell_volumes[c]);
            let half_upper = upper.map_or(0.0, |c| 0.5 * self.cell_volumes[c]);
            let mut center = [0.0; 3];
            let mut centroid = [0.0; 3];
            for a in 0..dim {
                if a == i {
                    center[a] = self.coords[i][ki];
                    let lo = if ki > 0 {
                        self.centers[i][ki - 1]
                    } else {
                        self.coords[i][0]
                    };
                    let hi = if ki < self.counts[i] {
                        self.centers[i][ki]
                    } else {
                        self.coords[i][self.counts[i]]
                    };
                    centroid[a] = 0.5 * (lo + hi);
                } else {
                    center[a] = self.centers[a][k[a]];
                    centroid[a] = center[a];
                }
            }
            let dist = match (lower, upper) {
                (Some(_), Some(_)) => self.centers[i][ki] - self.centers[i][ki - 1],
                (None, _) => self.centers[i][0] - self.coords[i][0],
                (_, None) => self.coords[i][ki] - self.centers[i][ki - 1],
            };
            faces.push(Face {
                index: k,
                area: self.cross_section(i, k),
                center,
                lower,
                upper,
                half_lower,
                half_upper,
                dual_measure: half_lower + half_upper,
                dist,
                dual_centroid: centroid,
            });
        }

        let mut unknown = vec![None; n_faces];
        let mut interior = Vec::new();
        for (id, f) in faces.iter().enumerate() {
            if f.is_interior() {
                unknown[id] = Some(interior.len());
                interior.push(id);
            }
        }

        let mut dual_faces = Vec::new();
        // Case1: one per primal cell, between its lower and upper i-faces.
        for cell in 0..self.n_cells() {
            let k = self.cell_index(cell);
            let mut up = k;
            up[i] += 1;
            dual_faces.push(DualFace {
                axis: i,
                case: DualCase::Case1,
                minus: DualSide::Face(fid(k)),
                plus: DualSide::Face(fid(up)),
                measure: self.cross_section(i, k),
                dist: self.widths[i][k[i]],
                cell: Some(cell),
                tangent_faces: None,
            });
        }
        // Case2: on the grid lines of every other axis j, around interior faces.
        for j in (0..dim).filter(|&j| j != i) {
            let mut ecounts = self.counts;
            ecounts[j] += 1;
            let mut tcounts = self.counts;
            tcounts[j] += 1;
            let tid = |k: [usize; 3]| k[0] + tcounts[0] * (k[1] + tcounts[1] * k[2]);
            let total: usize = ecounts.iter().product();
            for e in 0..total {
                // e indexes (line in j, cell in i, cell in others); the i index
                // is shifted by one to address the face position.
                let c = [
                    e % ecounts[0],
                    (e / ecounts[0]) % ecounts[1],
                    e / (ecounts[0] * ecounts[1]),
                ];
                let mut kf = c;
                kf[i] = c[i] + 1;
                if kf[i] >= self.counts[i] {
                    continue;
                }
                let line = c[j];
                let minus = if line > 0 {
                    let mut m = kf;
                    m[j] = line - 1;
                    DualSide::Face(fid(m))
                } else {
                    DualSide::Wall
                };
                let plus = if line < self.counts[j] {
                    DualSide::Face(fid(kf))
                } else {
                    DualSide::Wall
                };
                let mut measure = 0.5 * (self.widths[i][kf[i] - 1] + self.widths[i][kf[i]]);
                for m in (0..dim).filter(|&m| m != i && m != j) {
                    measure *= self.widths[m][kf[m]];
                }
                let dist = if line == 0 {
                    self.centers[j][0] - self.coords[j][0]
                } else if line == self.counts[j] {
                    self.coords[j][line] - self.centers[j][line - 1]
                } else {
                    self.centers[j][line] - self.centers[j][line - 1]
                };
                let mut tk = kf;
                tk[i] -= 1;
                let tau = tid(tk);
                let tau_prime = tid(kf);
                dual_faces.push(DualFace {
                    axis: j,
                    case: DualCase::Case2,
                    minus,
                    plus,
                    measure,
                    dist,
                    cell: None,
                    tangent_faces: Some([tau, tau_prime]),
                });
            }
        }

        let mut incident = vec![Vec::new(); n_faces];
        for (e, df) in dual_faces.iter().enumerate() {
            if let DualSide::Face(f) = df.minus {
                incident[f].push((e, 1.0));
            }
            if let DualSide::Face(f) = df.plus {
                incident[f].push((e, -1.0));
            }
        }

        FaceSet {
            dir: i,
            counts: fcounts,
            faces,
            interior,
            unknown,
            dual_faces,
            incident,
        }
    }

    /// Product of the cell widths transverse to axis `i` at position `k`.
    fn cross_section(&self, i: usize, k: [usize; 3]) -> f64 {
        (0..self.dim)
            .filter(|&a| a != i)
            .map(|a| self.widths[a][k[a]])
            .product()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; the third entry is 1 in 2D.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn widths(&self, axis: usize) -> &[f64] {
        &self.widths[axis]
    }

    pub fn n_cells(&self) -> usize {
        self.cell_volumes.len()
    }

    pub fn cell_id(&self, k: [usize; 3]) -> CellId {
        k[0] + self.counts[0] * (k[1] + self.counts[1] * k[2])
    }

    pub fn cell_index(&self, id: CellId) -> [usize; 3] {
        [
            id % self.counts[0],
            (id / self.counts[0]) % self.counts[1],
            id / (self.counts[0] * self.counts[1]),
        ]
    }

    pub fn cell_volume(&self, cell: CellId) -> f64 {
        self.cell_volumes[cell]
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn cell_center(&self, cell: CellId) -> &[f64] {
        &self.cell_centers[cell][..self.dim]
    }

    pub fn faces(&self, dir: usize) -> &FaceSet {
        &self.face_sets[dir]
    }

    pub fn face_sets(&self) -> &[FaceSet] {
        &self.face_sets
    }

    /// Number of velocity unknowns (interior faces over all directions).
    pub fn n_velocity_unknowns(&self) -> usize {
        self.face_sets.iter().map(|fs| fs.interior.len()).sum()
    }

    /// Bounds of the box.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.coords
            .iter()
            .map(|c| (c[0], c[c.len() - 1]))
            .collect()
    }

    /// `|Ω|`
    pub fn domain_volume(&self) -> f64 {
        self.bounds().iter().map(|(lo, hi)| hi - lo).product()
    }

    /// `η_M`: the largest ratio `|σ|/|σ'|` between faces of different directions.
    pub fn regularity(&self) -> f64 {
        let extrema: Vec<(f64, f64)> = self
            .face_sets
            .iter()
            .map(|fs| {
                fs.faces.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), f| {
                    (lo.min(f.area), hi.max(f.area))
                })
            })
            .collect();
        let mut eta = 0.0f64;
        for (i, &(_, max_i)) in extrema.iter().enumerate() {
            for (j, &(min_j, _)) in extrema.iter().enumerate() {
                if i != j {
                    eta = eta.max(max_i / min_j);
                }
            }
        }
        eta
    }

    /// `h_M`: the largest primal-cell diameter.
    pub fn mesh_step(&self) -> f64 {
        self.widths
            .iter()
            .map(|w| {
                let m = w.iter().cloned().fold(0.0, f64::max);
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }
}
