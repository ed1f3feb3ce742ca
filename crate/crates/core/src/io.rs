//! Plain-text output: CSV fields and tables, legacy VTK, mesh tables.
//!
//! Every CSV starts with `#` comment lines naming the units, the SHA-256 of
//! the configuration and the random seed.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VelocityField};
use crate::grid::{DualCase, DualSide, MacMesh};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header {
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Header {
    pub fn write<W: Write + ?Sized>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# units: nondimensional")?;
        writeln!(w, "# config_sha256: {}", self.config_sha256)?;
        match self.seed {
            Some(s) => writeln!(w, "# seed: {s}"),
            None => writeln!(w, "# seed: none"),
        }
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV table with a header block.
pub fn write_table<W: Write + ?Sized>(w: &mut W, header: &Header, columns: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = w;
    header.write(&mut w)?;
    writeln!(w, "{}", columns.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    Ok(())
}

/// One row `id,value` per cell.
pub fn write_scalar_csv<W: Write + ?Sized>(w: &mut W, header: &Header, q: &ScalarField) -> io::Result<()> {
    let rows: Vec<Vec<String>> = q
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), format!("{v:.17e}")])
        .collect();
    write_table(w, header, &["id", "value"], &rows)
}

/// One row `id,value` per face, numbering the faces of direction 0 first,
/// then direction 1, and so on.
pub fn write_velocity_csv<W: Write + ?Sized>(w: &mut W, header: &Header, u: &VelocityField) -> io::Result<()> {
    let rows: Vec<Vec<String>> = u
        .components
        .iter()
        .flatten()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), format!("{v:.17e}")])
        .collect();
    write_table(w, header, &["id", "value"], &rows)
}

fn read_values<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (line_no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            seen_header = true;
            if line != "id,value" {
                return Err(Error::Config(format!("line {}: expected header `id,value`", line_no + 1)));
            }
            continue;
        }
        let mut parts = line.split(',');
        let id: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("line {}: bad id", line_no + 1)))?;
        let value: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("line {}: bad value", line_no + 1)))?;
        if id != out.len() {
            return Err(Error::Config(format!("line {}: ids must be consecutive from 0", line_no + 1)));
        }
        out.push(value);
    }
    Ok(out)
}

pub fn read_scalar_csv<R: BufRead>(r: R, mesh: &MacMesh) -> Result<ScalarField> {
    let q = ScalarField { values: read_values(r)? };
    q.check(mesh)?;
    Ok(q)
}

pub fn read_velocity_csv<R: BufRead>(r: R, mesh: &MacMesh) -> Result<VelocityField> {
    let values = read_values(r)?;
    let total: usize = mesh.face_sets().iter().map(|fs| fs.len()).sum();
    crate::error::check_len("velocity values", values.len(), total)?;
    let mut rest = values.as_slice();
    let mut components = Vec::new();
    for fs in mesh.face_sets() {
        let (a, b) = rest.split_at(fs.len());
        components.push(a.to_vec());
        rest = b;
    }
    let u = VelocityField { components };
    u.check(mesh)?;
    Ok(u)
}

/// Legacy VTK structured grid with cell data: density, pressure and the
/// cell-centre velocity (mean of the two faces of each direction).
pub fn write_vtk<W: Write + ?Sized>(
    w: &mut W,
    mesh: &MacMesh,
    title: &str,
    rho: &ScalarField,
    u: &VelocityField,
    p: &ScalarField,
) -> io::Result<()> {
    let c = mesh.counts();
    let dim = mesh.dim();
    let nodes = [c[0] + 1, c[1] + 1, if dim == 3 { c[2] + 1 } else { 1 }];
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_GRID")?;
    writeln!(w, "DIMENSIONS {} {} {}", nodes[0], nodes[1], nodes[2])?;
    writeln!(w, "POINTS {} double", nodes.iter().product::<usize>())?;
    for k in 0..nodes[2] {
        for j in 0..nodes[1] {
            for i in 0..nodes[0] {
                let z = if dim == 3 { mesh.coords(2)[k] } else { 0.0 };
                writeln!(w, "{} {} {}", mesh.coords(0)[i], mesh.coords(1)[j], z)?;
            }
        }
    }
    let n = mesh.n_cells();
    writeln!(w, "CELL_DATA {n}")?;
    for (name, q) in [("density", rho), ("pressure", p)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &q.values {
            writeln!(w, "{v:.17e}")?;
        }
    }
    writeln!(w, "VECTORS velocity double")?;
    for cell in 0..n {
        let k = mesh.cell_index(cell);
        let mut v = [0.0; 3];
        for (i, vi) in v.iter_mut().enumerate().take(dim) {
            let fs = mesh.faces(i);
            let mut hi = k;
            hi[i] += 1;
            *vi = 0.5 * (u.components[i][fs.id(k)] + u.components[i][fs.id(hi)]);
        }
        writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
    }
    Ok(())
}

/// Face and dual-face tables with columns `id,direction,case,measure,neighbors`.
///
/// Primal faces have ids `f<direction>:<index>`, case `interior` or
/// `exterior`, and neighbours `K|L` (or `K|wall`). Dual faces have ids
/// `e<direction>:<index>`, case `case1` or `case2`, and neighbours `σ|σ'`.
pub fn write_mesh_tables<W: Write + ?Sized>(w: &mut W, header: &Header, mesh: &MacMesh) -> io::Result<()> {
    let mut rows = Vec::new();
    let side = |s: DualSide| match s {
        DualSide::Face(f) => f.to_string(),
        DualSide::Wall => "wall".to_string(),
    };
    for fs in mesh.face_sets() {
        for (f, face) in fs.faces.iter().enumerate() {
            let cell = |c: Option<usize>| c.map_or("wall".to_string(), |c| c.to_string());
            rows.push(vec![
                format!("f{}:{f}", fs.dir),
                fs.dir.to_string(),
                if face.is_interior() { "interior" } else { "exterior" }.to_string(),
                format!("{:.17e}", face.area),
                format!("{}|{}", cell(face.lower), cell(face.upper)),
            ]);
        }
    }
    for fs in mesh.face_sets() {
        for (e, df) in fs.dual_faces.iter().enumerate() {
            rows.push(vec![
                format!("e{}:{e}", fs.dir),
                fs.dir.to_string(),
                match df.case {
                    DualCase::Case1 => "case1",
                    DualCase::Case2 => "case2",
                }
                .to_string(),
                format!("{:.17e}", df.measure),
                format!("{}|{}", side(df.minus), side(df.plus)),
            ]);
        }
    }
    write_table(w, header, &["id", "direction", "case", "measure", "neighbors"], &rows)
}
