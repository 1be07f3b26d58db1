//! CSV records and legacy ASCII VTK fields.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fem::FemState;
use crate::interp::{MaterialTree, TreeError};
use crate::mesh::{Region, SectorMesh};
use crate::optimizer::Termination;
use crate::study::ParetoRecord;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("design field has {got} values, expected {expected}")]
    DesignSize { expected: usize, got: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub const CSV_HEADER: &str = "gamma,domain,phi_plus,phi_minus,sd0,iterations,termination";

pub fn records_csv(records: &[ParetoRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{:e},{},{:e},{:e},{:e},{},{}",
            r.gamma,
            r.domain,
            r.phi_plus,
            r.phi_minus,
            r.sd0,
            r.iterations,
            r.termination.as_str()
        );
    }
    s
}

pub fn export_csv(path: &Path, records: &[ParetoRecord]) -> Result<(), ExportError> {
    write(path, &records_csv(records))
}

/// Parses the columns written by [`records_csv`]; other fields take defaults.
pub fn parse_records_csv(text: &str) -> Result<Vec<ParetoRecord>, ExportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(ExportError::Csv {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ExportError::Csv { line: i + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s}: {e}")));
        out.push(ParetoRecord {
            gamma: num(f[0])?,
            domain: f[1].to_string(),
            phi_plus: num(f[2])?,
            phi_minus: num(f[3])?,
            sd0: num(f[4])?,
            iterations: f[5].parse().map_err(|e| err(format!("{}: {e}", f[5])))?,
            termination: Termination::parse(f[6]).ok_or_else(|| err(format!("unknown termination {}", f[6])))?,
            design_path: None,
            best: false,
            failure: None,
        });
    }
    Ok(out)
}

fn write(path: &Path, content: &str) -> Result<(), ExportError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| ExportError::IoFailure {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| ExportError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

/// Legacy ASCII VTK of the mesh with per-cell design data and, when a state
/// is given, the nodal potential and field-dependent polarization.
///
/// `filtered` holds one design point per design element in mesh order.
pub fn vtk_string(
    mesh: &SectorMesh,
    tree: &MaterialTree,
    filtered: &[f64],
    state: Option<&FemState>,
) -> Result<String, ExportError> {
    let n = tree.design_len();
    let design = mesh.design_elements();
    if filtered.len() != design.len() * n {
        return Err(ExportError::DesignSize {
            expected: design.len() * n,
            got: filtered.len(),
        });
    }
    let mut index = vec![None; mesh.element_count()];
    for (k, &e) in design.iter().enumerate() {
        index[e] = Some(k);
    }
    let point = |e: usize| index[e].map(|k| &filtered[k * n..(k + 1) * n]);
    let air = tree
        .catalogue
        .entries
        .iter()
        .position(|m| m.kind == crate::materials::MaterialKind::Air);

    let ne = mesh.element_count();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "mmtopo rotor sector");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.node_count());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {} {}", ne, 4 * ne);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(s, "5");
    }

    let _ = writeln!(s, "CELL_DATA {ne}");
    for (slot, label) in tree.tree.internal_labels().into_iter().enumerate() {
        let off = tree.tree.slot_offset(slot);
        for c in 0..tree.tree.slot_dim(slot) {
            scalar_header(&mut s, &format!("rho_{}_{}", label.slug(), c), "double");
            for e in 0..ne {
                let v = point(e).map_or(0.0, |p| p[off + c]);
                let _ = writeln!(s, "{v:e}");
            }
        }
    }
    let mut dominant = Vec::with_capacity(ne);
    for e in 0..ne {
        dominant.push(match point(e) {
            Some(p) => tree.dominant_material(p)?,
            None => air.unwrap_or(0),
        });
    }
    scalar_header(&mut s, "dominant_material", "int");
    for d in &dominant {
        let _ = writeln!(s, "{d}");
    }
    let mut jp_norm = Vec::with_capacity(ne);
    let mut jz = Vec::with_capacity(ne);
    for e in 0..ne {
        let b = state.map_or([0.0, 0.0], |st| st.b[e]);
        let (j, z) = match point(e) {
            Some(p) => {
                let v = tree.eval(p, b)?;
                (v.polarization[0].hypot(v.polarization[1]), v.current_density)
            }
            None => (0.0, 0.0),
        };
        jp_norm.push(j);
        jz.push(z * state.map_or(1.0, |st| st.load_sign));
    }
    scalar_header(&mut s, "polarization_norm", "double");
    for v in &jp_norm {
        let _ = writeln!(s, "{v:e}");
    }
    scalar_header(&mut s, "current_density", "double");
    for v in &jz {
        let _ = writeln!(s, "{v:e}");
    }
    scalar_header(&mut s, "region", "int");
    for r in &mesh.regions {
        let _ = writeln!(s, "{}", if *r == Region::Design { 0 } else { 1 });
    }
    let _ = writeln!(s, "COLOR_SCALARS material_color 3");
    for &d in &dominant {
        let c = tree.catalogue.get(d).color;
        let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
    }
    if let Some(st) = state {
        let _ = writeln!(s, "POINT_DATA {}", mesh.node_count());
        scalar_header(&mut s, "a", "double");
        for v in &st.a {
            let _ = writeln!(s, "{v:e}");
        }
    }
    Ok(s)
}

fn scalar_header(s: &mut String, name: &str, ty: &str) {
    let _ = writeln!(s, "SCALARS {name} {ty} 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
}

pub fn export_vtk(
    path: &Path,
    mesh: &SectorMesh,
    tree: &MaterialTree,
    filtered: &[f64],
    state: Option<&FemState>,
) -> Result<(), ExportError> {
    write(path, &vtk_string(mesh, tree, filtered, state)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_count_and_format() {
        let r = ParetoRecord {
            gamma: -0.1,
            domain: "recursive".into(),
            phi_plus: 1.0e-2,
            phi_minus: -3.25e-3,
            sd0: 0.5,
            iterations: 12,
            termination: Termination::Stagnation,
            design_path: None,
            best: false,
            failure: None,
        };
        let csv = records_csv(&[r.clone(), r.clone(), r]);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "-1e-1,recursive,1e-2,-3.25e-3,5e-1,12,stagnation"
        );
    }
}
