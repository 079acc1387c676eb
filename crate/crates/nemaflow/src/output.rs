//! File artifacts: atomically written CSVs, legacy-ASCII VTK snapshots,
//! and JSON summaries.
//!
//! Every writer goes through a temp-file-plus-rename so an interrupted run
//! never leaves a truncated artifact behind.

use std::path::Path;

use serde::Serialize;

use crate::assemble::Assembler;
use crate::energy::EnergyRecord;
use crate::error::Result;
use crate::mesh::Mesh;
use crate::state::FieldState;

/// Writes `contents` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_energy_csv(path: &Path, rows: &[EnergyRecord]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(EnergyRecord::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Legacy-ASCII VTK snapshot of the current fields on the mesh vertices:
/// vectors `d` and `u`, scalars `p`, `d_norm`, `u_norm`. The P2 numbering
/// starts with the vertices, so vertex values are leading slices.
pub fn vtk_snapshot(mesh: &Mesh, asm: &Assembler, st: &FieldState) -> String {
    let nv = mesh.n_vertices();
    let ntri = mesh.n_triangles();
    let n2 = asm.n2;
    let mut out = String::with_capacity(nv * 96);
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(&format!("nematic flow state at t = {}\n", st.t));
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {nv} double\n"));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} 0\n", v[0], v[1]));
    }
    out.push_str(&format!("CELLS {ntri} {}\n", 4 * ntri));
    for t in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("CELL_TYPES {ntri}\n"));
    for _ in 0..ntri {
        out.push_str("5\n");
    }
    out.push_str(&format!("POINT_DATA {nv}\n"));
    out.push_str("VECTORS d double\n");
    for i in 0..nv {
        out.push_str(&format!("{} {} 0\n", st.d[i], st.d[n2 + i]));
    }
    out.push_str("VECTORS u double\n");
    for i in 0..nv {
        out.push_str(&format!("{} {} 0\n", st.u[i], st.u[n2 + i]));
    }
    out.push_str("SCALARS p double 1\nLOOKUP_TABLE default\n");
    for i in 0..nv {
        out.push_str(&format!("{}\n", st.p[i]));
    }
    out.push_str("SCALARS d_norm double 1\nLOOKUP_TABLE default\n");
    for i in 0..nv {
        out.push_str(&format!("{}\n", (st.d[i] * st.d[i] + st.d[n2 + i] * st.d[n2 + i]).sqrt()));
    }
    out.push_str("SCALARS u_norm double 1\nLOOKUP_TABLE default\n");
    for i in 0..nv {
        out.push_str(&format!("{}\n", (st.u[i] * st.u[i] + st.u[n2 + i] * st.u[n2 + i]).sqrt()));
    }
    out
}
