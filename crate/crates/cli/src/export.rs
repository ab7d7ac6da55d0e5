//! Model and trace export.

use std::io::{self, Write};
use std::path::Path;

use msfv_core::{InversionTrace, TensorMesh};

/// Legacy ASCII VTK, structured points on the cell-centre grid, with
/// `sigma = exp(m)` as point data.
pub fn write_model_vtk<W: Write>(m: &[f64], mesh: &TensorMesh, mut out: W) -> io::Result<()> {
    if m.len() != mesh.num_cells() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "model length does not match the mesh"));
    }
    let [n1, n2, n3] = mesh.cells_per_axis();
    let [h1, h2, h3] = mesh.widths();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "msfv conductivity model")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {n1} {n2} {n3}")?;
    writeln!(out, "ORIGIN {:e} {:e} {:e}", h1 / 2.0, h2 / 2.0, h3 / 2.0)?;
    writeln!(out, "SPACING {h1:e} {h2:e} {h3:e}")?;
    writeln!(out, "POINT_DATA {}", m.len())?;
    writeln!(out, "SCALARS sigma double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in m {
        writeln!(out, "{:e}", v.exp())?;
    }
    Ok(())
}

pub fn export_model_vtk(m: &[f64], mesh: &TensorMesh, path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_model_vtk(m, mesh, &mut f)?;
    f.flush()
}

pub const TRACE_HEADER: &str = "iter,phi,reg,total,pgnorm,step,cg_iters,active,rebuilt";

pub fn write_trace_csv<W: Write>(trace: &InversionTrace, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &trace.rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            r.iter, r.phi, r.reg, r.total, r.pgnorm, r.step, r.cg_iters, r.active, r.rebuilt as u8
        )?;
    }
    Ok(())
}

pub fn export_trace_csv(trace: &InversionTrace, path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_trace_csv(trace, &mut f)?;
    f.flush()
}
