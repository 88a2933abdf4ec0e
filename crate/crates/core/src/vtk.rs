//! Legacy-VTK (ASCII, unstructured grid) output.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

const VTK_LINE: u8 = 3;
const VTK_QUAD: u8 = 9;

/// Named scalar fields attached to a mesh.
#[derive(Debug, Default)]
pub struct VtkFields<'a> {
    pub point: Vec<(&'a str, &'a [f64])>,
    pub cell: Vec<(&'a str, &'a [f64])>,
}

pub fn write_vtk<W: Write>(mut w: W, mesh: &Mesh, title: &str, fields: &VtkFields<'_>) -> Result<()> {
    if mesh.num_elements() == 0 {
        return Err(Error::InvalidArgument("cannot export an empty mesh".into()));
    }
    for (name, data) in &fields.point {
        if data.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "point field {name} has {} values, mesh has {} nodes",
                data.len(),
                mesh.num_nodes()
            )));
        }
    }
    for (name, data) in &fields.cell {
        if data.len() != mesh.num_elements() {
            return Err(Error::DimensionMismatch(format!(
                "cell field {name} has {} values, mesh has {} elements",
                data.len(),
                mesh.num_elements()
            )));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_nodes())?;
    for p in mesh.nodes() {
        writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let nn = mesh.nodes_per_cell();
    let ne = mesh.num_elements();
    writeln!(w, "CELLS {} {}", ne, ne * (nn + 1))?;
    for cell in mesh.elements() {
        write!(w, "{nn}")?;
        for v in cell {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    let cell_type = if mesh.dim() == 1 { VTK_LINE } else { VTK_QUAD };
    for _ in 0..ne {
        writeln!(w, "{cell_type}")?;
    }
    if !fields.point.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_nodes())?;
        for (name, data) in &fields.point {
            write_scalars(&mut w, name, data)?;
        }
    }
    if !fields.cell.is_empty() {
        writeln!(w, "CELL_DATA {ne}")?;
        for (name, data) in &fields.cell {
            write_scalars(&mut w, name, data)?;
        }
    }
    Ok(())
}

fn write_scalars<W: Write>(w: &mut W, name: &str, data: &[f64]) -> Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in data {
        writeln!(w, "{v:.17e}")?;
    }
    Ok(())
}
