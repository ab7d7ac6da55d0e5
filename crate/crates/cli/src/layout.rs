//! Surface survey layout: dipole sources and point receivers on regular
//! sub-grids of the top node layer.

use anyhow::{bail, Result};
use msfv_core::{Survey, TensorMesh};

/// `count` indices spread evenly over `0..=last`, duplicates removed.
fn spread(count: usize, last: usize) -> Vec<usize> {
    let mut v: Vec<usize> = match count {
        0 => Vec::new(),
        1 => vec![last / 2],
        _ => (0..count).map(|a| ((a * last) as f64 / (count - 1) as f64).round() as usize).collect(),
    };
    v.dedup();
    v
}

/// Dipoles `(plus, minus)` on the top surface. The return electrode sits a
/// quarter of the mesh length further along x.
pub fn surface_dipoles(mesh: &TensorMesh, grid: [usize; 2]) -> Result<Vec<(usize, usize)>> {
    let [n1, n2, n3] = mesh.cells_per_axis();
    let offset = (n1 / 4).max(1);
    if grid[0] > n1 + 1 - offset || grid[1] > n2 + 1 {
        bail!("source grid {grid:?} is denser than the top surface allows");
    }
    let xs = spread(grid[0], n1 - offset);
    let ys = spread(grid[1], n2);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &j in &ys {
        for &i in &xs {
            out.push((mesh.node_index(i, j, n3), mesh.node_index(i + offset, j, n3)));
        }
    }
    Ok(out)
}

/// Point receivers on a `grid[0] x grid[1]` sub-grid of top nodes.
pub fn surface_receivers(mesh: &TensorMesh, grid: [usize; 2]) -> Result<Vec<usize>> {
    let [n1, n2, n3] = mesh.cells_per_axis();
    if grid[0] > n1 + 1 || grid[1] > n2 + 1 {
        bail!("receiver grid {grid:?} is denser than the top surface");
    }
    let xs = spread(grid[0], n1);
    let ys = spread(grid[1], n2);
    Ok(ys.iter().flat_map(|&j| xs.iter().map(move |&i| mesh.node_index(i, j, n3))).collect())
}

pub fn surface_survey(mesh: &TensorMesh, sources: [usize; 2], receivers: [usize; 2]) -> Result<Survey> {
    let dipoles = surface_dipoles(mesh, sources)?;
    let rx = surface_receivers(mesh, receivers)?;
    if dipoles.is_empty() || rx.is_empty() {
        bail!("survey needs at least one source and one receiver");
    }
    Ok(Survey::from_nodes(mesh, &rx, &dipoles)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_placement() {
        let mesh = TensorMesh::new([24, 24, 8], [1.0; 3]).unwrap();
        let d = surface_dipoles(&mesh, [3, 3]).unwrap();
        assert_eq!(d.len(), 9);
        for &(p, q) in &d {
            let (a, b) = (mesh.node_triple(p), mesh.node_triple(q));
            assert_eq!(a[2], 8);
            assert_eq!(b[2], 8);
            assert_eq!(b[0] - a[0], 6);
            assert_eq!(a[1], b[1]);
        }
        let r = surface_receivers(&mesh, [25, 25]).unwrap();
        assert_eq!(r.len(), 625);
        let s = surface_survey(&mesh, [3, 3], [13, 13]).unwrap();
        assert_eq!((s.num_sources(), s.num_receivers()), (9, 169));
    }

    #[test]
    fn single_source_is_centred() {
        let mesh = TensorMesh::new([8, 8, 4], [1.0; 3]).unwrap();
        let d = surface_dipoles(&mesh, [1, 1]).unwrap();
        assert_eq!(mesh.node_triple(d[0].0), [3, 4, 4]);
        assert_eq!(mesh.node_triple(d[0].1), [5, 4, 4]);
    }

    #[test]
    fn too_dense_rejected() {
        let mesh = TensorMesh::new([4, 4, 2], [1.0; 3]).unwrap();
        assert!(surface_receivers(&mesh, [6, 1]).is_err());
        assert!(surface_dipoles(&mesh, [5, 1]).is_err());
        assert!(surface_survey(&mesh, [0, 1], [1, 1]).is_err());
    }
}
