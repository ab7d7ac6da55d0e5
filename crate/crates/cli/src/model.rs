//! Synthetic log-conductivity models.

use anyhow::{bail, Result};
use msfv_core::TensorMesh;

/// Box of cells `[i0, i1) x [j0, j1) x [k0, k1)` with conductivity `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anomaly {
    pub extent: [[usize; 2]; 3],
    pub sigma: f64,
}

impl Anomaly {
    /// From a config row `[i0, i1, j0, j1, k0, k1, sigma]`.
    pub fn from_row(row: &[f64; 7]) -> Result<Self> {
        let mut extent = [[0usize; 2]; 3];
        for a in 0..3 {
            for s in 0..2 {
                let v = row[2 * a + s];
                if v < 0.0 || v.fract() != 0.0 {
                    bail!("anomaly extent {v} is not a cell index");
                }
                extent[a][s] = v as usize;
            }
        }
        Ok(Self { extent, sigma: row[6] })
    }
}

/// `m = ln(sigma)` cellwise; anomalies overwrite the background in order.
pub fn generate_block_model(mesh: &TensorMesh, anomalies: &[Anomaly], background: f64) -> Result<Vec<f64>> {
    if background <= 0.0 || !background.is_finite() {
        bail!("background conductivity must be positive");
    }
    let n = mesh.cells_per_axis();
    let mut m = vec![background.ln(); mesh.num_cells()];
    for (b, an) in anomalies.iter().enumerate() {
        if an.sigma <= 0.0 || !an.sigma.is_finite() {
            bail!("anomaly {b} has non-positive conductivity");
        }
        for a in 0..3 {
            let [lo, hi] = an.extent[a];
            if lo >= hi || hi > n[a] {
                bail!("anomaly {b} extent {lo}..{hi} outside 0..{} on axis {a}", n[a]);
            }
        }
        let [[i0, i1], [j0, j1], [k0, k1]] = an.extent;
        for k in k0..k1 {
            for j in j0..j1 {
                for i in i0..i1 {
                    m[mesh.cell_index(i, j, k)] = an.sigma.ln();
                }
            }
        }
    }
    Ok(m)
}

/// Layered background whose conductivity grows tenfold with depth, plus a
/// resistive body (sigma = background / 100) shaped like a salt dome: an
/// ellipsoid with a stem reaching toward the top.
pub fn generate_salt_model(mesh: &TensorMesh, background: f64) -> Result<Vec<f64>> {
    if background <= 0.0 || !background.is_finite() {
        bail!("background conductivity must be positive");
    }
    let n = mesh.cells_per_axis();
    let len: Vec<f64> = (0..3).map(|a| n[a] as f64 * mesh.widths()[a]).collect();
    let body = (background / 100.0).ln();
    Ok((0..mesh.num_cells())
        .map(|c| {
            let x = mesh.cell_center(c);
            let u = [x[0] / len[0], x[1] / len[1], x[2] / len[2]];
            // depth 0 at the top surface
            let depth = 1.0 - u[2];
            let layered = background.ln() + depth * 10f64.ln();
            let dome = ((u[0] - 0.5) / 0.3).powi(2) + ((u[1] - 0.5) / 0.25).powi(2) + ((u[2] - 0.4) / 0.2).powi(2);
            let stem = ((u[0] - 0.5) / 0.1).powi(2) + ((u[1] - 0.5) / 0.1).powi(2);
            if dome <= 1.0 || (stem <= 1.0 && u[2] >= 0.4 && u[2] <= 0.8) {
                body
            } else {
                layered
            }
        })
        .collect())
}
