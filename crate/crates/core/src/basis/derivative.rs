//! Directional derivatives of the basis.
//!
//! Only the interior values of a column depend on `m`. Differentiating
//! `A_II x_I = q_I - A_IB x_B` gives, per block,
//! `d x_I = -A_II^{-1} R_I (grad_m(A x)) dm`, where `x` is the block
//! restriction of the column (boundary data included). Both operators below
//! are sums of such block terms.

use super::MultiscaleBasis;
use crate::error::{invalid, Result};
use crate::mesh::Slot;

/// A nodal field restricted to one block.
#[derive(Debug, Clone)]
struct BlockField {
    interior: Vec<f64>,
    boundary: Vec<f64>,
}

impl BlockField {
    fn at(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Interior(p) => self.interior[p],
            Slot::Boundary(p) => self.boundary[p],
        }
    }
}

fn interior_at(z: &[f64], slot: Slot) -> f64 {
    match slot {
        Slot::Interior(p) => z[p],
        Slot::Boundary(_) => 0.0,
    }
}

impl MultiscaleBasis {
    /// `sum_f v_f s_f` on block `j`, `None` if no touching column has weight.
    fn block_field(&self, j: usize, v: &[f64]) -> Option<BlockField> {
        let blk = &self.blocks[j];
        if blk.members.iter().all(|&(f, _)| v[f] == 0.0) {
            return None;
        }
        let geo = &self.partition.blocks()[j];
        let mut field = BlockField { interior: vec![0.0; geo.interior.len()], boundary: vec![0.0; geo.boundary.len()] };
        for (col, &(f, pos)) in blk.members.iter().enumerate() {
            let vf = v[f];
            if vf == 0.0 {
                continue;
            }
            for (x, &b) in field.boundary.iter_mut().zip(&self.bcs.functions()[f].blocks[pos].boundary) {
                *x += vf * b;
            }
            for (x, &s) in field.interior.iter_mut().zip(blk.interior.col(col).iter()) {
                *x += vf * s;
            }
        }
        Some(field)
    }

    /// `V/4 * sum(sigma'_c dm_c)` for each block edge.
    fn block_weight_perturbation(&self, j: usize, dm: &[f64]) -> Vec<f64> {
        let mesh = self.partition.mesh();
        let q = 0.25 * mesh.cell_volume();
        self.partition.blocks()[j]
            .edges
            .iter()
            .map(|&e| q * mesh.edges()[e].cells().iter().map(|&c| self.cond.dsigma[c] * dm[c]).sum::<f64>())
            .collect()
    }

    fn inv_h2(&self, e: usize) -> f64 {
        let mesh = self.partition.mesh();
        let h = mesh.widths()[mesh.edges()[e].axis];
        1.0 / (h * h)
    }

    /// Cell gradient of `-z_I^T R_I A(m) x` on block `j`, returned in the
    /// block's local cell order.
    fn block_adjoint_cells(&self, j: usize, z: &[f64], x: &BlockField) -> Vec<f64> {
        let mesh = self.partition.mesh();
        let geo = &self.partition.blocks()[j];
        let q = 0.25 * mesh.cell_volume();
        let mut out = vec![0.0; geo.cells.len()];
        for (&e, &[a, b]) in geo.edges.iter().zip(&geo.edge_slots) {
            let dz = interior_at(z, a) - interior_at(z, b);
            if dz == 0.0 {
                continue;
            }
            let s = -dz * (x.at(a) - x.at(b)) * self.inv_h2(e) * q;
            for &c in mesh.edges()[e].cells() {
                out[self.partition.local_cell(j, c)] += self.cond.dsigma[c] * s;
            }
        }
        out
    }

    fn scatter_cells(&self, parts: Vec<Option<Vec<f64>>>) -> Vec<f64> {
        let mut out = vec![0.0; self.partition.mesh().num_cells()];
        for (j, part) in parts.into_iter().enumerate() {
            if let Some(vals) = part {
                for (&c, v) in self.partition.blocks()[j].cells.iter().zip(vals) {
                    out[c] = v;
                }
            }
        }
        out
    }

    fn interior_restriction(&self, j: usize, w: &[f64]) -> Vec<f64> {
        self.partition.blocks()[j].interior.iter().map(|&n| w[n - 1]).collect()
    }
}

/// `Y_k(v, m) = grad_m(S_k(m) v)`, an `N' x N_m` operator.
#[derive(Debug, Clone)]
pub struct YOperator<'a> {
    basis: &'a MultiscaleBasis,
    fields: Vec<Option<BlockField>>,
}

impl<'a> YOperator<'a> {
    pub(super) fn new(basis: &'a MultiscaleBasis, v: &[f64]) -> Result<Self> {
        if v.len() != basis.k() {
            return invalid(format!("coefficient vector has {} entries, basis has {}", v.len(), basis.k()));
        }
        let fields = basis.workers.map(basis.blocks.len(), |j| basis.block_field(j, v));
        Ok(Self { basis, fields })
    }

    pub fn apply(&self, dm: &[f64]) -> Vec<f64> {
        let b = self.basis;
        assert_eq!(dm.len(), b.partition.mesh().num_cells());
        let parts = b.workers.map(b.blocks.len(), |j| {
            let x = self.fields[j].as_ref()?;
            let geo = &b.partition.blocks()[j];
            let dw = b.block_weight_perturbation(j, dm);
            let mut r = vec![0.0; geo.interior.len()];
            for ((&e, &[sa, sb]), &d) in geo.edges.iter().zip(&geo.edge_slots).zip(&dw) {
                if d == 0.0 {
                    continue;
                }
                let flux = (x.at(sa) - x.at(sb)) * b.inv_h2(e) * d;
                if let Slot::Interior(p) = sa {
                    r[p] += flux;
                }
                if let Slot::Interior(p) = sb {
                    r[p] -= flux;
                }
            }
            Some(b.blocks[j].solve(&r))
        });
        let mut out = vec![0.0; b.partition.mesh().num_free_nodes()];
        for (j, part) in parts.into_iter().enumerate() {
            if let Some(y) = part {
                for (&n, v) in b.partition.blocks()[j].interior.iter().zip(y) {
                    out[n - 1] = -v;
                }
            }
        }
        out
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let b = self.basis;
        assert_eq!(w.len(), b.partition.mesh().num_free_nodes());
        let parts = b.workers.map(b.blocks.len(), |j| {
            let x = self.fields[j].as_ref()?;
            let z = b.blocks[j].solve(&b.interior_restriction(j, w));
            Some(b.block_adjoint_cells(j, &z, x))
        });
        b.scatter_cells(parts)
    }
}

/// `X_k(w, m) = grad_m(S_k(m)^T w)`, a `k x N_m` operator.
#[derive(Debug, Clone)]
pub struct XOperator<'a> {
    basis: &'a MultiscaleBasis,
    /// `A_II^{-1} R_I^T w` per block, `None` where it vanishes.
    z: Vec<Option<Vec<f64>>>,
}

impl<'a> XOperator<'a> {
    pub(super) fn new(basis: &'a MultiscaleBasis, w: &[f64]) -> Result<Self> {
        let n = basis.partition.mesh().num_free_nodes();
        if w.len() != n {
            return invalid(format!("nodal vector has {} entries, expected {n}", w.len()));
        }
        let z = basis.workers.map(basis.blocks.len(), |j| {
            let wi = basis.interior_restriction(j, w);
            if wi.iter().all(|&v| v == 0.0) || basis.blocks[j].members.is_empty() {
                None
            } else {
                Some(basis.blocks[j].solve(&wi))
            }
        });
        Ok(Self { basis, z })
    }

    pub fn apply(&self, dm: &[f64]) -> Vec<f64> {
        let b = self.basis;
        assert_eq!(dm.len(), b.partition.mesh().num_cells());
        let parts = b.workers.map(b.blocks.len(), |j| {
            let z = self.z[j].as_ref()?;
            let geo = &b.partition.blocks()[j];
            let dw = b.block_weight_perturbation(j, dm);
            let g: Vec<f64> = geo
                .edges
                .iter()
                .zip(&geo.edge_slots)
                .zip(&dw)
                .map(|((&e, &[sa, sb]), &d)| (interior_at(z, sa) - interior_at(z, sb)) * d * b.inv_h2(e))
                .collect();
            let vals: Vec<f64> = (0..b.blocks[j].members.len())
                .map(|m| {
                    -geo.edge_slots
                        .iter()
                        .zip(&g)
                        .filter(|(_, &ge)| ge != 0.0)
                        .map(|(&[sa, sb], &ge)| ge * (b.value(j, m, sa) - b.value(j, m, sb)))
                        .sum::<f64>()
                })
                .collect();
            Some(vals)
        });
        let mut out = vec![0.0; b.k()];
        for (j, part) in parts.into_iter().enumerate() {
            if let Some(vals) = part {
                for (&(f, _), v) in b.blocks[j].members.iter().zip(vals) {
                    out[f] += v;
                }
            }
        }
        out
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let b = self.basis;
        assert_eq!(y.len(), b.k());
        let parts = b.workers.map(b.blocks.len(), |j| {
            let z = self.z[j].as_ref()?;
            let x = b.block_field(j, y)?;
            Some(b.block_adjoint_cells(j, z, &x))
        });
        b.scatter_cells(parts)
    }
}
