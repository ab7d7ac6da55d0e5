//! Model-dependent multiscale basis `S_k(m)`.
//!
//! Each column is assembled block by block: its Dirichlet data on the block
//! boundary is fixed, and the interior values solve the local problem
//! `A_II x_I = q_I - A_IB x_B` with the block's own conductivities. Blocks
//! are independent, so assembly and the derivative operators run one task
//! per block and merge into disjoint index ranges.

mod bc;
mod derivative;

use std::io::Write;
use std::sync::Arc;

use faer::sparse::{SparseColMat, SparseColMatRef, Triplet};
use faer::Mat;

pub use bc::{
    reference_fields, BasisFunction, BasisSpec, BlockData, BoundaryConditionSet, Family, LocalPcaSelection,
    PCA_DROP_TOL,
};
pub use derivative::{XOperator, YOperator};

use crate::diffusion::{edge_coefficient, spmv, spmv_t, Conductivity, SparseMat};
use crate::error::{invalid, Error, Result};
use crate::mesh::{CoarsePartition, Slot};
use crate::parallel::WorkerPool;
use crate::solvers::Factorization;

/// Per-block results of the local solves.
#[derive(Debug, Clone)]
struct BlockBasis {
    /// Factor of `A_II(m)`; `None` for blocks without interior nodes.
    factor: Option<Factorization>,
    /// `(function, position in its block list)` for every function
    /// touching this block, by increasing function index.
    members: Vec<(usize, usize)>,
    /// Interior values, one column per member.
    interior: Mat<f64>,
}

impl BlockBasis {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.factor {
            Some(f) => f.solve(rhs),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    partition: Arc<CoarsePartition>,
    bcs: Arc<BoundaryConditionSet>,
    model: Vec<f64>,
    cond: Conductivity,
    blocks: Vec<BlockBasis>,
    matrix: SparseMat,
    workers: WorkerPool,
}

impl MultiscaleBasis {
    /// Runs the local solves of every (function, block) pair at model `m`.
    pub fn assemble(
        partition: &Arc<CoarsePartition>,
        bcs: &Arc<BoundaryConditionSet>,
        m: &[f64],
        workers: &WorkerPool,
    ) -> Result<Self> {
        let mesh = partition.mesh();
        if m.len() != mesh.num_cells() {
            return invalid(format!("model has {} entries, mesh has {} cells", m.len(), mesh.num_cells()));
        }
        if bcs.is_empty() {
            return invalid("boundary condition set is empty");
        }
        let cond = Conductivity::from_model(m)?;
        let nblocks = partition.num_blocks();
        let mut members = vec![Vec::new(); nblocks];
        for (f, func) in bcs.functions().iter().enumerate() {
            for (pos, bd) in func.blocks.iter().enumerate() {
                if bd.block >= nblocks || bd.boundary.len() != partition.blocks()[bd.block].boundary.len() {
                    return invalid(format!("function {f} does not match the partition"));
                }
                members[bd.block].push((f, pos));
            }
        }
        let blocks = workers.try_map(nblocks, |j| {
            local_solves(partition, bcs, &cond.sigma, j, members[j].clone())
        })?;
        let matrix = merge_columns(partition, bcs, &blocks);
        Ok(Self {
            partition: Arc::clone(partition),
            bcs: Arc::clone(bcs),
            model: m.to_vec(),
            cond,
            blocks,
            matrix,
            workers: workers.clone(),
        })
    }

    pub fn partition(&self) -> &CoarsePartition {
        &self.partition
    }

    pub fn boundary_conditions(&self) -> &Arc<BoundaryConditionSet> {
        &self.bcs
    }

    /// Number of columns `k`.
    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn families(&self) -> Vec<Family> {
        self.bcs.families()
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn workers(&self) -> &WorkerPool {
        &self.workers
    }

    pub fn set_workers(&mut self, workers: WorkerPool) {
        self.workers = workers;
    }

    /// `S_k` in pinned row numbering.
    pub fn matrix(&self) -> SparseColMatRef<'_, usize, f64> {
        self.matrix.as_ref()
    }

    /// `S_k v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        spmv(self.matrix.as_ref(), v)
    }

    /// `S_k^T w`.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        spmv_t(self.matrix.as_ref(), w)
    }

    /// Fails with [`Error::StaleBasis`] unless the basis was built at `m`.
    pub fn check_model(&self, m: &[f64]) -> Result<()> {
        let same = m.len() == self.model.len() && m.iter().zip(&self.model).all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            Ok(())
        } else {
            Err(Error::StaleBasis)
        }
    }

    /// Derivative of `S_k(m) v` with respect to `m`.
    pub fn derivative_y(&self, v: &[f64], m: &[f64]) -> Result<YOperator<'_>> {
        self.check_model(m)?;
        YOperator::new(self, v)
    }

    /// Derivative of `S_k(m)^T w` with respect to `m`.
    pub fn derivative_x(&self, w: &[f64], m: &[f64]) -> Result<XOperator<'_>> {
        self.check_model(m)?;
        XOperator::new(self, w)
    }

    /// Writes `S_k` as `row col value` lines (pinned rows, zero based).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let s = self.matrix.as_ref();
        for c in 0..s.ncols() {
            for (&r, &v) in s.row_idx_of_col_raw(c).iter().zip(s.val_of_col(c)) {
                writeln!(out, "{r} {c} {v:e}")?;
            }
        }
        Ok(())
    }

    /// Values of function `f` (its `pos`-th block entry) at a slot of that block.
    fn value(&self, j: usize, member: usize, slot: Slot) -> f64 {
        let (f, pos) = self.blocks[j].members[member];
        match slot {
            Slot::Boundary(p) => self.bcs.functions()[f].blocks[pos].boundary[p],
            Slot::Interior(p) => self.blocks[j].interior[(p, member)],
        }
    }
}

fn local_solves(
    partition: &CoarsePartition,
    bcs: &BoundaryConditionSet,
    sigma: &[f64],
    j: usize,
    members: Vec<(usize, usize)>,
) -> Result<BlockBasis> {
    let mesh = partition.mesh();
    let blk = &partition.blocks()[j];
    let ni = blk.interior.len();
    let mut interior = Mat::<f64>::zeros(ni, members.len());
    if ni == 0 {
        return Ok(BlockBasis { factor: None, members, interior });
    }
    let mut trip = Vec::with_capacity(4 * blk.edges.len());
    for (&e, slots) in blk.edges.iter().zip(&blk.edge_slots) {
        let k = edge_coefficient(mesh, e, sigma);
        match *slots {
            [Slot::Interior(a), Slot::Interior(b)] => {
                trip.push(Triplet::new(a, a, k));
                trip.push(Triplet::new(b, b, k));
                trip.push(Triplet::new(a, b, -k));
                trip.push(Triplet::new(b, a, -k));
            }
            [Slot::Interior(a), Slot::Boundary(_)] | [Slot::Boundary(_), Slot::Interior(a)] => {
                trip.push(Triplet::new(a, a, k));
            }
            _ => unreachable!("block edges touch the interior"),
        }
    }
    let a_ii = SparseColMat::try_new_from_triplets(ni, ni, &trip).expect("valid local triplets");
    let factor = Factorization::new(a_ii.as_ref())?;

    for (col, &(f, pos)) in members.iter().enumerate() {
        let bd = &bcs.functions()[f].blocks[pos];
        if let Some(q) = &bd.forcing {
            for (p, &v) in q.iter().enumerate() {
                interior[(p, col)] = v;
            }
        }
        for (&e, slots) in blk.edges.iter().zip(&blk.edge_slots) {
            let (a, b) = match *slots {
                [Slot::Interior(a), Slot::Boundary(b)] | [Slot::Boundary(b), Slot::Interior(a)] => (a, b),
                _ => continue,
            };
            let xb = bd.boundary[b];
            if xb != 0.0 {
                interior[(a, col)] += edge_coefficient(mesh, e, sigma) * xb;
            }
        }
    }
    factor.solve_in_place(interior.as_mut());
    Ok(BlockBasis { factor: Some(factor), members, interior })
}

fn merge_columns(partition: &CoarsePartition, bcs: &BoundaryConditionSet, blocks: &[BlockBasis]) -> SparseMat {
    let nrows = partition.mesh().num_free_nodes();
    let mut column_of: Vec<Vec<usize>> = bcs.functions().iter().map(|f| vec![0; f.blocks.len()]).collect();
    for blk in blocks {
        for (col, &(f, pos)) in blk.members.iter().enumerate() {
            column_of[f][pos] = col;
        }
    }
    let mut trip = Vec::new();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (f, func) in bcs.functions().iter().enumerate() {
        entries.clear();
        for (pos, bd) in func.blocks.iter().enumerate() {
            let geo = &partition.blocks()[bd.block];
            for (&node, &v) in geo.boundary.iter().zip(&bd.boundary) {
                if v != 0.0 {
                    entries.push((node - 1, v));
                }
            }
            let col = column_of[f][pos];
            let vals = blocks[bd.block].interior.col(col);
            for (&node, &v) in geo.interior.iter().zip(vals.iter()) {
                if v != 0.0 {
                    entries.push((node - 1, v));
                }
            }
        }
        // shared skeleton nodes appear once per adjacent block with equal values
        entries.sort_by_key(|e| e.0);
        entries.dedup_by_key(|e| e.0);
        trip.extend(entries.iter().map(|&(r, v)| Triplet::new(r, f, v)));
    }
    SparseColMat::try_new_from_triplets(nrows, bcs.len(), &trip).expect("valid basis triplets")
}
