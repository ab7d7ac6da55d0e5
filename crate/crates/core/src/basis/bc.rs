//! Boundary condition families for the local basis problems.
//!
//! Every basis function is stored per block: Dirichlet values on the block
//! boundary `B_j` and, for source functions, a forcing on the interior `I_j`.
//! Blocks not listed carry implicit zeros.

use faer::sparse::SparseColMatRef;
use faer::Mat;

use crate::diffusion::{unpin, SparseSymOperator};
use crate::error::{invalid, Result};
use crate::mesh::{CoarsePartition, Slot, PINNED_NODE};
use crate::solvers::Factorization;

/// Relative singular value threshold below which PCA components are dropped.
pub const PCA_DROP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Lagrange,
    Source,
    Skeleton,
    LocalPca,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lagrange => "lagrange",
            Family::Source => "source",
            Family::Skeleton => "skeleton",
            Family::LocalPca => "local_pca",
        }
    }
}

/// How many principal boundary traces to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalPcaSelection {
    /// The leading `r` components of every block.
    PerBlock(usize),
    /// The `n` components with the largest singular values over all blocks.
    Total(usize),
}

/// Which families make up the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub lagrange: bool,
    pub source: bool,
    pub skeleton: bool,
    pub local_pca: Option<LocalPcaSelection>,
}

impl BasisSpec {
    pub fn lagrange_only() -> Self {
        Self { lagrange: true, source: false, skeleton: false, local_pca: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lagrange || self.source || self.skeleton || self.local_pca.is_some()) {
            return invalid("basis spec enables no family");
        }
        match self.local_pca {
            Some(LocalPcaSelection::PerBlock(0)) | Some(LocalPcaSelection::Total(0)) => {
                invalid("local PCA needs at least one component")
            }
            _ => Ok(()),
        }
    }

    /// Whether fine solves at the reference model are needed.
    pub fn needs_reference_fields(&self) -> bool {
        self.skeleton || self.local_pca.is_some()
    }
}

/// Data of one basis function on one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockData {
    pub block: usize,
    /// Values on `Block::boundary`, same order.
    pub boundary: Vec<f64>,
    /// Forcing on `Block::interior`, if any.
    pub forcing: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub family: Family,
    /// Touched blocks in increasing order.
    pub blocks: Vec<BlockData>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditionSet {
    functions: Vec<BasisFunction>,
    dropped: usize,
}

impl BoundaryConditionSet {
    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Functions discarded because all their data vanished.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn count(&self, family: Family) -> usize {
        self.functions.iter().filter(|f| f.family == family).count()
    }

    pub fn families(&self) -> Vec<Family> {
        self.functions.iter().map(|f| f.family).collect()
    }

    pub fn append(&mut self, other: BoundaryConditionSet) {
        self.functions.extend(other.functions);
        self.dropped += other.dropped;
    }

    /// Zeroes the pinned node, drops empty blocks, and drops the function if
    /// nothing is left.
    fn push(&mut self, partition: &CoarsePartition, mut f: BasisFunction) {
        for bd in &mut f.blocks {
            if let Some(Slot::Boundary(p)) = partition.slot(bd.block, PINNED_NODE) {
                bd.boundary[p] = 0.0;
            }
        }
        f.blocks.retain(|bd| {
            bd.boundary.iter().any(|&v| v != 0.0)
                || bd.forcing.as_ref().is_some_and(|q| q.iter().any(|&v| v != 0.0))
        });
        if f.blocks.is_empty() {
            self.dropped += 1;
        } else {
            self.functions.push(f);
        }
    }

    /// One function per coarse node with the trilinear hat as Dirichlet data.
    pub fn lagrange(partition: &CoarsePartition) -> Self {
        let mesh = partition.mesh();
        let b = partition.block_size();
        let mut set = Self::default();
        for c in 0..partition.num_coarse_nodes() {
            let ct = partition.coarse_node_triple(c);
            let hat = |node: usize| {
                let t = mesh.node_triple(node);
                (0..3)
                    .map(|d| (1.0 - (t[d] as f64 / b[d] as f64 - ct[d] as f64).abs()).max(0.0))
                    .product::<f64>()
            };
            let blocks = partition
                .blocks_containing(partition.coarse_node_fine_index(c))
                .into_iter()
                .map(|j| BlockData {
                    block: j,
                    boundary: partition.blocks()[j].boundary.iter().map(|&n| hat(n)).collect(),
                    forcing: None,
                })
                .collect();
            set.push(partition, BasisFunction { family: Family::Lagrange, blocks });
        }
        set
    }

    /// One function per source column of `q` (pinned numbering): the source
    /// restricted to block interiors, zero Dirichlet data.
    pub fn source(partition: &CoarsePartition, q: SparseColMatRef<'_, usize, f64>) -> Result<Self> {
        check_rows(partition, q.nrows())?;
        let mut set = Self::default();
        for s in 0..q.ncols() {
            let mut blocks: Vec<BlockData> = Vec::new();
            for (&row, &v) in q.row_idx_of_col_raw(s).iter().zip(q.val_of_col(s)) {
                let node = row + 1;
                let Some(j) = partition.interior_owner(node) else { continue };
                let Some(Slot::Interior(p)) = partition.slot(j, node) else { unreachable!() };
                let pos = match blocks.binary_search_by_key(&j, |bd| bd.block) {
                    Ok(pos) => pos,
                    Err(pos) => {
                        let blk = &partition.blocks()[j];
                        blocks.insert(
                            pos,
                            BlockData {
                                block: j,
                                boundary: vec![0.0; blk.boundary.len()],
                                forcing: Some(vec![0.0; blk.interior.len()]),
                            },
                        );
                        pos
                    }
                };
                blocks[pos].forcing.as_mut().unwrap()[p] += v;
            }
            set.push(partition, BasisFunction { family: Family::Source, blocks });
        }
        Ok(set)
    }

    /// One function per reference field (full nodal numbering), using its
    /// skeleton trace as Dirichlet data.
    pub fn skeleton(partition: &CoarsePartition, fields: &[Vec<f64>]) -> Result<Self> {
        let mut set = Self::default();
        for u in fields {
            check_full(partition, u.len())?;
            let blocks = partition
                .blocks()
                .iter()
                .enumerate()
                .map(|(j, blk)| BlockData {
                    block: j,
                    boundary: blk.boundary.iter().map(|&n| u[n]).collect(),
                    forcing: None,
                })
                .collect();
            set.push(partition, BasisFunction { family: Family::Skeleton, blocks });
        }
        Ok(set)
    }

    /// Principal directions of the reference traces on each block boundary,
    /// each supported on its own block only.
    ///
    /// Traces are not centered: the span of the leading right singular
    /// vectors is what enters the basis, and centering would discard the
    /// common component of identical traces.
    pub fn local_pca(partition: &CoarsePartition, fields: &[Vec<f64>], selection: LocalPcaSelection) -> Result<Self> {
        let ns = fields.len();
        if ns == 0 {
            return invalid("local PCA needs at least one reference field");
        }
        for u in fields {
            check_full(partition, u.len())?;
        }
        if let LocalPcaSelection::PerBlock(r) = selection {
            if r == 0 || r > ns {
                return invalid(format!("local PCA rank {r} must be in 1..={ns}"));
            }
        }
        // (singular value, block, component, direction)
        let mut candidates: Vec<(f64, usize, usize, Vec<f64>)> = Vec::new();
        for (j, blk) in partition.blocks().iter().enumerate() {
            let nb = blk.boundary.len();
            let traces = Mat::from_fn(ns, nb, |s, p| {
                let n = blk.boundary[p];
                if n == PINNED_NODE {
                    0.0
                } else {
                    fields[s][n]
                }
            });
            let svd = traces
                .thin_svd()
                .map_err(|e| crate::Error::Factorization(format!("trace SVD of block {j}: {e:?}")))?;
            let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            if smax == 0.0 {
                continue;
            }
            let keep = match selection {
                LocalPcaSelection::PerBlock(r) => r.min(sv.len()),
                LocalPcaSelection::Total(_) => sv.len(),
            };
            let v = svd.V();
            for (i, &s) in sv.iter().enumerate().take(keep) {
                if s < PCA_DROP_TOL * smax {
                    break;
                }
                let mut dir: Vec<f64> = (0..nb).map(|p| v[(p, i)]).collect();
                orient(&mut dir);
                candidates.push((s, j, i, dir));
            }
        }
        if let LocalPcaSelection::Total(n) = selection {
            if n > candidates.len() {
                return invalid(format!(
                    "requested {n} local components, only {} are available",
                    candidates.len()
                ));
            }
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                let (ca, cb) = (&candidates[a], &candidates[b]);
                cb.0.total_cmp(&ca.0).then((ca.1, ca.2).cmp(&(cb.1, cb.2)))
            });
            let mut chosen = vec![false; candidates.len()];
            for &i in order.iter().take(n) {
                chosen[i] = true;
            }
            let mut it = chosen.into_iter();
            candidates.retain(|_| it.next().unwrap());
        }
        let mut set = Self::default();
        for (_, j, _, dir) in candidates {
            set.push(
                partition,
                BasisFunction {
                    family: Family::LocalPca,
                    blocks: vec![BlockData { block: j, boundary: dir, forcing: None }],
                },
            );
        }
        Ok(set)
    }

    /// All enabled families in the canonical order lagrange, source,
    /// skeleton, local_pca. Reference fields are solved at `m_ref` when the
    /// spec needs them.
    pub fn generate(
        spec: &BasisSpec,
        partition: &CoarsePartition,
        m_ref: &[f64],
        q: SparseColMatRef<'_, usize, f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let fields = if spec.needs_reference_fields() {
            reference_fields(partition, m_ref, q)?
        } else {
            Vec::new()
        };
        let mut set = Self::default();
        if spec.lagrange {
            set.append(Self::lagrange(partition));
        }
        if spec.source {
            set.append(Self::source(partition, q)?);
        }
        if spec.skeleton {
            set.append(Self::skeleton(partition, &fields)?);
        }
        if let Some(sel) = spec.local_pca {
            set.append(Self::local_pca(partition, &fields, sel)?);
        }
        if set.is_empty() {
            return invalid("basis is empty after dropping zero functions");
        }
        Ok(set)
    }

    /// The identity basis for 1-cell blocks: one function per free node.
    /// Only useful on tiny meshes, where the reduced model equals the fine one.
    pub fn identity(partition: &CoarsePartition) -> Result<Self> {
        if partition.block_size() != [1, 1, 1] {
            return invalid("identity basis needs 1x1x1 blocks");
        }
        Ok(Self::lagrange(partition))
    }
}

/// Fine solutions at `m_ref` for every source column, in full nodal
/// numbering (pinned entry 0).
pub fn reference_fields(
    partition: &CoarsePartition,
    m_ref: &[f64],
    q: SparseColMatRef<'_, usize, f64>,
) -> Result<Vec<Vec<f64>>> {
    check_rows(partition, q.nrows())?;
    let op = SparseSymOperator::assemble(partition.mesh(), m_ref)?;
    let factor = Factorization::new(op.pinned())?;
    let rhs = q.to_dense();
    let sol = factor.solve_block(rhs.as_ref());
    Ok((0..q.ncols())
        .map(|s| unpin(&sol.col(s).iter().copied().collect::<Vec<_>>()))
        .collect())
}

/// Sign convention: the entry of largest magnitude is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn check_rows(partition: &CoarsePartition, rows: usize) -> Result<()> {
    let n = partition.mesh().num_free_nodes();
    if rows != n {
        return invalid(format!("source matrix has {rows} rows, expected {n}"));
    }
    Ok(())
}

fn check_full(partition: &CoarsePartition, len: usize) -> Result<()> {
    let n = partition.mesh().num_nodes();
    if len != n {
        return invalid(format!("reference field has {len} entries, expected {n}"));
    }
    Ok(())
}
