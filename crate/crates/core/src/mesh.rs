//! Uniform 3D tensor mesh and its nested coarse partition.
//!
//! Nodes and cells are numbered lexicographically with x fastest. The node
//! with linear index 0 is the pinned node of the discrete operator, so nodal
//! vectors in "pinned" numbering are indexed by `node - 1`.

use crate::error::{invalid, Result};

/// Index of the node whose potential is fixed to zero.
pub const PINNED_NODE: usize = 0;

/// A node-to-node edge of the nodal grid together with the (up to four)
/// cells that share it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Lower and upper endpoint along `axis`.
    pub nodes: [usize; 2],
    pub axis: usize,
    cells: [usize; 4],
    ncells: u8,
}

impl Edge {
    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.ncells as usize]
    }
}

#[derive(Debug, Clone)]
pub struct TensorMesh {
    n: [usize; 3],
    h: [f64; 3],
    edges: Vec<Edge>,
}

impl TensorMesh {
    pub fn new(n: [usize; 3], h: [f64; 3]) -> Result<Self> {
        if n.contains(&0) {
            return invalid(format!("cell counts must be >= 1, got {n:?}"));
        }
        if h.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid(format!("cell widths must be positive, got {h:?}"));
        }
        let mut mesh = Self { n, h, edges: Vec::new() };
        mesh.edges = mesh.build_edges();
        Ok(mesh)
    }

    pub fn cells_per_axis(&self) -> [usize; 3] {
        self.n
    }

    pub fn widths(&self) -> [f64; 3] {
        self.h
    }

    pub fn num_cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn num_nodes(&self) -> usize {
        (self.n[0] + 1) * (self.n[1] + 1) * (self.n[2] + 1)
    }

    /// Size of nodal vectors once the pinned node is eliminated.
    pub fn num_free_nodes(&self) -> usize {
        self.num_nodes() - 1
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i <= self.n[0] && j <= self.n[1] && k <= self.n[2]);
        i + (self.n[0] + 1) * (j + (self.n[1] + 1) * k)
    }

    pub fn node_triple(&self, idx: usize) -> [usize; 3] {
        let nx = self.n[0] + 1;
        let ny = self.n[1] + 1;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.n[0] && j < self.n[1] && k < self.n[2]);
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn cell_triple(&self, idx: usize) -> [usize; 3] {
        let nx = self.n[0];
        let ny = self.n[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn node_coords(&self, idx: usize) -> [f64; 3] {
        let t = self.node_triple(idx);
        [t[0] as f64 * self.h[0], t[1] as f64 * self.h[1], t[2] as f64 * self.h[2]]
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let t = self.cell_triple(idx);
        [
            (t[0] as f64 + 0.5) * self.h[0],
            (t[1] as f64 + 0.5) * self.h[1],
            (t[2] as f64 + 0.5) * self.h[2],
        ]
    }

    /// All nodal edges: x-edges first, then y, then z, each block in
    /// lexicographic order of the lower endpoint.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    fn build_edges(&self) -> Vec<Edge> {
        let [n1, n2, n3] = self.n;
        let mut edges = Vec::with_capacity(3 * self.num_nodes());
        for axis in 0..3 {
            let mut upper = [n1, n2, n3];
            upper[axis] -= 1;
            for k in 0..=upper[2] {
                for j in 0..=upper[1] {
                    for i in 0..=upper[0] {
                        let lo = [i, j, k];
                        let mut hi = lo;
                        hi[axis] += 1;
                        edges.push(self.make_edge(axis, lo, hi));
                    }
                }
            }
        }
        edges
    }

    fn make_edge(&self, axis: usize, lo: [usize; 3], hi: [usize; 3]) -> Edge {
        let (t1, t2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut cells = [0; 4];
        let mut ncells = 0u8;
        for d2 in 0..2 {
            for d1 in 0..2 {
                let mut c = lo;
                // the cell "below" along a transverse axis starts one node earlier
                if d1 == 0 {
                    if lo[t1] == 0 {
                        continue;
                    }
                    c[t1] -= 1;
                } else if lo[t1] == self.n[t1] {
                    continue;
                }
                if d2 == 0 {
                    if lo[t2] == 0 {
                        continue;
                    }
                    c[t2] -= 1;
                } else if lo[t2] == self.n[t2] {
                    continue;
                }
                cells[ncells as usize] = self.cell_index(c[0], c[1], c[2]);
                ncells += 1;
            }
        }
        Edge {
            nodes: [self.node_index(lo[0], lo[1], lo[2]), self.node_index(hi[0], hi[1], hi[2])],
            axis,
            cells,
            ncells,
        }
    }
}

/// Position of a block node within `Block::interior` or `Block::boundary`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Interior(usize),
    Boundary(usize),
}

/// One coarse block of the partition.
#[derive(Debug, Clone)]
pub struct Block {
    /// Block coordinates in the coarse grid.
    pub coords: [usize; 3],
    /// Lowest fine node triple of the block.
    pub origin: [usize; 3],
    pub cells: Vec<usize>,
    /// Nodes strictly inside the block, sorted.
    pub interior: Vec<usize>,
    /// Nodes on the block boundary, sorted.
    pub boundary: Vec<usize>,
    /// Edges with at least one interior endpoint. All of their adjacent cells
    /// belong to this block.
    pub edges: Vec<usize>,
    /// Endpoint slots of each entry of `edges`.
    pub edge_slots: Vec<[Slot; 2]>,
}

#[derive(Debug, Clone)]
pub struct CoarsePartition {
    mesh: TensorMesh,
    b: [usize; 3],
    nb: [usize; 3],
    blocks: Vec<Block>,
    /// Slot of every local node position; identical for all blocks.
    slots: Vec<Slot>,
}

impl CoarsePartition {
    pub fn new(mesh: &TensorMesh, b: [usize; 3]) -> Result<Self> {
        let n = mesh.cells_per_axis();
        for d in 0..3 {
            if b[d] == 0 || !n[d].is_multiple_of(b[d]) {
                return invalid(format!(
                    "block size {} does not tile {} cells along axis {d}",
                    b[d], n[d]
                ));
            }
        }
        let nb = [n[0] / b[0], n[1] / b[1], n[2] / b[2]];
        let mut partition = Self { mesh: mesh.clone(), b, nb, blocks: Vec::new(), slots: Vec::new() };
        partition.slots = partition.build_slots();
        let mut blocks = Vec::with_capacity(nb[0] * nb[1] * nb[2]);
        for bk in 0..nb[2] {
            for bj in 0..nb[1] {
                for bi in 0..nb[0] {
                    blocks.push(partition.build_block([bi, bj, bk]));
                }
            }
        }
        partition.attach_edges(&mut blocks);
        partition.blocks = blocks;
        Ok(partition)
    }

    fn build_block(&self, coords: [usize; 3]) -> Block {
        let origin = [coords[0] * self.b[0], coords[1] * self.b[1], coords[2] * self.b[2]];
        let mut cells = Vec::with_capacity(self.b.iter().product());
        for k in 0..self.b[2] {
            for j in 0..self.b[1] {
                for i in 0..self.b[0] {
                    cells.push(self.mesh.cell_index(origin[0] + i, origin[1] + j, origin[2] + k));
                }
            }
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for k in 0..=self.b[2] {
            for j in 0..=self.b[1] {
                for i in 0..=self.b[0] {
                    let node = self.mesh.node_index(origin[0] + i, origin[1] + j, origin[2] + k);
                    let inside = i > 0
                        && i < self.b[0]
                        && j > 0
                        && j < self.b[1]
                        && k > 0
                        && k < self.b[2];
                    if inside {
                        interior.push(node);
                    } else {
                        boundary.push(node);
                    }
                }
            }
        }
        Block { coords, origin, cells, interior, boundary, edges: Vec::new(), edge_slots: Vec::new() }
    }

    fn build_slots(&self) -> Vec<Slot> {
        let mut slots = Vec::with_capacity(self.nodes_per_block());
        let (mut ni, mut nb) = (0, 0);
        for k in 0..=self.b[2] {
            for j in 0..=self.b[1] {
                for i in 0..=self.b[0] {
                    let inside = i > 0 && i < self.b[0] && j > 0 && j < self.b[1] && k > 0 && k < self.b[2];
                    if inside {
                        slots.push(Slot::Interior(ni));
                        ni += 1;
                    } else {
                        slots.push(Slot::Boundary(nb));
                        nb += 1;
                    }
                }
            }
        }
        slots
    }

    fn attach_edges(&self, blocks: &mut [Block]) {
        for (e, edge) in self.mesh.edges().iter().enumerate() {
            // an edge touching an interior node has its owning block fixed by that node
            for &node in &edge.nodes {
                if let Some(j) = self.interior_owner(node) {
                    let o = blocks[j].origin;
                    let slots = edge.nodes.map(|n| {
                        let t = self.mesh.node_triple(n);
                        let l = (t[0] - o[0]) + (self.b[0] + 1) * ((t[1] - o[1]) + (self.b[1] + 1) * (t[2] - o[2]));
                        self.slots[l]
                    });
                    blocks[j].edges.push(e);
                    blocks[j].edge_slots.push(slots);
                    break;
                }
            }
        }
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn block_size(&self) -> [usize; 3] {
        self.b
    }

    pub fn blocks_per_axis(&self) -> [usize; 3] {
        self.nb
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> Result<&Block> {
        match self.blocks.get(j) {
            Some(b) => Ok(b),
            None => invalid(format!("block {j} out of range (N_c = {})", self.blocks.len())),
        }
    }

    /// Interior and boundary node ids of block `j`, both sorted.
    pub fn block_node_sets(&self, j: usize) -> Result<(&[usize], &[usize])> {
        let b = self.block(j)?;
        Ok((&b.interior, &b.boundary))
    }

    pub fn block_index(&self, bi: usize, bj: usize, bk: usize) -> usize {
        bi + self.nb[0] * (bj + self.nb[1] * bk)
    }

    pub fn num_coarse_nodes(&self) -> usize {
        (self.nb[0] + 1) * (self.nb[1] + 1) * (self.nb[2] + 1)
    }

    /// Coarse node triple -> fine node index.
    pub fn coarse_node_fine_index(&self, c: usize) -> usize {
        let t = self.coarse_node_triple(c);
        self.mesh.node_index(t[0] * self.b[0], t[1] * self.b[1], t[2] * self.b[2])
    }

    pub fn coarse_node_triple(&self, c: usize) -> [usize; 3] {
        let nx = self.nb[0] + 1;
        let ny = self.nb[1] + 1;
        [c % nx, (c / nx) % ny, c / (nx * ny)]
    }

    pub fn is_skeleton(&self, node: usize) -> bool {
        let t = self.mesh.node_triple(node);
        (0..3).any(|d| t[d].is_multiple_of(self.b[d]))
    }

    /// Sorted list of all skeleton nodes.
    pub fn skeleton_nodes(&self) -> Vec<usize> {
        (0..self.mesh.num_nodes()).filter(|&n| self.is_skeleton(n)).collect()
    }

    /// Block whose interior contains `node`, if any.
    pub fn interior_owner(&self, node: usize) -> Option<usize> {
        if self.is_skeleton(node) {
            return None;
        }
        let t = self.mesh.node_triple(node);
        Some(self.block_index(t[0] / self.b[0], t[1] / self.b[1], t[2] / self.b[2]))
    }

    /// All blocks whose closure contains `node`, in increasing order.
    pub fn blocks_containing(&self, node: usize) -> Vec<usize> {
        let t = self.mesh.node_triple(node);
        let mut ranges = [[0usize; 2]; 3];
        for d in 0..3 {
            let q = t[d] / self.b[d];
            if t[d].is_multiple_of(self.b[d]) {
                ranges[d] = [q.saturating_sub(1), q.min(self.nb[d] - 1)];
            } else {
                ranges[d] = [q, q];
            }
        }
        let mut out = Vec::with_capacity(8);
        for bk in ranges[2][0]..=ranges[2][1] {
            for bj in ranges[1][0]..=ranges[1][1] {
                for bi in ranges[0][0]..=ranges[0][1] {
                    out.push(self.block_index(bi, bj, bk));
                }
            }
        }
        out
    }

    /// Position of `node` within the closure of block `j` (x fastest over
    /// the `(b1+1)(b2+1)(b3+1)` block nodes). `None` if outside the block.
    pub fn local_node(&self, j: usize, node: usize) -> Option<usize> {
        let block = &self.blocks[j];
        let t = self.mesh.node_triple(node);
        let mut l = [0usize; 3];
        for d in 0..3 {
            if t[d] < block.origin[d] || t[d] > block.origin[d] + self.b[d] {
                return None;
            }
            l[d] = t[d] - block.origin[d];
        }
        Some(l[0] + (self.b[0] + 1) * (l[1] + (self.b[1] + 1) * l[2]))
    }

    /// Position of an interior node within `Block::interior` of block `j`.
    pub fn local_interior(&self, j: usize, node: usize) -> Option<usize> {
        let block = &self.blocks[j];
        let t = self.mesh.node_triple(node);
        let mut l = [0usize; 3];
        for d in 0..3 {
            if t[d] <= block.origin[d] || t[d] >= block.origin[d] + self.b[d] {
                return None;
            }
            l[d] = t[d] - block.origin[d] - 1;
        }
        Some(l[0] + (self.b[0] - 1) * (l[1] + (self.b[1] - 1) * l[2]))
    }

    /// Slot of `node` in block `j`, `None` if outside the block closure.
    pub fn slot(&self, j: usize, node: usize) -> Option<Slot> {
        self.local_node(j, node).map(|l| self.slots[l])
    }

    /// Position of `cell` within `Block::cells` of block `j`.
    pub fn local_cell(&self, j: usize, cell: usize) -> usize {
        let o = self.blocks[j].origin;
        let t = self.mesh.cell_triple(cell);
        (t[0] - o[0]) + self.b[0] * ((t[1] - o[1]) + self.b[1] * (t[2] - o[2]))
    }

    pub fn nodes_per_block(&self) -> usize {
        (self.b[0] + 1) * (self.b[1] + 1) * (self.b[2] + 1)
    }
}
