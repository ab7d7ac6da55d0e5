//! Nodal finite volume discretization of `-div(sigma grad u)` with
//! homogeneous Neumann boundaries.
//!
//! The operator is `A(m) = G^T diag(w(m)) G` where `G` is the nodal edge
//! difference operator and each edge weight is
//! `w_e = V/4 * sum(sigma_c)` over the cells sharing the edge, i.e. the
//! arithmetic mean of the adjacent conductivities times the edge's dual
//! volume. The pinned node is eliminated by deleting its row and column.

use faer::sparse::{SparseColMat, SparseColMatRef, Triplet};

use crate::error::{invalid, Error, Result};
use crate::mesh::{TensorMesh, PINNED_NODE};

pub type SparseMat = SparseColMat<usize, f64>;

/// Cell conductivities `sigma = exp(m)` and their derivative w.r.t. `m`.
#[derive(Debug, Clone)]
pub struct Conductivity {
    pub sigma: Vec<f64>,
    pub dsigma: Vec<f64>,
}

impl Conductivity {
    pub fn from_model(m: &[f64]) -> Result<Self> {
        if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite entry at cell {pos}")));
        }
        let sigma: Vec<f64> = m.iter().map(|v| v.exp()).collect();
        if let Some(pos) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel(format!("conductivity out of range at cell {pos}")));
        }
        // exp is its own derivative
        let dsigma = sigma.clone();
        Ok(Self { sigma, dsigma })
    }
}

pub fn sigma(m: &[f64]) -> Vec<f64> {
    m.iter().map(|v| v.exp()).collect()
}

pub fn sigma_deriv(m: &[f64]) -> Vec<f64> {
    sigma(m)
}

/// Map a full nodal vector to pinned numbering (drops the pinned entry).
pub fn pin(full: &[f64]) -> Vec<f64> {
    full[PINNED_NODE + 1..].to_vec()
}

/// Map a pinned nodal vector back to full numbering with a zero pinned entry.
pub fn unpin(pinned: &[f64]) -> Vec<f64> {
    let mut full = Vec::with_capacity(pinned.len() + 1);
    full.push(0.0);
    full.extend_from_slice(pinned);
    full
}

/// Sparse edge-by-node difference operator with entries `-1/h` and `+1/h`.
pub fn nodal_gradient(mesh: &TensorMesh) -> SparseMat {
    let h = mesh.widths();
    let mut t = Vec::with_capacity(2 * mesh.num_edges());
    for (e, edge) in mesh.edges().iter().enumerate() {
        let inv = 1.0 / h[edge.axis];
        t.push(Triplet::new(e, edge.nodes[0], -inv));
        t.push(Triplet::new(e, edge.nodes[1], inv));
    }
    SparseColMat::try_new_from_triplets(mesh.num_edges(), mesh.num_nodes(), &t)
        .expect("valid gradient triplets")
}

/// Edge weights `V/4 * sum(values over adjacent cells)`.
pub fn edge_average(mesh: &TensorMesh, cell_values: &[f64]) -> Vec<f64> {
    let q = 0.25 * mesh.cell_volume();
    mesh.edges()
        .iter()
        .map(|e| q * e.cells().iter().map(|&c| cell_values[c]).sum::<f64>())
        .collect()
}

/// Stiffness coefficient of edge `e` (weight divided by squared length).
#[inline]
pub(crate) fn edge_coefficient(mesh: &TensorMesh, e: usize, sigma: &[f64]) -> f64 {
    let edge = &mesh.edges()[e];
    let h = mesh.widths()[edge.axis];
    0.25 * mesh.cell_volume() * edge.cells().iter().map(|&c| sigma[c]).sum::<f64>() / (h * h)
}

/// The assembled diffusion operator, kept both with and without the pinned
/// node. Immutable once built.
#[derive(Debug, Clone)]
pub struct SparseSymOperator {
    full: SparseMat,
    pinned: SparseMat,
    edge_weights: Vec<f64>,
}

impl SparseSymOperator {
    pub fn assemble(mesh: &TensorMesh, m: &[f64]) -> Result<Self> {
        if m.len() != mesh.num_cells() {
            return invalid(format!("model has {} entries, mesh has {} cells", m.len(), mesh.num_cells()));
        }
        let cond = Conductivity::from_model(m)?;
        Ok(Self::from_sigma(mesh, &cond.sigma))
    }

    pub fn from_sigma(mesh: &TensorMesh, sigma: &[f64]) -> Self {
        let edge_weights = edge_average(mesh, sigma);
        let h = mesh.widths();
        let n = mesh.num_nodes();
        let mut full_t = Vec::with_capacity(4 * mesh.num_edges());
        let mut pinned_t = Vec::with_capacity(4 * mesh.num_edges());
        for (edge, &w) in mesh.edges().iter().zip(&edge_weights) {
            let k = w / (h[edge.axis] * h[edge.axis]);
            let [a, b] = edge.nodes;
            for (r, c, v) in [(a, a, k), (b, b, k), (a, b, -k), (b, a, -k)] {
                full_t.push(Triplet::new(r, c, v));
                if r != PINNED_NODE && c != PINNED_NODE {
                    pinned_t.push(Triplet::new(r - 1, c - 1, v));
                }
            }
        }
        let full = SparseColMat::try_new_from_triplets(n, n, &full_t).expect("valid operator triplets");
        let pinned =
            SparseColMat::try_new_from_triplets(n - 1, n - 1, &pinned_t).expect("valid operator triplets");
        Self { full, pinned, edge_weights }
    }

    pub fn pinned(&self) -> SparseColMatRef<'_, usize, f64> {
        self.pinned.as_ref()
    }

    pub fn full(&self) -> SparseColMatRef<'_, usize, f64> {
        self.full.as_ref()
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    pub fn dim(&self) -> usize {
        self.pinned.nrows()
    }

    /// `A x` on pinned vectors.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        spmv(self.pinned.as_ref(), x)
    }
}

/// `y = A x` for a column-major sparse matrix.
pub fn spmv(a: SparseColMatRef<'_, usize, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (&i, &v) in a.row_idx_of_col_raw(j).iter().zip(a.val_of_col(j)) {
            y[i] += v * xj;
        }
    }
    y
}

/// `y = A^T x` for a column-major sparse matrix.
pub fn spmv_t(a: SparseColMatRef<'_, usize, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| {
            a.row_idx_of_col_raw(j)
                .iter()
                .zip(a.val_of_col(j))
                .map(|(&i, &v)| v * x[i])
                .sum()
        })
        .collect()
}

/// `grad_m (A(m) u)` for a fixed nodal field `u`, applied matrix-free.
///
/// Equals `G^T diag(G u) C diag(sigma'(m))` with `C` the cell-to-edge
/// averaging used in the assembly. Rows are in pinned numbering.
#[derive(Debug, Clone)]
pub struct GradAu<'a> {
    mesh: &'a TensorMesh,
    dsigma: &'a [f64],
    /// `(u_a - u_b) / h^2` per edge.
    flux: Vec<f64>,
}

impl<'a> GradAu<'a> {
    /// `u` is a pinned nodal vector (its pinned entry is implicitly zero).
    pub fn new(mesh: &'a TensorMesh, cond: &'a Conductivity, u: &[f64]) -> Result<Self> {
        if u.len() != mesh.num_free_nodes() {
            return invalid(format!("field has {} entries, expected {}", u.len(), mesh.num_free_nodes()));
        }
        if cond.dsigma.len() != mesh.num_cells() {
            return invalid("conductivity does not match mesh");
        }
        let h = mesh.widths();
        let val = |n: usize| if n == PINNED_NODE { 0.0 } else { u[n - 1] };
        let flux = mesh
            .edges()
            .iter()
            .map(|e| (val(e.nodes[0]) - val(e.nodes[1])) / (h[e.axis] * h[e.axis]))
            .collect();
        Ok(Self { mesh, dsigma: &cond.dsigma, flux })
    }

    pub fn apply(&self, dm: &[f64]) -> Vec<f64> {
        assert_eq!(dm.len(), self.mesh.num_cells());
        let q = 0.25 * self.mesh.cell_volume();
        let mut out = vec![0.0; self.mesh.num_nodes()];
        for (edge, &f) in self.mesh.edges().iter().zip(&self.flux) {
            if f == 0.0 {
                continue;
            }
            let dw = q * edge.cells().iter().map(|&c| self.dsigma[c] * dm[c]).sum::<f64>();
            out[edge.nodes[0]] += f * dw;
            out[edge.nodes[1]] -= f * dw;
        }
        pin(&out)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.mesh.num_free_nodes());
        let q = 0.25 * self.mesh.cell_volume();
        let val = |n: usize| if n == PINNED_NODE { 0.0 } else { y[n - 1] };
        let mut out = vec![0.0; self.mesh.num_cells()];
        for (edge, &f) in self.mesh.edges().iter().zip(&self.flux) {
            if f == 0.0 {
                continue;
            }
            let s = q * f * (val(edge.nodes[0]) - val(edge.nodes[1]));
            for &c in edge.cells() {
                out[c] += self.dsigma[c] * s;
            }
        }
        out
    }
}
