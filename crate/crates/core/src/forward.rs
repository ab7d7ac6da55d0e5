//! Full and reduced forward maps and their matrix-free sensitivities.
//!
//! Data are `N_r x N_s` matrices `D = P^T U`. In the reduced model the
//! fields are `U_k = S_k T` with coefficients `T = A_k^{-1} S_k^T Q` and
//! `A_k = S_k^T A S_k`.

use std::sync::Arc;

use faer::sparse::linalg::matmul::sparse_sparse_matmul;
use faer::sparse::{SparseColMat, SparseColMatRef, Triplet};
use faer::{Mat, MatRef, Par};

use crate::basis::{MultiscaleBasis, XOperator, YOperator};
use crate::diffusion::{spmv, Conductivity, GradAu, SparseMat, SparseSymOperator};
use crate::error::{invalid, Error, Result};
use crate::mesh::{TensorMesh, PINNED_NODE};
use crate::solvers::{block_cg, DenseSpd, Factorization, IterativeResult};

/// Reduced systems up to this size are factored densely.
pub const DENSE_REDUCED_LIMIT: usize = 5000;
/// Relative size of the diagonal shift for nearly singular `A_k`.
pub const REDUCED_SHIFT: f64 = 1e-12;
/// Pivot ratio below which `A_k` counts as nearly singular.
pub const PIVOT_RATIO_FLOOR: f64 = 1e-14;

/// Sources, receivers and (optionally) observed data.
#[derive(Debug, Clone)]
pub struct Survey {
    /// `P`, `N' x N_r`.
    pub receivers: SparseMat,
    /// `Q`, `N' x N_s`.
    pub sources: SparseMat,
    /// `N_r x N_s`.
    pub observed: Option<Mat<f64>>,
    pub noise_level: f64,
}

impl Survey {
    pub fn new(receivers: SparseMat, sources: SparseMat) -> Result<Self> {
        if receivers.nrows() != sources.nrows() {
            return invalid("receiver and source matrices have different row counts");
        }
        for (name, mat) in [("receiver", &receivers), ("source", &sources)] {
            if let Some(c) = (0..mat.ncols()).find(|&c| mat.val_of_col(c).iter().all(|&v| v == 0.0)) {
                return invalid(format!("{name} column {c} is zero"));
            }
            if mat.ncols() == 0 {
                return invalid(format!("survey has no {name}s"));
            }
        }
        Ok(Self { receivers, sources, observed: None, noise_level: 0.0 })
    }

    /// Point receivers at the given nodes and `+1/-1` dipole sources.
    pub fn from_nodes(mesh: &TensorMesh, receivers: &[usize], dipoles: &[(usize, usize)]) -> Result<Self> {
        let n = mesh.num_free_nodes();
        let check = |node: usize| -> Result<usize> {
            if node == PINNED_NODE || node > n {
                invalid(format!("node {node} cannot carry a source or receiver"))
            } else {
                Ok(node - 1)
            }
        };
        let mut pt = Vec::with_capacity(receivers.len());
        for (r, &node) in receivers.iter().enumerate() {
            pt.push(Triplet::new(check(node)?, r, 1.0));
        }
        let mut qt = Vec::with_capacity(2 * dipoles.len());
        for (s, &(plus, minus)) in dipoles.iter().enumerate() {
            if plus == minus {
                return invalid(format!("dipole {s} has coincident electrodes"));
            }
            qt.push(Triplet::new(check(plus)?, s, 1.0));
            qt.push(Triplet::new(check(minus)?, s, -1.0));
        }
        let p = SparseColMat::try_new_from_triplets(n, receivers.len(), &pt)
            .map_err(|e| Error::InvalidArgument(format!("receivers: {e:?}")))?;
        let q = SparseColMat::try_new_from_triplets(n, dipoles.len(), &qt)
            .map_err(|e| Error::InvalidArgument(format!("sources: {e:?}")))?;
        Self::new(p, q)
    }

    pub fn num_receivers(&self) -> usize {
        self.receivers.ncols()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.ncols()
    }

    pub fn observed(&self) -> Result<&Mat<f64>> {
        self.observed.as_ref().ok_or_else(|| Error::InvalidArgument("survey has no observed data".into()))
    }
}

/// `A^T B` for sparse `A` and dense `B`.
pub fn sparse_t_dense(a: SparseColMatRef<'_, usize, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.nrows(), b.nrows());
    Mat::from_fn(a.ncols(), b.ncols(), |r, s| {
        a.row_idx_of_col_raw(r).iter().zip(a.val_of_col(r)).map(|(&i, &v)| v * b[(i, s)]).sum()
    })
}

/// `A B` for sparse `A` and dense `B`.
pub fn sparse_dense(a: SparseColMatRef<'_, usize, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    for s in 0..b.ncols() {
        for c in 0..a.ncols() {
            let x = b[(c, s)];
            if x == 0.0 {
                continue;
            }
            for (&i, &v) in a.row_idx_of_col_raw(c).iter().zip(a.val_of_col(c)) {
                out[(i, s)] += v * x;
            }
        }
    }
    out
}

fn column(m: MatRef<'_, f64>, c: usize) -> Vec<f64> {
    m.col(c).iter().copied().collect()
}

fn from_columns(nrows: usize, cols: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(nrows, cols.len(), |i, j| cols[j][i])
}

/// How the fine system is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FineSolver {
    Direct,
    BlockCg { tol: f64, maxit: usize },
}

impl FineSolver {
    /// Tolerance and iteration cap used for the block CG experiments.
    pub fn block_cg_default() -> Self {
        FineSolver::BlockCg { tol: 1e-6, maxit: 100 }
    }
}

#[derive(Debug, Clone)]
enum FineFactor {
    Direct(Factorization),
    Iterative { tol: f64, maxit: usize },
}

/// Fine-mesh forward solution at one model.
#[derive(Debug, Clone)]
pub struct FullState {
    mesh: TensorMesh,
    model: Vec<f64>,
    cond: Conductivity,
    op: SparseSymOperator,
    factor: FineFactor,
    /// `U`, `N' x N_s`.
    pub fields: Mat<f64>,
    /// `P^T U`.
    pub data: Mat<f64>,
    /// Statistics of the last iterative solve, if any.
    pub last_cg: Option<IterativeResult>,
}

impl FullState {
    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn operator(&self) -> &SparseSymOperator {
        &self.op
    }

    /// `A(m)^{-1} B`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        Ok(self.solve_with_stats(b)?.0)
    }

    fn solve_with_stats(&self, b: MatRef<'_, f64>) -> Result<(Mat<f64>, Option<IterativeResult>)> {
        match &self.factor {
            FineFactor::Direct(f) => Ok((f.solve_block(b), None)),
            FineFactor::Iterative { tol, maxit } => {
                let a = self.op.pinned();
                let res = block_cg(|x| sparse_dense(a, x), b, *tol, *maxit)?;
                Ok((res.solution.clone(), Some(res)))
            }
        }
    }
}

/// `D = P^T A(m)^{-1} Q` on the fine mesh.
pub fn forward_full(mesh: &TensorMesh, m: &[f64], survey: &Survey, solver: FineSolver) -> Result<FullState> {
    if survey.sources.nrows() != mesh.num_free_nodes() {
        return invalid("survey does not match the mesh");
    }
    let op = SparseSymOperator::assemble(mesh, m)?;
    let cond = Conductivity::from_model(m)?;
    let factor = match solver {
        FineSolver::Direct => FineFactor::Direct(Factorization::new(op.pinned())?),
        FineSolver::BlockCg { tol, maxit } => FineFactor::Iterative { tol, maxit },
    };
    let mut state = FullState {
        mesh: mesh.clone(),
        model: m.to_vec(),
        cond,
        op,
        factor,
        fields: Mat::zeros(0, 0),
        data: Mat::zeros(0, 0),
        last_cg: None,
    };
    let (fields, stats) = state.solve_with_stats(survey.sources.to_dense().as_ref())?;
    state.data = sparse_t_dense(survey.receivers.as_ref(), fields.as_ref());
    state.fields = fields;
    state.last_cg = stats;
    Ok(state)
}

#[derive(Debug, Clone)]
enum ReducedFactor {
    Dense(DenseSpd),
    Sparse(Factorization),
}

impl ReducedFactor {
    fn solve_block(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        match self {
            ReducedFactor::Dense(f) => f.solve_block(b),
            ReducedFactor::Sparse(f) => f.solve_block(b),
        }
    }
}

/// Reduced forward solution at one model.
#[derive(Debug, Clone)]
pub struct ReducedState {
    basis: Arc<MultiscaleBasis>,
    model: Vec<f64>,
    cond: Conductivity,
    op: SparseSymOperator,
    factor: ReducedFactor,
    /// Diagonal shift added to `A_k`, zero unless it was nearly singular.
    pub shift: f64,
    /// `T`, `k x N_s`.
    pub coeffs: Mat<f64>,
    /// `P^T S_k T`.
    pub data: Mat<f64>,
}

impl ReducedState {
    pub fn basis(&self) -> &Arc<MultiscaleBasis> {
        &self.basis
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    /// `A_k^{-1} B`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.factor.solve_block(b)
    }

    /// Fine fields `S_k T`.
    pub fn fields(&self) -> Mat<f64> {
        sparse_dense(self.basis.matrix(), self.coeffs.as_ref())
    }
}

/// `A_k = S^T A S`, symmetrized, as sparse.
fn reduced_operator(op: &SparseSymOperator, s: SparseColMatRef<'_, usize, f64>) -> Result<SparseMat> {
    let map = |e: faer::sparse::FaerError| Error::Factorization(format!("reduced product: {e:?}"));
    let as_ = sparse_sparse_matmul(op.pinned(), s, 1.0, Par::Seq).map_err(map)?;
    let st = s.transpose().to_col_major().map_err(map)?;
    let ak = sparse_sparse_matmul(st.as_ref(), as_.as_ref(), 1.0, Par::Seq).map_err(map)?;
    let akt = ak.as_ref().transpose().to_col_major().map_err(map)?;
    let mut trip = Vec::with_capacity(2 * ak.compute_nnz());
    for (mat, w) in [(&ak, 0.5), (&akt, 0.5)] {
        for c in 0..mat.ncols() {
            for (&r, &v) in mat.row_idx_of_col_raw(c).iter().zip(mat.val_of_col(c)) {
                trip.push(Triplet::new(r, c, w * v));
            }
        }
    }
    SparseColMat::try_new_from_triplets(ak.nrows(), ak.ncols(), &trip)
        .map_err(|e| Error::Factorization(format!("reduced operator: {e:?}")))
}

fn factor_reduced(ak: &SparseMat) -> Result<(ReducedFactor, f64)> {
    let k = ak.nrows();
    let dense = k <= DENSE_REDUCED_LIMIT;
    let trace: f64 = (0..k)
        .map(|c| {
            ak.row_idx_of_col_raw(c).iter().zip(ak.val_of_col(c)).filter(|(&r, _)| r == c).map(|(_, &v)| v).sum::<f64>()
        })
        .sum();
    let lambda = REDUCED_SHIFT * trace / k as f64;
    let attempt = |shift: f64| -> Option<ReducedFactor> {
        if dense {
            let mut a = ak.to_dense();
            for i in 0..k {
                a[(i, i)] += shift;
            }
            let f = DenseSpd::new(a.as_ref()).ok()?;
            (f.pivot_ratio() >= PIVOT_RATIO_FLOOR || shift > 0.0).then_some(ReducedFactor::Dense(f))
        } else {
            let mut trip = Vec::with_capacity(ak.compute_nnz() + k);
            for c in 0..k {
                for (&r, &v) in ak.row_idx_of_col_raw(c).iter().zip(ak.val_of_col(c)) {
                    trip.push(Triplet::new(r, c, v));
                }
                trip.push(Triplet::new(c, c, shift));
            }
            let a = SparseColMat::try_new_from_triplets(k, k, &trip).ok()?;
            Factorization::new(a.as_ref()).ok().map(ReducedFactor::Sparse)
        }
    };
    if let Some(f) = attempt(0.0) {
        return Ok((f, 0.0));
    }
    if lambda > 0.0 && lambda.is_finite() {
        if let Some(f) = attempt(lambda) {
            return Ok((f, lambda));
        }
    }
    Err(Error::ReducedSingular)
}

/// `D_k = P^T S_k A_k^{-1} S_k^T Q` with `A(m)` and the given basis. The
/// basis may have been built at a different model (fixed mode).
pub fn forward_reduced(m: &[f64], survey: &Survey, basis: Arc<MultiscaleBasis>) -> Result<ReducedState> {
    let mesh = basis.partition().mesh();
    if survey.sources.nrows() != mesh.num_free_nodes() {
        return invalid("survey does not match the mesh");
    }
    let op = SparseSymOperator::assemble(mesh, m)?;
    let cond = Conductivity::from_model(m)?;
    let ak = reduced_operator(&op, basis.matrix())?;
    let (factor, shift) = factor_reduced(&ak)?;
    let sq = sparse_t_dense(basis.matrix(), survey.sources.to_dense().as_ref());
    let coeffs = factor.solve_block(sq.as_ref());
    let fields = sparse_dense(basis.matrix(), coeffs.as_ref());
    let data = sparse_t_dense(survey.receivers.as_ref(), fields.as_ref());
    Ok(ReducedState { basis, model: m.to_vec(), cond, op, factor, shift, coeffs, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensitivityMode {
    Full,
    Fixed,
    Adaptive,
}

impl SensitivityMode {
    pub fn name(self) -> &'static str {
        match self {
            SensitivityMode::Full => "full",
            SensitivityMode::Fixed => "ms-fixed",
            SensitivityMode::Adaptive => "ms-adaptive",
        }
    }
}

impl std::str::FromStr for SensitivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "ms-fixed" | "ms_fixed" | "fixed" => Ok(Self::Fixed),
            "ms-adaptive" | "ms_adaptive" | "adaptive" => Ok(Self::Adaptive),
            _ => invalid(format!("unknown mode {s:?}")),
        }
    }
}

/// Forward solution of either kind.
#[derive(Debug, Clone)]
pub enum ForwardState {
    Full(FullState),
    Reduced(ReducedState),
}

impl ForwardState {
    pub fn data(&self) -> &Mat<f64> {
        match self {
            ForwardState::Full(s) => &s.data,
            ForwardState::Reduced(s) => &s.data,
        }
    }

    pub fn model(&self) -> &[f64] {
        match self {
            ForwardState::Full(s) => &s.model,
            ForwardState::Reduced(s) => &s.model,
        }
    }
}

/// Per-source pieces of the adaptive Jacobian.
struct AdaptiveTerms<'a> {
    y: YOperator<'a>,
    x: XOperator<'a>,
}

enum Kind<'a> {
    Full(&'a FullState),
    Fixed(&'a ReducedState),
    Adaptive(&'a ReducedState, Vec<AdaptiveTerms<'a>>),
}

/// Matrix-free Jacobian `J(m)` of the data with respect to `m`.
pub struct SensitivityOp<'a> {
    kind: Kind<'a>,
    receivers: SparseColMatRef<'a, usize, f64>,
    mesh: &'a TensorMesh,
    /// `grad_m(A(m) u_s)` per source, `u_s` the (possibly reduced) field.
    grads: Vec<GradAu<'a>>,
    num_sources: usize,
}

impl<'a> SensitivityOp<'a> {
    pub fn new(state: &'a ForwardState, survey: &'a Survey, mode: SensitivityMode) -> Result<Self> {
        let receivers = survey.receivers.as_ref();
        let ns = survey.num_sources();
        match (mode, state) {
            (SensitivityMode::Full, ForwardState::Full(s)) => {
                let grads = (0..ns)
                    .map(|j| GradAu::new(&s.mesh, &s.cond, &column(s.fields.as_ref(), j)))
                    .collect::<Result<_>>()?;
                Ok(Self { kind: Kind::Full(s), receivers, mesh: &s.mesh, grads, num_sources: ns })
            }
            (SensitivityMode::Fixed | SensitivityMode::Adaptive, ForwardState::Reduced(s)) => {
                let mesh = s.basis.partition().mesh();
                let fields = s.fields();
                let grads = (0..ns)
                    .map(|j| GradAu::new(mesh, &s.cond, &column(fields.as_ref(), j)))
                    .collect::<Result<_>>()?;
                let kind = if mode == SensitivityMode::Fixed {
                    Kind::Fixed(s)
                } else {
                    s.basis.check_model(&s.model)?;
                    let q = survey.sources.to_dense();
                    let aq = sparse_dense(s.op.pinned(), fields.as_ref());
                    let terms = (0..ns)
                        .map(|j| {
                            let t = column(s.coeffs.as_ref(), j);
                            let rq: Vec<f64> = (0..q.nrows()).map(|i| q[(i, j)] - aq[(i, j)]).collect();
                            Ok(AdaptiveTerms { y: s.basis.derivative_y(&t, &s.model)?, x: s.basis.derivative_x(&rq, &s.model)? })
                        })
                        .collect::<Result<_>>()?;
                    Kind::Adaptive(s, terms)
                };
                Ok(Self { kind, receivers, mesh, grads, num_sources: ns })
            }
            _ => invalid(format!("mode {} does not match the forward state", mode.name())),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    pub fn data_shape(&self) -> (usize, usize) {
        (self.receivers.ncols(), self.num_sources)
    }

    /// `J dm`, an `N_r x N_s` matrix.
    pub fn apply(&self, dm: &[f64]) -> Result<Mat<f64>> {
        if dm.len() != self.num_cells() {
            return invalid("model perturbation has the wrong length");
        }
        let nf = self.mesh.num_free_nodes();
        let fields = match &self.kind {
            Kind::Full(s) => {
                let rhs: Vec<Vec<f64>> = self.grads.iter().map(|g| g.apply(dm)).collect();
                let du = s.solve(from_columns(nf, &rhs).as_ref())?;
                -du
            }
            Kind::Fixed(s) => {
                let s_mat = s.basis.matrix();
                let rhs: Vec<Vec<f64>> = self.grads.iter().map(|g| s.basis.apply_transpose(&g.apply(dm))).collect();
                let dt = s.solve(from_columns(s.k(), &rhs).as_ref());
                let du = sparse_dense(s_mat, dt.as_ref());
                -du
            }
            Kind::Adaptive(s, terms) => {
                let mut ys = Vec::with_capacity(self.num_sources);
                let mut rhs = Vec::with_capacity(self.num_sources);
                for (g, t) in self.grads.iter().zip(terms) {
                    let y = t.y.apply(dm);
                    let ay = s.op.apply(&y);
                    let gdm = g.apply(dm);
                    let sum: Vec<f64> = gdm.iter().zip(&ay).map(|(a, b)| a + b).collect();
                    let proj = s.basis.apply_transpose(&sum);
                    let xdm = t.x.apply(dm);
                    rhs.push(xdm.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<f64>>());
                    ys.push(y);
                }
                let dt = s.solve(from_columns(s.k(), &rhs).as_ref());
                let mut du = sparse_dense(s.basis.matrix(), dt.as_ref());
                for (j, y) in ys.iter().enumerate() {
                    for (i, &v) in y.iter().enumerate() {
                        du[(i, j)] += v;
                    }
                }
                du
            }
        };
        Ok(sparse_t_dense(self.receivers, fields.as_ref()))
    }

    /// `J^T W` for an `N_r x N_s` matrix `W`.
    pub fn apply_transpose(&self, w: MatRef<'_, f64>) -> Result<Vec<f64>> {
        if (w.nrows(), w.ncols()) != self.data_shape() {
            return invalid("data-space matrix has the wrong shape");
        }
        let a = sparse_dense(self.receivers, w);
        let mut out = vec![0.0; self.num_cells()];
        let mut add = |v: Vec<f64>, sign: f64| {
            for (o, x) in out.iter_mut().zip(v) {
                *o += sign * x;
            }
        };
        match &self.kind {
            Kind::Full(s) => {
                let lambda = s.solve(a.as_ref())?;
                for (j, g) in self.grads.iter().enumerate() {
                    add(g.apply_transpose(&column(lambda.as_ref(), j)), -1.0);
                }
            }
            Kind::Fixed(s) => {
                let b = s.solve(sparse_t_dense(s.basis.matrix(), a.as_ref()).as_ref());
                let sb = sparse_dense(s.basis.matrix(), b.as_ref());
                for (j, g) in self.grads.iter().enumerate() {
                    add(g.apply_transpose(&column(sb.as_ref(), j)), -1.0);
                }
            }
            Kind::Adaptive(s, terms) => {
                let b = s.solve(sparse_t_dense(s.basis.matrix(), a.as_ref()).as_ref());
                let sb = sparse_dense(s.basis.matrix(), b.as_ref());
                for (j, (g, t)) in self.grads.iter().zip(terms).enumerate() {
                    let sbj = column(sb.as_ref(), j);
                    let asb = spmv(s.op.pinned(), &sbj);
                    let resid: Vec<f64> = (0..a.nrows()).map(|i| a[(i, j)] - asb[i]).collect();
                    add(t.y.apply_transpose(&resid), 1.0);
                    add(t.x.apply_transpose(&column(b.as_ref(), j)), 1.0);
                    add(g.apply_transpose(&sbj), -1.0);
                }
            }
        }
        Ok(out)
    }
}
