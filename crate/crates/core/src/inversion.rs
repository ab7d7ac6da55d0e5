//! Misfit, Tikhonov regularization and projected Gauss-Newton.

use std::sync::Arc;

use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::{BoundaryConditionSet, MultiscaleBasis};
use crate::diffusion::{spmv, spmv_t, SparseMat};
use crate::error::{invalid, Error, Result};
use crate::forward::{forward_full, forward_reduced, FineSolver, ForwardState, SensitivityMode, SensitivityOp, Survey};
use crate::mesh::{CoarsePartition, TensorMesh};
use crate::parallel::WorkerPool;
use crate::solvers::block_cg;

/// `1/2 ||D_pred - D_obs||_F^2` and the residual `D_pred - D_obs`.
pub fn misfit_ssd(pred: MatRef<'_, f64>, obs: MatRef<'_, f64>) -> Result<(f64, Mat<f64>)> {
    if (pred.nrows(), pred.ncols()) != (obs.nrows(), obs.ncols()) {
        return invalid(format!(
            "predicted data is {}x{}, observed is {}x{}",
            pred.nrows(),
            pred.ncols(),
            obs.nrows(),
            obs.ncols()
        ));
    }
    let r = pred - obs;
    let sq: f64 = r.col_iter().flat_map(|c| c.iter().map(|v| v * v).collect::<Vec<_>>()).sum();
    Ok((0.5 * sq, r))
}

/// Cell-centre face differences `sqrt(V) (m_2 - m_1) / h` over all interior
/// faces, x faces first.
pub fn face_difference(mesh: &TensorMesh) -> SparseMat {
    let n = mesh.cells_per_axis();
    let h = mesh.widths();
    let sv = mesh.cell_volume().sqrt();
    let mut trip = Vec::new();
    let mut row = 0;
    for axis in 0..3 {
        let w = sv / h[axis];
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let t = [i, j, k];
                    if t[axis] + 1 == n[axis] {
                        continue;
                    }
                    let mut u = t;
                    u[axis] += 1;
                    trip.push(Triplet::new(row, mesh.cell_index(t[0], t[1], t[2]), -w));
                    trip.push(Triplet::new(row, mesh.cell_index(u[0], u[1], u[2]), w));
                    row += 1;
                }
            }
        }
    }
    SparseColMat::try_new_from_triplets(row, mesh.num_cells(), &trip).expect("valid difference triplets")
}

/// Data misfit plus `alpha/2 ||L (m - m_ref)||^2`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub alpha: f64,
    pub m_ref: Vec<f64>,
    l: SparseMat,
}

impl Objective {
    pub fn new(mesh: &TensorMesh, alpha: f64, m_ref: Vec<f64>) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return invalid(format!("regularization weight must be >= 0, got {alpha}"));
        }
        if m_ref.len() != mesh.num_cells() {
            return invalid("reference model has the wrong length");
        }
        Ok(Self { alpha, m_ref, l: face_difference(mesh) })
    }

    /// Value and gradient `alpha L^T L (m - m_ref)`.
    pub fn regularization(&self, m: &[f64]) -> (f64, Vec<f64>) {
        let d: Vec<f64> = m.iter().zip(&self.m_ref).map(|(a, b)| a - b).collect();
        let ld = spmv(self.l.as_ref(), &d);
        let value = 0.5 * self.alpha * ld.iter().map(|v| v * v).sum::<f64>();
        let grad = spmv_t(self.l.as_ref(), &ld).into_iter().map(|v| self.alpha * v).collect();
        (value, grad)
    }

    /// `alpha L^T L v`.
    pub fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        spmv_t(self.l.as_ref(), &spmv(self.l.as_ref(), v)).into_iter().map(|x| self.alpha * x).collect()
    }
}

/// Clamps `m` into `[lower, upper]`.
pub fn project_bounds(m: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    m.iter().zip(lower.iter().zip(upper)).map(|(&v, (&lo, &hi))| v.clamp(lo, hi)).collect()
}

/// Cells at a bound where the descent direction `-g` points outward.
pub fn active_set(m: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<bool> {
    (0..m.len()).map(|i| (m[i] <= lower[i] && g[i] > 0.0) || (m[i] >= upper[i] && g[i] < 0.0)).collect()
}

/// `D + e` with i.i.d. Gaussian `e` of standard deviation
/// `level * ||D||_F / sqrt(N_r N_s)`.
pub fn add_noise(clean: MatRef<'_, f64>, level: f64, seed: u64) -> Result<Mat<f64>> {
    if !(level >= 0.0 && level.is_finite()) {
        return invalid(format!("noise level must be >= 0, got {level}"));
    }
    if level == 0.0 {
        return Ok(clean.to_owned());
    }
    let count = (clean.nrows() * clean.ncols()) as f64;
    let std = level * clean.norm_l2() / count.sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clean.to_owned();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// `||m_est - m_base|| / ||m_base||`.
pub fn compute_relative_error(m_est: &[f64], m_base: &[f64]) -> Result<f64> {
    if m_est.len() != m_base.len() {
        return invalid("models have different lengths");
    }
    let base = m_base.iter().map(|v| v * v).sum::<f64>().sqrt();
    if base == 0.0 {
        return invalid("baseline model has zero norm");
    }
    let diff = m_est.iter().zip(m_base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / base)
}

/// Linearization of a simulation at one model.
pub trait Jacobian {
    fn apply(&self, dm: &[f64]) -> Result<Mat<f64>>;
    fn apply_transpose(&self, w: MatRef<'_, f64>) -> Result<Vec<f64>>;
}

impl Jacobian for SensitivityOp<'_> {
    fn apply(&self, dm: &[f64]) -> Result<Mat<f64>> {
        SensitivityOp::apply(self, dm)
    }

    fn apply_transpose(&self, w: MatRef<'_, f64>) -> Result<Vec<f64>> {
        SensitivityOp::apply_transpose(self, w)
    }
}

/// A forward map the Gauss-Newton loop can drive.
pub trait Simulation {
    type State;

    fn simulate(&self, m: &[f64]) -> Result<Self::State>;
    fn predicted<'s>(&self, state: &'s Self::State) -> &'s Mat<f64>;
    fn jacobian<'a>(&'a self, state: &'a Self::State) -> Result<Box<dyn Jacobian + 'a>>;
    /// Whether `simulate` rebuilds a basis at the new model.
    fn rebuilds(&self) -> bool {
        false
    }
}

/// The fine or reduced DC forward map in one of the three modes.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: TensorMesh,
    survey: Arc<Survey>,
    mode: SensitivityMode,
    solver: FineSolver,
    partition: Option<Arc<CoarsePartition>>,
    bcs: Option<Arc<BoundaryConditionSet>>,
    workers: WorkerPool,
    fixed_basis: Option<Arc<MultiscaleBasis>>,
}

impl ForwardModel {
    pub fn full(mesh: &TensorMesh, survey: Arc<Survey>, solver: FineSolver) -> Self {
        Self {
            mesh: mesh.clone(),
            survey,
            mode: SensitivityMode::Full,
            solver,
            partition: None,
            bcs: None,
            workers: WorkerPool::serial(),
            fixed_basis: None,
        }
    }

    /// Basis built once at `m_ref` and never rebuilt.
    pub fn fixed(
        partition: Arc<CoarsePartition>,
        bcs: Arc<BoundaryConditionSet>,
        survey: Arc<Survey>,
        m_ref: &[f64],
        workers: WorkerPool,
    ) -> Result<Self> {
        let basis = MultiscaleBasis::assemble(&partition, &bcs, m_ref, &workers)?;
        Ok(Self {
            mesh: partition.mesh().clone(),
            survey,
            mode: SensitivityMode::Fixed,
            solver: FineSolver::Direct,
            partition: Some(partition),
            bcs: Some(bcs),
            workers,
            fixed_basis: Some(Arc::new(basis)),
        })
    }

    /// Basis rebuilt at every evaluated model.
    pub fn adaptive(
        partition: Arc<CoarsePartition>,
        bcs: Arc<BoundaryConditionSet>,
        survey: Arc<Survey>,
        workers: WorkerPool,
    ) -> Self {
        Self {
            mesh: partition.mesh().clone(),
            survey,
            mode: SensitivityMode::Adaptive,
            solver: FineSolver::Direct,
            partition: Some(partition),
            bcs: Some(bcs),
            workers,
            fixed_basis: None,
        }
    }

    pub fn mode(&self) -> SensitivityMode {
        self.mode
    }

    pub fn survey(&self) -> &Survey {
        &self.survey
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    /// Basis size, `None` in full mode.
    pub fn basis_size(&self) -> Option<usize> {
        self.bcs.as_ref().map(|b| b.len())
    }
}

impl Simulation for ForwardModel {
    type State = ForwardState;

    fn simulate(&self, m: &[f64]) -> Result<ForwardState> {
        match self.mode {
            SensitivityMode::Full => Ok(ForwardState::Full(forward_full(&self.mesh, m, &self.survey, self.solver)?)),
            SensitivityMode::Fixed => {
                let basis = Arc::clone(self.fixed_basis.as_ref().expect("fixed mode has a basis"));
                Ok(ForwardState::Reduced(forward_reduced(m, &self.survey, basis)?))
            }
            SensitivityMode::Adaptive => {
                let (p, bcs) = (self.partition.as_ref().unwrap(), self.bcs.as_ref().unwrap());
                let basis = Arc::new(MultiscaleBasis::assemble(p, bcs, m, &self.workers)?);
                Ok(ForwardState::Reduced(forward_reduced(m, &self.survey, basis)?))
            }
        }
    }

    fn predicted<'s>(&self, state: &'s ForwardState) -> &'s Mat<f64> {
        state.data()
    }

    fn jacobian<'a>(&'a self, state: &'a ForwardState) -> Result<Box<dyn Jacobian + 'a>> {
        Ok(Box::new(SensitivityOp::new(state, &self.survey, self.mode)?))
    }

    fn rebuilds(&self) -> bool {
        self.mode == SensitivityMode::Adaptive
    }
}

#[derive(Debug, Clone)]
pub struct GnConfig {
    pub max_iter: usize,
    pub max_cg: usize,
    /// Relative residual at which the inner CG stops early.
    pub cg_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Stop once the projected gradient norm drops below this fraction of
    /// its initial value.
    pub grad_tol: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GnConfig {
    /// Ten outer and fifteen inner iterations with uniform bounds.
    pub fn new(num_cells: usize, lower: f64, upper: f64) -> Self {
        Self {
            max_iter: 10,
            max_cg: 15,
            cg_tol: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 10,
            grad_tol: 1e-10,
            lower: vec![lower; num_cells],
            upper: vec![upper; num_cells],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.max_iter == 0 || self.max_cg == 0 {
            return invalid("iteration counts must be >= 1");
        }
        if !(self.armijo > 0.0 && self.armijo <= 0.5) {
            return invalid(format!("Armijo constant must be in (0, 0.5], got {}", self.armijo));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return invalid("backtracking factor must be in (0, 1)");
        }
        if !(self.cg_tol > 0.0) {
            return invalid("inner CG tolerance must be positive");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return invalid("bounds have the wrong length");
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return invalid("lower bound exceeds upper bound");
        }
        Ok(())
    }
}

/// One row of the inversion trace. Row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub phi: f64,
    pub reg: f64,
    pub total: f64,
    pub pgnorm: f64,
    pub step: f64,
    pub cg_iters: usize,
    pub active: usize,
    pub rebuilt: bool,
}

#[derive(Debug, Clone, Default)]
pub struct InversionTrace {
    pub rows: Vec<TraceRow>,
    /// Model after each row.
    pub models: Vec<Vec<f64>>,
    pub line_search_failed: bool,
    pub converged: bool,
}

impl InversionTrace {
    pub fn final_model(&self) -> &[f64] {
        self.models.last().map(|m| m.as_slice()).unwrap_or(&[])
    }

    pub fn objective_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].total <= w[0].total)
    }
}

/// Objective value and gradient at one model.
pub struct Evaluation<S> {
    pub state: S,
    pub phi: f64,
    pub reg: f64,
    pub residual: Mat<f64>,
}

impl<S> Evaluation<S> {
    pub fn total(&self) -> f64 {
        self.phi + self.reg
    }
}

pub fn evaluate<Sim: Simulation>(
    sim: &Sim,
    objective: &Objective,
    observed: MatRef<'_, f64>,
    m: &[f64],
) -> Result<Evaluation<Sim::State>> {
    let state = sim.simulate(m)?;
    let (phi, residual) = misfit_ssd(sim.predicted(&state).as_ref(), observed)?;
    let (reg, _) = objective.regularization(m);
    Ok(Evaluation { state, phi, reg, residual })
}

/// Gradient `J^T (D_pred - D_obs) + alpha L^T L (m - m_ref)`.
pub fn gradient<Sim: Simulation>(
    sim: &Sim,
    objective: &Objective,
    eval: &Evaluation<Sim::State>,
    m: &[f64],
) -> Result<Vec<f64>> {
    let jac = sim.jacobian(&eval.state)?;
    let mut g = jac.apply_transpose(eval.residual.as_ref())?;
    for (a, b) in g.iter_mut().zip(objective.regularization(m).1) {
        *a += b;
    }
    Ok(g)
}

fn projected_gradient_norm(m: &[f64], g: &[f64], cfg: &GnConfig) -> f64 {
    m.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&v, &gi))| {
            let d = (v - gi).clamp(cfg.lower[i], cfg.upper[i]) - v;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Projected Gauss-Newton with CG on the inactive cells and Armijo
/// backtracking along the projected path.
pub fn projected_gauss_newton<Sim: Simulation>(
    sim: &Sim,
    objective: &Objective,
    observed: MatRef<'_, f64>,
    m0: &[f64],
    cfg: &GnConfig,
) -> Result<(Vec<f64>, InversionTrace)> {
    let n = m0.len();
    cfg.validate(n)?;
    if objective.m_ref.len() != n {
        return invalid("model and reference model have different lengths");
    }
    if (0..n).any(|i| m0[i] < cfg.lower[i] || m0[i] > cfg.upper[i]) {
        return invalid("initial model violates the bounds");
    }
    let mut m = m0.to_vec();
    let mut eval = evaluate(sim, objective, observed, &m)?;
    let mut g = gradient(sim, objective, &eval, &m)?;
    let pg0 = projected_gradient_norm(&m, &g, cfg);
    let mut trace = InversionTrace::default();
    trace.rows.push(TraceRow {
        iter: 0,
        phi: eval.phi,
        reg: eval.reg,
        total: eval.total(),
        pgnorm: pg0,
        step: 0.0,
        cg_iters: 0,
        active: active_set(&m, &g, &cfg.lower, &cfg.upper).iter().filter(|&&a| a).count(),
        rebuilt: true,
    });
    trace.models.push(m.clone());
    if pg0 == 0.0 {
        trace.converged = true;
        return Ok((m, trace));
    }

    for iter in 1..=cfg.max_iter {
        let active = active_set(&m, &g, &cfg.lower, &cfg.upper);
        let (dm, cg_iters) = {
            let jac = sim.jacobian(&eval.state)?;
            newton_direction(jac.as_ref(), objective, &g, &active, cfg)?
        };
        let slope_dir: f64 = dm.iter().zip(&g).map(|(a, b)| a * b).sum();
        // fall back to steepest descent if the inner solve did not descend
        let dm = if slope_dir < 0.0 {
            dm
        } else {
            g.iter().zip(&active).map(|(&v, &a)| if a { 0.0 } else { -v }).collect()
        };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = project_bounds(
                &m.iter().zip(&dm).map(|(a, b)| a + step * b).collect::<Vec<_>>(),
                &cfg.lower,
                &cfg.upper,
            );
            let slope: f64 = trial.iter().zip(&m).zip(&g).map(|((t, v), gi)| (t - v) * gi).sum();
            let te = evaluate(sim, objective, observed, &trial)?;
            if te.total() <= eval.total() + cfg.armijo * slope {
                accepted = Some((trial, te));
                break;
            }
            step *= cfg.backtrack;
        }
        let Some((trial, te)) = accepted else {
            trace.line_search_failed = true;
            break;
        };
        m = trial;
        eval = te;
        g = gradient(sim, objective, &eval, &m)?;
        let pg = projected_gradient_norm(&m, &g, cfg);
        trace.rows.push(TraceRow {
            iter,
            phi: eval.phi,
            reg: eval.reg,
            total: eval.total(),
            pgnorm: pg,
            step,
            cg_iters,
            active: active.iter().filter(|&&a| a).count(),
            rebuilt: sim.rebuilds(),
        });
        trace.models.push(m.clone());
        if pg < cfg.grad_tol * pg0 {
            trace.converged = true;
            break;
        }
    }
    Ok((m, trace))
}

/// Approximately solves `(J^T J + alpha L^T L) dm = -g` on the inactive
/// cells, with `dm = 0` on the active ones.
fn newton_direction(
    jac: &dyn Jacobian,
    objective: &Objective,
    g: &[f64],
    active: &[bool],
    cfg: &GnConfig,
) -> Result<(Vec<f64>, usize)> {
    let n = g.len();
    let mask = |v: &mut [f64]| {
        for (x, &a) in v.iter_mut().zip(active) {
            if a {
                *x = 0.0;
            }
        }
    };
    let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    mask(&mut rhs);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; n], 0));
    }
    let failure = std::cell::RefCell::new(None);
    let apply = |p: MatRef<'_, f64>| -> Mat<f64> {
        let mut out = Mat::zeros(n, p.ncols());
        for c in 0..p.ncols() {
            let mut v: Vec<f64> = p.col(c).iter().copied().collect();
            mask(&mut v);
            let hv = match jac.apply(&v).and_then(|jv| jac.apply_transpose(jv.as_ref())) {
                Ok(x) => x,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    vec![0.0; n]
                }
            };
            let mut hv: Vec<f64> = hv.iter().zip(objective.hessian_apply(&v)).map(|(a, b)| a + b).collect();
            mask(&mut hv);
            for (i, x) in hv.into_iter().enumerate() {
                out[(i, c)] = x;
            }
        }
        out
    };
    let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
    let result = match block_cg(apply, b.as_ref(), cfg.cg_tol, cfg.max_cg) {
        Ok(r) => r,
        Err(Error::SolverBreakdown(r)) => *r,
        Err(e) => return Err(e),
    };
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let mut dm: Vec<f64> = result.solution.col(0).iter().copied().collect();
    mask(&mut dm);
    Ok((dm, result.iterations))
}

#[cfg(test)]
mod tests;
