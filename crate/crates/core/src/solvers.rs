//! Sparse direct Cholesky and block conjugate gradients.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::SparseColMatRef;
use faer::{Conj, Mat, MatRef, Par, Side};

use crate::error::{invalid, Error, Result};

/// Sparse `L L^T` factorization with a fill-reducing (AMD) ordering.
///
/// Always factors and solves sequentially so results do not depend on the
/// calling thread pool.
#[derive(Debug, Clone)]
pub struct Factorization {
    symbolic: std::sync::Arc<SymbolicCholesky<usize>>,
    values: Vec<f64>,
    nnz_matrix: usize,
}

impl Factorization {
    /// Only the lower triangle of `a` is read.
    pub fn new(a: SparseColMatRef<'_, usize, f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return invalid(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols()));
        }
        let symbolic = factorize_symbolic_cholesky(a.symbolic(), Side::Lower, Default::default(), Default::default())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let par = Par::Seq;
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(par, Default::default()));
        symbolic
            .factorize_numeric_llt(
                &mut values,
                a,
                Side::Lower,
                Default::default(),
                par,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| Error::Factorization(format!("matrix is not positive definite: {e:?}")))?;
        Ok(Self { symbolic: std::sync::Arc::new(symbolic), values, nnz_matrix: a.compute_nnz() })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.nrows()
    }

    /// Stored entries of the factor and of the input matrix.
    pub fn fill(&self) -> (usize, usize) {
        (self.values.len(), self.nnz_matrix)
    }

    pub fn solve_in_place(&self, mut rhs: faer::MatMut<'_, f64>) {
        assert_eq!(rhs.nrows(), self.dim());
        let par = Par::Seq;
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), par));
        LltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            rhs.as_mut(),
            par,
            MemStack::new(&mut buf),
        );
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_in_place(x.as_mut());
        x.col(0).iter().copied().collect()
    }

    /// Solves for every column of `b`.
    pub fn solve_block(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut x = b.to_owned();
        self.solve_in_place(x.as_mut());
        x
    }
}

/// Dense SPD factorization used for the small reduced systems.
#[derive(Debug, Clone)]
pub struct DenseSpd {
    llt: faer::linalg::solvers::Llt<f64>,
    /// Smallest and largest squared diagonal entries of the factor.
    pivot_range: (f64, f64),
}

impl DenseSpd {
    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return invalid("dense matrix is not square");
        }
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let l = llt.L();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..a.nrows() {
            let p = l[(i, i)] * l[(i, i)];
            lo = lo.min(p);
            hi = hi.max(p);
        }
        Ok(Self { llt, pivot_range: (lo, hi) })
    }

    /// Ratio of smallest to largest pivot. Small values flag a nearly
    /// dependent basis.
    pub fn pivot_ratio(&self) -> f64 {
        if self.pivot_range.1 == 0.0 {
            0.0
        } else {
            self.pivot_range.0 / self.pivot_range.1
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        x.col(0).iter().copied().collect()
    }

    pub fn solve_block(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(b)
    }
}

/// Outcome of [`block_cg`].
#[derive(Debug, Clone)]
pub struct IterativeResult {
    pub solution: Mat<f64>,
    pub iterations: usize,
    /// Final `||A x - b|| / ||b||` per column (recursively updated residual).
    pub relative_residuals: Vec<f64>,
    /// Largest relative residual after each iteration, starting with the
    /// initial guess.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl IterativeResult {
    pub fn max_relative_residual(&self) -> f64 {
        self.relative_residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Block conjugate gradients for `A X = B` with SPD `A` given as a block
/// apply. Starts from `X = 0`. A column stops being updated once its
/// relative residual drops below `tol`.
pub fn block_cg<F>(apply: F, b: MatRef<'_, f64>, tol: f64, maxit: usize) -> Result<IterativeResult>
where
    F: Fn(MatRef<'_, f64>) -> Mat<f64>,
{
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    if maxit == 0 {
        return invalid("block CG needs at least one iteration");
    }
    let n = b.nrows();
    let s = b.ncols();
    let bnorm: Vec<f64> = (0..s).map(|j| b.col(j).norm_l2()).collect();
    let mut x = Mat::<f64>::zeros(n, s);
    let mut rel: Vec<f64> = bnorm.iter().map(|&bn| if bn > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut active: Vec<usize> = (0..s).filter(|&j| rel[j] > tol).collect();
    let mut history = vec![rel.iter().cloned().fold(0.0, f64::max)];

    let mut r = gather(b, &active);
    let mut p = r.clone();
    let mut iterations = 0;

    while !active.is_empty() && iterations < maxit {
        iterations += 1;
        let q = apply(p.as_ref());
        let ptq = p.transpose() * &q;
        let curvature = match ptq.llt(Side::Lower) {
            Ok(f) => f,
            Err(_) => {
                history.push(history[history.len() - 1]);
                return Err(Error::SolverBreakdown(Box::new(IterativeResult {
                    solution: x,
                    iterations,
                    relative_residuals: rel,
                    history,
                    converged: false,
                })));
            }
        };
        let alpha = curvature.solve(p.transpose() * &r);
        let step = &p * &alpha;
        for (c, &col) in active.iter().enumerate() {
            for i in 0..n {
                x[(i, col)] += step[(i, c)];
            }
        }
        r = &r - &q * &alpha;

        let mut keep = Vec::with_capacity(active.len());
        for (c, &col) in active.iter().enumerate() {
            rel[col] = r.col(c).norm_l2() / bnorm[col];
            if rel[col] > tol {
                keep.push(c);
            }
        }
        history.push(rel.iter().cloned().fold(0.0, f64::max));
        if keep.is_empty() {
            active.clear();
            break;
        }
        let r_next = gather(r.as_ref(), &keep);
        // conjugate the new directions against the current block
        let beta = curvature.solve(q.transpose() * &r_next);
        p = &r_next - &p * &beta;
        r = r_next;
        active = keep.iter().map(|&c| active[c]).collect();
    }

    let converged = rel.iter().all(|&v| v <= tol);
    Ok(IterativeResult { solution: x, iterations, relative_residuals: rel, history, converged })
}

fn gather(m: MatRef<'_, f64>, cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{spmv, SparseSymOperator};
    use crate::mesh::TensorMesh;
    use crate::test_util::lcg_vec;
    use faer::sparse::{SparseColMat, Triplet};

    fn random_spd(n: usize, seed: u64) -> Mat<f64> {
        let v = lcg_vec(n * n, seed, -1.0, 1.0);
        let g = Mat::from_fn(n, n, |i, j| v[i * n + j]);
        let mut a = g.transpose() * &g;
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    fn to_sparse(a: &Mat<f64>) -> SparseColMat<usize, f64> {
        let mut t = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if a[(i, j)] != 0.0 {
                    t.push(Triplet::new(i, j, a[(i, j)]));
                }
            }
        }
        SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &t).unwrap()
    }

    fn rel_residual(a: &Mat<f64>, x: &[f64], b: &[f64]) -> f64 {
        let xm = Mat::from_fn(x.len(), 1, |i, _| x[i]);
        let r = a * &xm;
        let num: f64 = (0..b.len()).map(|i| (r[(i, 0)] - b[i]).powi(2)).sum::<f64>().sqrt();
        num / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_direct_solve() {
        let eye = to_sparse(&Mat::identity(5, 5));
        let f = Factorization::new(eye.as_ref()).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(f.solve(&b), b);
    }

    #[test]
    fn random_spd_direct_residual() {
        let a = random_spd(50, 1);
        let f = Factorization::new(to_sparse(&a).as_ref()).unwrap();
        let b = lcg_vec(50, 2, -1.0, 1.0);
        assert!(rel_residual(&a, &f.solve(&b), &b) <= 1e-10);
        let d = DenseSpd::new(a.as_ref()).unwrap();
        assert!(rel_residual(&a, &d.solve(&b), &b) <= 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = Mat::<f64>::identity(3, 3);
        a[(1, 1)] = -1.0;
        assert!(matches!(Factorization::new(to_sparse(&a).as_ref()), Err(Error::Factorization(_))));
    }

    #[test]
    fn pinned_laplacian_recovers_constructed_solution() {
        let mesh = TensorMesh::new([4, 4, 4], [1.0; 3]).unwrap();
        let op = SparseSymOperator::assemble(&mesh, &vec![0.0; 64]).unwrap();
        let x_true: Vec<f64> = (0..op.dim()).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let b = spmv(op.pinned(), &x_true);
        let x = Factorization::new(op.pinned()).unwrap().solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn block_cg_identity_one_iteration() {
        let b = Mat::from_fn(6, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let res = block_cg(|p| p.to_owned(), b.as_ref(), 1e-12, 10).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert!((&res.solution - &b).norm_max() < 1e-14);
    }

    #[test]
    fn block_cg_matches_direct() {
        let a = random_spd(40, 3);
        let bv = lcg_vec(120, 4, -1.0, 1.0);
        let b = Mat::from_fn(40, 3, |i, j| bv[i + 40 * j]);
        let res = block_cg(|p| &a * p, b.as_ref(), 1e-6, 100).unwrap();
        assert!(res.converged);
        let direct = DenseSpd::new(a.as_ref()).unwrap().solve_block(b.as_ref());
        for j in 0..3 {
            let err = (res.solution.col(j) - direct.col(j)).norm_l2() / direct.col(j).norm_l2();
            assert!(err <= 1e-5, "column {j}: {err}");
        }
        assert!(res.history.iter().all(|v| v.is_finite()));
        assert!(res.history.last().unwrap() <= &res.history[0]);
    }

    #[test]
    fn block_cg_contract_cases() {
        let a = random_spd(30, 5);
        let b = Mat::from_fn(30, 1, |i, _| (i as f64).sin());
        assert!(block_cg(|p| &a * p, b.as_ref(), 1e-6, 0).is_err());
        assert!(block_cg(|p| &a * p, b.as_ref(), 0.0, 5).is_err());
        let res = block_cg(|p| &a * p, b.as_ref(), 1e-14, 1).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.max_relative_residual() > 1e-14);
    }

    #[test]
    fn block_cg_zero_column_and_determinism() {
        let a = random_spd(20, 6);
        let b = Mat::from_fn(20, 2, |i, j| if j == 0 { 0.0 } else { i as f64 });
        let r1 = block_cg(|p| &a * p, b.as_ref(), 1e-8, 100).unwrap();
        let r2 = block_cg(|p| &a * p, b.as_ref(), 1e-8, 100).unwrap();
        assert!(r1.converged);
        assert!(r1.solution.col(0).iter().all(|&v| v == 0.0));
        assert_eq!(r1.solution, r2.solution);
    }

    #[test]
    fn block_cg_breakdown_on_dependent_columns() {
        let a = random_spd(10, 7);
        let b = Mat::from_fn(10, 2, |i, _| i as f64 + 1.0);
        match block_cg(|p| &a * p, b.as_ref(), 1e-10, 50) {
            Err(Error::SolverBreakdown(r)) => assert_eq!(r.solution.nrows(), 10),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }
}
