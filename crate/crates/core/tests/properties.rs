//! Invariants checked through the public API on random inputs.

use std::sync::Arc;

use faer::Mat;
use msfv_core::forward::{forward_full, forward_reduced};
use msfv_core::inversion::{misfit_ssd, project_bounds};
use msfv_core::{
    BoundaryConditionSet, CoarsePartition, FineSolver, ForwardState, MultiscaleBasis, SensitivityMode, SensitivityOp,
    Survey, TensorMesh, WorkerPool,
};
use proptest::prelude::*;

fn surface_survey(mesh: &TensorMesh) -> Survey {
    let [n1, n2, n3] = mesh.cells_per_axis();
    let top = |i, j| mesh.node_index(i, j, n3);
    let receivers: Vec<usize> = (0..=n2).flat_map(|j| (0..=n1).map(move |i| (i, j))).map(|(i, j)| top(i, j)).collect();
    Survey::from_nodes(mesh, &receivers, &[(top(0, 0), top(n1, n2)), (top(n1, 0), top(0, n2))]).unwrap()
}

fn model(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lagrange_partition_of_unity(m in model(128), bx in 1usize..3) {
        let mesh = TensorMesh::new([8, 4, 4], [1.0; 3]).unwrap();
        let p = Arc::new(CoarsePartition::new(&mesh, [2 * bx, 2, 2]).unwrap());
        let bcs = Arc::new(BoundaryConditionSet::lagrange(&p));
        let basis = MultiscaleBasis::assemble(&p, &bcs, &m, &WorkerPool::serial()).unwrap();
        let sum = basis.apply(&vec![1.0; basis.k()]);
        prop_assert!(sum.iter().all(|v| (v - 1.0).abs() <= 1e-10));
    }

    #[test]
    fn lagrange_columns_stay_in_adjacent_blocks(m in model(64), c in 1usize..27) {
        let mesh = TensorMesh::new([4, 4, 4], [1.0; 3]).unwrap();
        let p = Arc::new(CoarsePartition::new(&mesh, [2, 2, 2]).unwrap());
        let bcs = Arc::new(BoundaryConditionSet::lagrange(&p));
        let basis = MultiscaleBasis::assemble(&p, &bcs, &m, &WorkerPool::serial()).unwrap();
        let mut e = vec![0.0; basis.k()];
        e[c] = 1.0;
        let ct = p.coarse_node_triple(c);
        for (r, v) in basis.apply(&e).iter().enumerate() {
            let t = mesh.node_triple(r + 1);
            let near = (0..3).all(|d| (t[d] as f64 / 2.0 - ct[d] as f64).abs() < 1.0);
            prop_assert!(near || *v == 0.0);
        }
    }

    #[test]
    fn identity_basis_reproduces_fine_data(m in model(12)) {
        let mesh = TensorMesh::new([3, 2, 2], [1.0; 3]).unwrap();
        let p = Arc::new(CoarsePartition::new(&mesh, [1, 1, 1]).unwrap());
        let s = surface_survey(&mesh);
        let bcs = Arc::new(BoundaryConditionSet::identity(&p).unwrap());
        let basis = Arc::new(MultiscaleBasis::assemble(&p, &bcs, &m, &WorkerPool::serial()).unwrap());
        let red = forward_reduced(&m, &s, basis).unwrap().data;
        let full = forward_full(&mesh, &m, &s, FineSolver::Direct).unwrap().data;
        prop_assert!((&red - &full).norm_l2() <= 1e-10 * full.norm_l2());
    }

    #[test]
    fn full_sensitivity_adjoint(m in model(64), dm in model(64), w in proptest::collection::vec(-1.0f64..1.0, 50)) {
        let mesh = TensorMesh::new([4, 4, 4], [1.0; 3]).unwrap();
        let s = surface_survey(&mesh);
        let state = ForwardState::Full(forward_full(&mesh, &m, &s, FineSolver::Direct).unwrap());
        let op = SensitivityOp::new(&state, &s, SensitivityMode::Full).unwrap();
        let wm = Mat::from_fn(25, 2, |i, j| w[i + 25 * j]);
        let jd = op.apply(&dm).unwrap();
        let lhs: f64 = (0..25).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| jd[(i, j)] * wm[(i, j)]).sum();
        let rhs: f64 = op.apply_transpose(wm.as_ref()).unwrap().iter().zip(&dm).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn projection_is_idempotent_and_feasible(m in proptest::collection::vec(-10.0f64..10.0, 20), lo in -5.0f64..0.0, width in 0.0f64..5.0) {
        let (lower, upper) = (vec![lo; 20], vec![lo + width; 20]);
        let p = project_bounds(&m, &lower, &upper);
        prop_assert!(p.iter().all(|&v| v >= lo && v <= lo + width));
        prop_assert_eq!(project_bounds(&p, &lower, &upper), p);
    }

    #[test]
    fn misfit_scales_quadratically(r in proptest::collection::vec(-5.0f64..5.0, 6), c in 0.1f64..10.0) {
        let zero = Mat::<f64>::zeros(2, 3);
        let a = Mat::from_fn(2, 3, |i, j| r[i + 2 * j]);
        let ac = Mat::from_fn(2, 3, |i, j| c * r[i + 2 * j]);
        let (phi, _) = misfit_ssd(a.as_ref(), zero.as_ref()).unwrap();
        let (phic, _) = misfit_ssd(ac.as_ref(), zero.as_ref()).unwrap();
        prop_assert!((phic - c * c * phi).abs() <= 1e-12 * phic.max(1e-300));
    }
}
