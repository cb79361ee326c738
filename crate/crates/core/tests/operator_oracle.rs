mod common;

use std::sync::Arc;

use common::{dense_incidence, dense_laplacian, eigenvalues, spectral_norm};
use pds_core::graph::{erdos_renyi, incidence_operator, laplacian_operator, CommGraph, Orientation};
use pds_core::linalg::{operator_norm, DenseOperator, LinearOperator};
use proptest::prelude::*;

fn random_graph(m: usize, p: f64, seed: u64) -> Arc<CommGraph> {
    Arc::new(erdos_renyi(m, p, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn laplacian_matches_dense(m in 2usize..15, d in 1usize..5, p in 0.4f64..1.0, seed in 0u64..10_000) {
        let g = random_graph(m, p, seed);
        let op = laplacian_operator(g.clone(), d).unwrap();
        let a = dense_laplacian(&g, d);
        let x: Vec<f64> = (0..m * d).map(|i| ((i as f64 + 1.0) * 0.37).sin()).collect();
        let ours = op.apply(&x);
        let theirs = common::apply(&a, &x);
        for (u, v) in ours.iter().zip(&theirs) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        prop_assert_eq!(op.apply_adjoint(&x), ours);
        let dense = spectral_norm(&a);
        prop_assert!((op.norm() - dense).abs() <= 1e-6 * dense);
        // connected: exactly d zero eigenvalues
        let zeros = eigenvalues(&a).iter().filter(|e| e.abs() < 1e-9).count();
        prop_assert_eq!(zeros, d);
    }

    #[test]
    fn incidence_matches_dense(m in 2usize..12, d in 1usize..4, p in 0.4f64..1.0, seed in 0u64..10_000) {
        let g = random_graph(m, p, seed);
        let op = incidence_operator(g.clone(), d, Orientation::LowerPositive).unwrap();
        let b = dense_incidence(&g, d);
        prop_assert_eq!(b.shape(), (op.rows(), op.cols()));
        let x: Vec<f64> = (0..m * d).map(|i| ((i as f64) * 0.71).cos()).collect();
        let bx = common::apply(&b, &x);
        // orientation may differ per edge; compare magnitudes row by row
        for (u, v) in op.apply(&x).iter().zip(&bx) {
            prop_assert!((u.abs() - v.abs()).abs() < 1e-12);
        }
        // ‖B‖² = λ_max(ℒ)
        let l = dense_laplacian(&g, d);
        let lmax = *eigenvalues(&l).last().unwrap();
        prop_assert!((op.norm().powi(2) - lmax).abs() <= 1e-6 * lmax);
        // adjoint identity ⟨Bx, z⟩ = ⟨x, Bᵀz⟩
        let z: Vec<f64> = (0..op.rows()).map(|i| (i as f64 * 0.13).sin()).collect();
        let lhs: f64 = op.apply(&x).iter().zip(&z).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(op.apply_adjoint(&z)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn dense_operator_norm(rows in 1usize..12, cols in 1usize..12, seed in 0u64..10_000) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
        let op = DenseOperator::new(rows, cols, data.clone()).unwrap();
        let a = nalgebra::DMatrix::from_row_slice(rows, cols, &data);
        let dense = spectral_norm(&a);
        let ours = operator_norm(&op, 1e-12).unwrap();
        prop_assert!((ours - dense).abs() <= 1e-6 * dense.max(1e-300));
    }
}

#[test]
fn named_graph_norms() {
    use pds_core::graph::GraphFamily::*;
    // λ_max: path 2 − 2cos(π(m−1)/m), star m, complete m, even cycle 4
    let m = 10usize;
    let path = 2.0 - 2.0 * (std::f64::consts::PI * (m as f64 - 1.0) / m as f64).cos();
    for (fam, expected) in [(Path, path), (Star, m as f64), (Complete, m as f64), (Cycle, 4.0)] {
        let op = common::laplacian(fam, m, 2);
        approx::assert_relative_eq!(op.norm(), expected, max_relative = 1e-9);
    }
}
