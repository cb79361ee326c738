//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls into the solver code paths being
//! checked: matrices are assembled from edge lists, optima come from closed
//! forms or dense KKT solves, and norms from dense decompositions.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pds_core::graph::{laplacian_operator, named_graph, CommGraph, ConsensusOperator, GraphFamily};
use pds_core::problem::{quadratic_objective, FeasibleSet, LocalObjective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `ℒ ⊗ I_d` built from the edge list.
pub fn dense_laplacian(g: &CommGraph, d: usize) -> DMatrix<f64> {
    let m = g.node_count();
    let mut l = DMatrix::zeros(m, m);
    for &(i, j) in g.edges() {
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    l.kronecker(&DMatrix::identity(d, d))
}

/// `B ⊗ I_d` with row `e` = `e_i − e_j` for the stored edge `(i, j)`.
pub fn dense_incidence(g: &CommGraph, d: usize) -> DMatrix<f64> {
    let m = g.node_count();
    let mut b = DMatrix::zeros(g.edge_count(), m);
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        b[(e, i)] = 1.0;
        b[(e, j)] = -1.0;
    }
    b.kronecker(&DMatrix::identity(d, d))
}

/// Largest singular value from a dense SVD.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Symmetric eigenvalues, ascending.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// A random consensus QP: agent `i` holds `½xᵀdiag(q_i)x + b_iᵀx` (plus
/// `μ/2‖x‖²`) on a common box.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub q: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub mu: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BoxQp {
    pub fn random(m: usize, d: usize, mu: f64, boxed: bool, seed: u64) -> Self {
        let mut r = rng(seed);
        let q = (0..m).map(|_| (0..d).map(|_| r.random_range(0.2..2.0)).collect()).collect();
        let b = (0..m).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let (lo, hi) = if boxed { (-0.6, 0.6) } else { (f64::NEG_INFINITY, f64::INFINITY) };
        BoxQp { q, b, mu, lo, hi }
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn d(&self) -> usize {
        self.q[0].len()
    }

    pub fn objectives(&self) -> Vec<LocalObjective> {
        let set = if self.lo.is_finite() {
            FeasibleSet::uniform_box(self.d(), self.lo, self.hi)
        } else {
            FeasibleSet::Free
        };
        self.q
            .iter()
            .zip(&self.b)
            .map(|(q, b)| quadratic_objective(q.clone(), b.clone(), self.mu, set.clone()).unwrap())
            .collect()
    }

    /// Largest curvature, i.e. the smooth-part Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.q.iter().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.d();
        let mut v = 0.0;
        for i in 0..self.m() {
            for j in 0..d {
                let xi = x[i * d + j];
                v += 0.5 * (self.q[i][j] + self.mu) * xi * xi + self.b[i][j] * xi;
            }
        }
        v
    }

    /// The common block of the consensus optimum: the problem separates by
    /// coordinate, so it is the clipped scalar minimizer.
    pub fn optimum_block(&self) -> Vec<f64> {
        (0..self.d())
            .map(|j| {
                let qs: f64 = self.q.iter().map(|q| q[j] + self.mu).sum();
                let bs: f64 = self.b.iter().map(|b| b[j]).sum();
                (-bs / qs).clamp(self.lo, self.hi)
            })
            .collect()
    }

    pub fn optimum(&self) -> Vec<f64> {
        self.optimum_block().repeat(self.m())
    }

    /// A dual solution for the operator `a`: solves `aᵀz = −(∇f(x*) + ν)`
    /// in the least-squares sense, where `ν` splits the normal-cone
    /// component of active box coordinates evenly across agents.
    pub fn dual_optimum(&self, a: &DMatrix<f64>) -> DVector<f64> {
        let (m, d) = (self.m(), self.d());
        let xb = self.optimum_block();
        let mut rhs = DVector::zeros(m * d);
        for j in 0..d {
            let grads: Vec<f64> = (0..m).map(|i| (self.q[i][j] + self.mu) * xb[j] + self.b[i][j]).collect();
            let mean = grads.iter().sum::<f64>() / m as f64;
            for i in 0..m {
                rhs[i * d + j] = -(grads[i] - mean);
            }
        }
        let at = a.transpose();
        let z = at.clone().svd(true, true).solve(&rhs, 1e-10).unwrap();
        assert!((&at * &z - &rhs).norm() < 1e-8, "dual oracle has no exact solution");
        z
    }
}

/// A connected test graph.
pub fn graph(family: GraphFamily, m: usize) -> Arc<CommGraph> {
    Arc::new(named_graph(family, m).unwrap())
}

pub fn laplacian(family: GraphFamily, m: usize, d: usize) -> ConsensusOperator {
    laplacian_operator(graph(family, m), d).unwrap()
}

pub fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dense `Ax`.
pub fn apply(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).iter().copied().collect()
}

/// `min ½xᵀdiag(q)x + bᵀx s.t. Ax = c` through the dense KKT system
/// `[Q Aᵀ; A 0][x; z] = [−b; c]`. Returns `(x*, z*)`.
pub fn equality_qp_kkt(q: &[f64], b: &[f64], a: &DMatrix<f64>, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (p, n) = a.shape();
    let mut k = DMatrix::zeros(n + p, n + p);
    for i in 0..n {
        k[(i, i)] = q[i];
    }
    k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
    k.view_mut((n, 0), (p, n)).copy_from(a);
    let mut rhs = DVector::zeros(n + p);
    for i in 0..n {
        rhs[i] = -b[i];
    }
    for i in 0..p {
        rhs[n + i] = c[i];
    }
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    (sol.rows(0, n).iter().copied().collect(), sol.rows(n, p).iter().copied().collect())
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
