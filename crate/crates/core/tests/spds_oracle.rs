mod common;

use std::sync::Arc;

use common::{dense_laplacian, half_sq_dist, norm, BoxQp};
use pds_core::graph::{laplacian_operator, GraphFamily};
use pds_core::linalg::LinearOperator;
use pds_core::pds::{pds_run, RunOptions};
use pds_core::problem::{NoiseModel, StochasticOracle};
use pds_core::schedule::{build_stochastic, ScheduleInputs};
use pds_core::spds::{replicate, spds_run, StochasticRunConfig};

fn oracles(qp: &BoxQp, sigma: f64) -> Vec<StochasticOracle> {
    qp.objectives()
        .into_iter()
        .enumerate()
        .map(|(i, o)| StochasticOracle::new(Arc::new(o), NoiseModel::AdditiveGaussian { sigma }, 0, i).unwrap())
        .collect()
}

#[test]
fn replication_mean_meets_bound() {
    let n = 12;
    for (case, (m, fam, boxed)) in [(3, GraphFamily::Path, true), (4, GraphFamily::Complete, false)]
        .into_iter()
        .enumerate()
    {
        let qp = BoxQp::random(m, 2, 0.0, boxed, 500 + case as u64);
        let g = common::graph(fam, m);
        let op = laplacian_operator(g.clone(), 2).unwrap();
        let a = dense_laplacian(&g, 2);
        let x_star = qp.optimum();
        let zn = qp.dual_optimum(&a).norm();
        let f_star = qp.value(&x_star);
        let x0 = vec![0.0; 2 * m];
        let v0 = half_sq_dist(&x0, &x_star);
        for sigma in [0.1, 1.0] {
            let s = build_stochastic(&ScheduleInputs::stochastic(qp.lipschitz(), 0.0, sigma, op.norm(), 1.0, 1.0, n))
                .unwrap();
            let orc = oracles(&qp, sigma);
            let rep = replicate(&StochasticRunConfig {
                oracles: &orc,
                op: &op,
                schedule: &s,
                n,
                x0: &x0,
                replications: 20,
                base_seed: 1000,
                opts: RunOptions::default(),
            })
            .unwrap();
            let gaps: Vec<f64> = rep.runs.iter().map(|r| qp.value(&r.x_bar) - f_star).collect();
            let feas: Vec<f64> = rep.runs.iter().map(|r| norm(&common::apply(&a, &r.x_bar))).collect();
            let mean_gap = gaps.iter().sum::<f64>() / 20.0;
            let mean_feas = feas.iter().sum::<f64>() / 20.0;
            let variance = m as f64 * sigma * sigma;
            let closed = s.closed_form_bounds(n, v0, zn, variance);
            let general = s.error_bounds(n, v0, zn, variance).unwrap();
            assert!(mean_gap <= closed.objective, "case {case} σ={sigma}: {mean_gap} > {}", closed.objective);
            assert!(mean_feas <= closed.feasibility, "case {case} σ={sigma}: {mean_feas} > {}", closed.feasibility);
            assert!(mean_gap <= general.objective);
            assert!(mean_feas <= general.feasibility);
            // the report's feasibility column is the same ‖𝒜x̄‖
            assert!((rep.final_feasibility.mean - mean_feas).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_noise_equals_pds() {
    let qp = BoxQp::random(5, 2, 0.3, true, 77);
    let op = common::laplacian(GraphFamily::Star, 5, 2);
    let s = build_stochastic(&ScheduleInputs::stochastic(qp.lipschitz(), 0.3, 0.0, op.norm(), 1.0, 0.5, 20)).unwrap();
    let x0 = vec![0.2; 10];
    let a = spds_run(&oracles(&qp, 0.0), &op, &s, 20, &x0, 3, &RunOptions::default()).unwrap();
    let b = pds_run(&qp.objectives(), &op, &s, 20, &x0, &RunOptions::default()).unwrap();
    for (u, v) in a.x_bar.iter().zip(&b.x_bar) {
        assert!((u - v).abs() <= 1e-12);
    }
}

#[test]
fn samples_follow_batch_schedule() {
    let qp = BoxQp::random(3, 2, 0.0, false, 4);
    let op = common::laplacian(GraphFamily::Cycle, 3, 2);
    let s = build_stochastic(&ScheduleInputs::stochastic(qp.lipschitz(), 0.0, 1.0, op.norm(), 1.0, 2.0, 9)).unwrap();
    let out = spds_run(&oracles(&qp, 1.0), &op, &s, 9, &[0.0; 6], 0, &RunOptions::default()).unwrap();
    let per_agent: u64 = (1..=9).map(|k| s.batch(k).unwrap()).sum();
    assert_eq!(out.metrics.samples, 3 * per_agent);
    assert_eq!(out.metrics.gradients, 9);
}
