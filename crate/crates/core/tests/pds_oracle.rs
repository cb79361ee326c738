mod common;

use common::{dense_incidence, dense_laplacian, half_sq_dist, norm, BoxQp};
use pds_core::graph::{incidence_operator, laplacian_operator, GraphFamily, Orientation};
use pds_core::linalg::LinearOperator;
use pds_core::pds::{pds_run, LossKind, RunOptions, StopReason, View};
use pds_core::problem::total_value;
use pds_core::schedule::{build_deterministic, ScheduleInputs};
use proptest::prelude::*;

fn family(i: usize) -> GraphFamily {
    [GraphFamily::Path, GraphFamily::Star, GraphFamily::Cycle, GraphFamily::Complete][i % 4]
}

#[test]
fn bounds_hold_against_kkt_oracle() {
    for (seed, (m, d, fam, mu, boxed)) in [
        (2, 2, GraphFamily::Path, 0.0, true),
        (5, 4, GraphFamily::Complete, 0.0, true),
        (4, 3, GraphFamily::Cycle, 0.0, false),
        (5, 2, GraphFamily::Star, 0.5, true),
        (3, 2, GraphFamily::Path, 0.1, false),
    ]
    .into_iter()
    .enumerate()
    {
        let qp = BoxQp::random(m, d, mu, boxed, 100 + seed as u64);
        let g = common::graph(fam, m);
        let op = laplacian_operator(g.clone(), d).unwrap();
        let a = dense_laplacian(&g, d);
        let x_star = qp.optimum();
        let z_star = qp.dual_optimum(&a);
        let f_star = qp.value(&x_star);
        let x0 = vec![0.0; m * d];
        let v0 = half_sq_dist(&x0, &x_star);
        let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), mu, op.norm(), 1.0)).unwrap();
        for n in [10, 20, 40] {
            let out = pds_run(&qp.objectives(), &op, &s, n, &x0, &RunOptions::default()).unwrap();
            let gap = qp.value(&out.x_bar) - f_star;
            let feas = norm(&common::apply(&a, &out.x_bar));
            let general = s.error_bounds(n, v0, z_star.norm(), 0.0).unwrap();
            let closed = s.closed_form_bounds(n, v0, z_star.norm(), 0.0);
            assert!(gap <= general.objective, "case {seed} N={n}: gap {gap} > {}", general.objective);
            assert!(feas <= general.feasibility, "case {seed} N={n}: feas {feas} > {}", general.feasibility);
            assert!(general.objective <= closed.objective * (1.0 + 1e-9));
            assert!(general.feasibility <= closed.feasibility * (1.0 + 1e-9));
            // the solver's own loss is the stacked objective
            let reported = out.metrics.final_loss().unwrap();
            assert!((reported - qp.value(&out.x_bar)).abs() < 1e-9 * (1.0 + reported.abs()));
        }
    }
}

#[test]
fn incidence_operator_also_meets_bounds() {
    let qp = BoxQp::random(4, 2, 0.0, true, 9);
    let g = common::graph(GraphFamily::Cycle, 4);
    let op = incidence_operator(g.clone(), 2, Orientation::LowerPositive).unwrap();
    let a = dense_incidence(&g, 2);
    assert!((op.norm() - common::spectral_norm(&a)).abs() < 1e-9);
    let x_star = qp.optimum();
    let z_star = qp.dual_optimum(&a);
    let x0 = vec![0.3; 8];
    let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), 0.0, op.norm(), 0.5)).unwrap();
    let out = pds_run(&qp.objectives(), &op, &s, 30, &x0, &RunOptions::default()).unwrap();
    let b = s.error_bounds(30, half_sq_dist(&x0, &x_star), z_star.norm(), 0.0).unwrap();
    assert!(qp.value(&out.x_bar) - qp.value(&x_star) <= b.objective);
    assert!(norm(&common::apply(&a, &out.x_bar)) <= b.feasibility);
}

#[test]
fn gradient_count_ignores_topology() {
    let qp = BoxQp::random(8, 2, 0.0, false, 3);
    let x0 = vec![0.0; 16];
    let mut rounds = Vec::new();
    for fam in [GraphFamily::Path, GraphFamily::Star, GraphFamily::Cycle, GraphFamily::Complete] {
        let op = common::laplacian(fam, 8, 2);
        let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), 0.0, op.norm(), 1.0)).unwrap();
        let out = pds_run(&qp.objectives(), &op, &s, 15, &x0, &RunOptions::default()).unwrap();
        assert_eq!(out.metrics.gradients, 15);
        assert_eq!(out.metrics.init_gradients, 1);
        let inner: u64 = (1..=15).map(|k| s.inner_steps(k).unwrap() as u64).sum();
        assert_eq!(out.metrics.rounds, 2 * inner);
        rounds.push(out.metrics.rounds);
    }
    // rounds follow ‖𝒜‖: path < complete
    assert!(rounds[0] < rounds[3]);
}

#[test]
fn round_budget_and_target_stop() {
    let qp = BoxQp::random(4, 2, 0.0, false, 5);
    let op = common::laplacian(GraphFamily::Path, 4, 2);
    let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), 0.0, op.norm(), 1.0)).unwrap();
    let x0 = vec![0.0; 8];
    let budget = RunOptions {
        round_budget: Some(100),
        ..RunOptions::default()
    };
    let out = pds_run(&qp.objectives(), &op, &s, 1000, &x0, &budget).unwrap();
    assert_eq!(out.metrics.stop, StopReason::BudgetExhausted);
    assert!(out.metrics.rounds <= 100);
    let target = qp.value(&qp.optimum()) + 0.05;
    let opts = RunOptions {
        loss: LossKind::ConsensusAverage,
        target_loss: Some(target),
        target_feasibility: Some(0.05),
        ..RunOptions::default()
    };
    let out = pds_run(&qp.objectives(), &op, &s, 1000, &x0, &opts).unwrap();
    assert_eq!(out.metrics.stop, StopReason::TargetReached);
    let last = out.metrics.trace.last().unwrap();
    assert!(last.loss <= target && last.feasibility <= 0.05);
    assert!(out.metrics.trace[..out.metrics.trace.len() - 1]
        .iter()
        .all(|p| p.loss > target || p.feasibility > 0.05));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn agent_view_matches_network_view(
        m in 2usize..6,
        d in 1usize..4,
        fam in 0usize..4,
        mu in prop_oneof![Just(0.0), 0.05f64..1.0],
        boxed in any::<bool>(),
        r in 0.2f64..3.0,
        seed in 0u64..1000,
    ) {
        let qp = BoxQp::random(m, d, mu, boxed, seed);
        let op = common::laplacian(family(fam), m, d);
        let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), mu, op.norm(), r)).unwrap();
        let x0: Vec<f64> = (0..m * d).map(|i| ((i * 7 + seed as usize) % 5) as f64 * 0.1 - 0.2).collect();
        let x0: Vec<f64> = x0.iter().map(|v| v.clamp(qp.lo, qp.hi)).collect();
        let net = pds_run(&qp.objectives(), &op, &s, 6, &x0, &RunOptions::default()).unwrap();
        let agent = pds_run(&qp.objectives(), &op, &s, 6, &x0, &RunOptions::default().with_view(View::Agent)).unwrap();
        for (a, b) in net.x_bar.iter().zip(&agent.x_bar) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        prop_assert_eq!(net.metrics.gradients, agent.metrics.gradients);
        prop_assert_eq!(net.metrics.rounds, agent.metrics.rounds);
        prop_assert!(!agent.log.is_empty());
        prop_assert!(agent.log.audit(op.graph()).is_empty());
    }

    #[test]
    fn iterates_stay_feasible_and_objective_is_stacked(
        m in 2usize..5,
        seed in 0u64..1000,
    ) {
        let qp = BoxQp::random(m, 2, 0.0, true, seed);
        let op = common::laplacian(GraphFamily::Path, m, 2);
        let s = build_deterministic(&ScheduleInputs::deterministic(qp.lipschitz(), 0.0, op.norm(), 1.0)).unwrap();
        let out = pds_run(&qp.objectives(), &op, &s, 8, &vec![0.0; 2 * m], &RunOptions::default()).unwrap();
        prop_assert!(out.x_bar.iter().all(|v| (qp.lo - 1e-12..=qp.hi + 1e-12).contains(v)));
        let total = total_value(&qp.objectives(), &out.x_bar);
        prop_assert!((total - qp.value(&out.x_bar)).abs() < 1e-9);
    }
}
