//! Experiment harness: synthetic data, plan execution over graphs of
//! different degree, result tables, and the single-run drivers used by the
//! command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    build_operator, build_oracles, scale_lipschitz, AlgorithmSpec, ConstrainedConfig, GraphInfoConfig, GraphSpec,
    OperatorChoice, ProblemSpec, RunConfig, X0Rule, DEFAULT_SYNTHETIC_ROWS,
};
use crate::error::{Error, Result};
use crate::graph::ConsensusOperator;
use crate::linalg::{DenseOperator, LinearOperator};
use crate::pds::{baseline_pd_run, pds_run, LossKind, RunMetrics, RunOptions, StepParams, StopReason};
use crate::problem::{centralized_solve, problem_constants, DataShard, LocalObjective, SparseRow};
use crate::saddle::constrained_solve;
use crate::schedule::{build_deterministic, build_stochastic, ScheduleInputs};
use crate::spds::{replicate, spds_run, ReplicationReport, StochasticRunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separability {
    /// A margin-separated pair of clouds.
    Separable,
    /// Overlapping clouds; always contains a conflicting duplicate pair.
    #[default]
    Overlapping,
}

/// Two Gaussian class clouds `y·δ·u + N(0, I)` around a random direction `u`,
/// with labels alternating `+1, −1`.
///
/// `Separable` pushes every row to margin `½` along `y·u`, so `u` classifies
/// all rows correctly. `Overlapping` uses `δ = 1` and, for `n ≥ 2`, repeats
/// the first row with the opposite label as the last row, so no linear
/// classifier is error-free.
pub fn synthesize_dataset(n: usize, d: usize, separability: Separability, seed: u64) -> Result<DataShard> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("dataset needs n, d >= 1 (got n={n}, d={d})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let nu = crate::linalg::norm2(&u);
    if nu > 0.0 {
        u.iter_mut().for_each(|v| *v /= nu);
    } else {
        u[0] = 1.0;
    }
    let shift = match separability {
        Separability::Separable => 2.0,
        Separability::Overlapping => 1.0,
    };
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let y = if j % 2 == 0 { 1.0 } else { -1.0 };
        let mut a: Vec<f64> = u
            .iter()
            .map(|ui| y * shift * ui + rng.sample::<f64, _>(StandardNormal))
            .collect();
        if separability == Separability::Separable {
            let margin = y * crate::linalg::dot(&a, &u);
            if margin < 0.5 {
                crate::linalg::axpy(y * (0.5 - margin), &u, &mut a);
            }
        }
        features.push(a);
        labels.push(y);
    }
    if separability == Separability::Overlapping && n >= 2 {
        features[n - 1] = features[0].clone();
        labels[n - 1] = -labels[0];
    }
    let idx: Vec<u32> = (1..=d as u32).collect();
    let rows = features
        .into_iter()
        .map(|a| SparseRow::new(idx.clone(), a))
        .collect::<Result<Vec<_>>>()?;
    DataShard::new(rows, labels, d)
}

/// Size preset for plans that leave agents, rows or budget unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalePreset {
    pub agents: usize,
    pub rows: usize,
    pub round_budget: u64,
}

impl Scale {
    pub fn preset(self) -> ScalePreset {
        match self {
            Scale::Desk => ScalePreset {
                agents: 20,
                rows: DEFAULT_SYNTHETIC_ROWS,
                round_budget: 4000,
            },
            Scale::Paper => ScalePreset {
                agents: 100,
                rows: 20_000,
                round_budget: 40_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphCase {
    pub label: String,
    pub spec: GraphSpec,
    #[serde(default)]
    pub expected_max_degree: Option<usize>,
}

/// Stopping target: an absolute loss, or `f* + value`, optionally together
/// with a bound on the consensus violation `‖𝒜x̄‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Loss {
        value: f64,
        #[serde(default)]
        feasibility: Option<f64>,
    },
    Gap {
        value: f64,
        #[serde(default)]
        feasibility: Option<f64>,
    },
}

impl TargetSpec {
    pub fn value(&self) -> f64 {
        match *self {
            TargetSpec::Loss { value, .. } | TargetSpec::Gap { value, .. } => value,
        }
    }

    pub fn feasibility(&self) -> Option<f64> {
        match *self {
            TargetSpec::Loss { feasibility, .. } | TargetSpec::Gap { feasibility, .. } => feasibility,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            TargetSpec::Loss { .. } => "loss",
            TargetSpec::Gap { .. } => "gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub agents: Option<usize>,
    pub graphs: Vec<GraphCase>,
    pub problem: ProblemSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub round_budget: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub operator: OperatorChoice,
    #[serde(default)]
    pub x0: X0Rule,
    #[serde(default)]
    pub batch_cap: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    /// The built-in desk-scale plan: synthetic overlapping logistic data on
    /// path, random and complete graphs (maximum degrees 2, 5, 19).
    pub fn desk_default() -> Self {
        ExperimentPlan {
            agents: None,
            graphs: vec![
                GraphCase {
                    label: "path".into(),
                    spec: GraphSpec::Named {
                        family: crate::graph::GraphFamily::Path,
                    },
                    expected_max_degree: Some(2),
                },
                GraphCase {
                    label: "erdos_renyi".into(),
                    spec: GraphSpec::ErdosRenyi {
                        edge_prob: 0.12,
                        seed: Some(4),
                    },
                    expected_max_degree: Some(5),
                },
                GraphCase {
                    label: "complete".into(),
                    spec: GraphSpec::Named {
                        family: crate::graph::GraphFamily::Complete,
                    },
                    expected_max_degree: Some(19),
                },
            ],
            problem: ProblemSpec::SyntheticLogistic {
                rows: None,
                features: 10,
                separability: Separability::Overlapping,
                mu: 0.0,
                lipschitz: Default::default(),
                seed: None,
            },
            algorithms: vec![
                AlgorithmSpec::Pds {
                    r: DESK_R,
                    lipschitz_scale: DESK_LIPSCHITZ_SCALE,
                    label: None,
                },
                AlgorithmSpec::Baseline {
                    eta: None,
                    q: None,
                    lipschitz_scale: DESK_LIPSCHITZ_SCALE,
                    label: None,
                },
            ],
            targets: vec![TargetSpec::Gap {
                value: 0.1,
                feasibility: Some(0.1),
            }],
            round_budget: None,
            seed: 0,
            operator: OperatorChoice::Laplacian,
            x0: X0Rule::Zeros,
            batch_cap: None,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() || self.algorithms.is_empty() || self.targets.is_empty() {
            return Err(Error::InvalidArgument("a plan needs graphs, algorithms and targets".into()));
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(AlgorithmSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("algorithm labels must be unique".into()));
        }
        let mut graphs: Vec<&str> = self.graphs.iter().map(|g| g.label.as_str()).collect();
        graphs.sort();
        if graphs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("graph labels must be unique".into()));
        }
        if let ProblemSpec::Libsvm { path, .. } = &self.problem {
            if !path.exists() {
                return Err(Error::InvalidArgument(format!("dataset {} does not exist", path.display())));
            }
        }
        for g in &self.graphs {
            if let GraphSpec::EdgeList { path } = &g.spec {
                if !path.exists() {
                    return Err(Error::InvalidArgument(format!("edge list {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }
}

/// `R` of the built-in desk plan.
pub const DESK_R: f64 = 5.0;
/// `L̃` multiplier of the built-in desk plan.
pub const DESK_LIPSCHITZ_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Reached,
    /// Round budget exhausted before the target.
    #[serde(rename = "NA")]
    Na,
    Error,
}

impl CellStatus {
    fn as_str(self) -> &'static str {
        match self {
            CellStatus::Reached => "reached",
            CellStatus::Na => "NA",
            CellStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub graph: String,
    pub max_degree: Option<usize>,
    pub expected_max_degree: Option<usize>,
    pub op_norm: Option<f64>,
    pub target: TargetSpec,
    /// Absolute loss threshold the run stopped at.
    pub target_loss: Option<f64>,
    pub status: CellStatus,
    pub achieved_loss: Option<f64>,
    pub achieved_feasibility: Option<f64>,
    pub rounds: Option<u64>,
    /// Per-agent gradient evaluations (mini-batch estimates for SPDS).
    pub gradients: Option<u64>,
    /// Stochastic samples over all agents.
    pub samples: Option<u64>,
    pub outer_iterations: Option<usize>,
    /// Planned `N` of the successful SPDS run.
    pub planned_n: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultTable {
    pub agents: usize,
    pub round_budget: u64,
    pub f_star: Option<f64>,
    pub lipschitz_estimate: f64,
    pub rows: Vec<ResultRow>,
    #[serde(skip)]
    pub trajectories: Vec<Option<Trajectory>>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub metrics: RunMetrics,
    pub stochastic: bool,
}

const CSV_HEADER: &str = "algorithm,graph,max_degree,expected_max_degree,op_norm,target_kind,target,target_feasibility,target_loss,status,\
achieved_loss,achieved_feasibility,rounds,gradients,samples,outer_iterations,planned_n,error";

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

fn opt_f(v: &Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:e},{},{},{},{},{},{},{},{},{},{},{}",
                r.algorithm,
                r.graph,
                opt(&r.max_degree),
                opt(&r.expected_max_degree),
                opt_f(&r.op_norm),
                r.target.kind(),
                r.target.value(),
                opt_f(&r.target.feasibility()),
                opt_f(&r.target_loss),
                r.status.as_str(),
                opt_f(&r.achieved_loss),
                opt_f(&r.achieved_feasibility),
                opt(&r.rounds),
                opt(&r.gradients),
                opt(&r.samples),
                opt(&r.outer_iterations),
                opt(&r.planned_n),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `results.csv`, `results.json`, `trajectories/<cell>.csv` and
    /// `plot_data/<cell>.<series>.dat` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        let write = |p: &Path, text: &str| std::fs::write(p, text).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        write(&dir.join("results.csv"), &self.to_csv())?;
        write(&dir.join("results.json"), &self.to_json()?)?;
        let traj = dir.join("trajectories");
        let plots = dir.join("plot_data");
        mkdir(&traj)?;
        mkdir(&plots)?;
        for (r, t) in self.rows.iter().zip(&self.trajectories) {
            let Some(t) = t else { continue };
            let id = cell_id(r);
            let csv = if t.stochastic {
                t.metrics.to_csv_stochastic(0)
            } else {
                t.metrics.to_csv()
            };
            write(&traj.join(format!("{id}.csv")), &csv)?;
            let series = |f: &dyn Fn(&crate::pds::TracePoint) -> u64| {
                t.metrics.trace.iter().fold(String::new(), |mut s, p| {
                    let _ = writeln!(s, "{} {:e}", f(p), p.loss);
                    s
                })
            };
            write(&plots.join(format!("{id}.loss_vs_rounds.dat")), &series(&|p| p.rounds))?;
            write(&plots.join(format!("{id}.loss_vs_gradients.dat")), &series(&|p| p.gradients))?;
            if t.stochastic {
                write(&plots.join(format!("{id}.loss_vs_samples.dat")), &series(&|p| p.samples))?;
            }
        }
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cell_id(r: &ResultRow) -> String {
    let mut t = format!("{}{:e}", r.target.kind(), r.target.value());
    if let Some(eps) = r.target.feasibility() {
        let _ = write!(t, "_feas{eps:e}");
    }
    format!("{}__{}__{}", sanitize(&r.algorithm), sanitize(&r.graph), sanitize(&t))
}

struct Cell<'a> {
    alg: &'a AlgorithmSpec,
    graph: &'a GraphCase,
    op: &'a std::result::Result<ConsensusOperator, String>,
    target: TargetSpec,
}

struct Ctx<'a> {
    objs: &'a [LocalObjective],
    x0: &'a [f64],
    f_star: Option<f64>,
    budget: u64,
    seed: u64,
    batch_cap: Option<u64>,
}

/// Runs every (algorithm, graph, target) cell, in parallel, and returns the
/// rows in plan order. Solver failures become error rows; only problems
/// that affect the whole plan (data loading, the reference solve) abort.
pub fn run_plan(plan: &ExperimentPlan, scale: Scale) -> Result<ResultTable> {
    plan.validate()?;
    let preset = scale.preset();
    let m = plan.agents.unwrap_or(preset.agents);
    let budget = plan.round_budget.unwrap_or(preset.round_budget);
    let objs = plan.problem.build(m, plan.seed, preset.rows)?;
    let consts = problem_constants(&objs)?;
    let x0 = plan.x0.build(&objs)?;
    let f_star = if plan.targets.iter().any(|t| matches!(t, TargetSpec::Gap { .. })) {
        let sol = centralized_solve(&objs, 1e-9)?;
        log::info!("reference optimum f* = {} after {} iterations", sol.value, sol.iterations);
        Some(sol.value)
    } else {
        None
    };
    let ops: Vec<std::result::Result<ConsensusOperator, String>> = plan
        .graphs
        .iter()
        .map(|g| {
            g.spec
                .build(m, plan.seed)
                .and_then(|graph| build_operator(graph, consts.dim, plan.operator))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut cells = Vec::new();
    for alg in &plan.algorithms {
        for (g, op) in plan.graphs.iter().zip(&ops) {
            for &target in &plan.targets {
                cells.push(Cell { alg, graph: g, op, target });
            }
        }
    }
    let ctx = Ctx {
        objs: &objs,
        x0: &x0,
        f_star,
        budget,
        seed: plan.seed,
        batch_cap: plan.batch_cap,
    };
    let results: Vec<(ResultRow, Option<Trajectory>)> = cells.par_iter().map(|c| run_cell(&ctx, c)).collect();
    let (rows, trajectories) = results.into_iter().unzip();
    Ok(ResultTable {
        agents: m,
        round_budget: budget,
        f_star,
        lipschitz_estimate: consts.lipschitz,
        rows,
        trajectories,
    })
}

fn run_cell(ctx: &Ctx<'_>, cell: &Cell<'_>) -> (ResultRow, Option<Trajectory>) {
    let mut row = ResultRow {
        algorithm: cell.alg.label(),
        graph: cell.graph.label.clone(),
        max_degree: None,
        expected_max_degree: cell.graph.expected_max_degree,
        op_norm: None,
        target: cell.target,
        target_loss: None,
        status: CellStatus::Error,
        achieved_loss: None,
        achieved_feasibility: None,
        rounds: None,
        gradients: None,
        samples: None,
        outer_iterations: None,
        planned_n: None,
        error: None,
    };
    let op = match cell.op {
        Ok(op) => op,
        Err(e) => {
            row.error = Some(e.clone());
            return (row, None);
        }
    };
    row.max_degree = Some(op.graph().max_degree());
    row.op_norm = Some(op.norm());
    let target_loss = match (cell.target, ctx.f_star) {
        (TargetSpec::Loss { value, .. }, _) => value,
        (TargetSpec::Gap { value, .. }, Some(f)) => f + value,
        (TargetSpec::Gap { .. }, None) => unreachable!("f* is computed whenever a gap target exists"),
    };
    row.target_loss = Some(target_loss);
    match execute_cell(ctx, cell.alg, op, target_loss, cell.target.feasibility()) {
        Ok((metrics, planned_n)) => {
            row.status = match metrics.stop {
                StopReason::TargetReached => CellStatus::Reached,
                _ => CellStatus::Na,
            };
            row.achieved_loss = metrics.final_loss();
            row.achieved_feasibility = metrics.final_feasibility();
            row.rounds = Some(metrics.rounds);
            row.gradients = Some(metrics.gradients);
            row.samples = Some(metrics.samples);
            row.outer_iterations = Some(metrics.outer_iterations);
            row.planned_n = planned_n;
            let stochastic = matches!(cell.alg, AlgorithmSpec::Spds { .. });
            (row, Some(Trajectory { metrics, stochastic }))
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

fn execute_cell(
    ctx: &Ctx<'_>,
    alg: &AlgorithmSpec,
    op: &ConsensusOperator,
    target_loss: f64,
    target_feasibility: Option<f64>,
) -> Result<(RunMetrics, Option<usize>)> {
    let objs = scale_lipschitz(ctx.objs.to_vec(), alg.lipschitz_scale())?;
    let c = problem_constants(&objs)?;
    let opts = RunOptions {
        loss: LossKind::ConsensusAverage,
        round_budget: Some(ctx.budget),
        target_loss: Some(target_loss),
        target_feasibility,
        batch_cap: ctx.batch_cap,
        ..RunOptions::default()
    };
    // every outer iteration costs at least two rounds
    let max_outer = (ctx.budget / 2).max(1) as usize;
    match alg {
        AlgorithmSpec::Pds { r, .. } => {
            let s = build_deterministic(&ScheduleInputs::deterministic(c.lipschitz, c.mu, op.norm(), *r))?;
            Ok((pds_run(&objs, op, &s, max_outer, ctx.x0, &opts)?.metrics, None))
        }
        AlgorithmSpec::Baseline { eta, q, .. } => {
            let d = StepParams::default_for(c.lipschitz, op.norm());
            let steps = StepParams {
                eta: eta.unwrap_or(d.eta),
                q: q.unwrap_or(d.q),
            };
            Ok((baseline_pd_run(&objs, op, max_outer, steps, ctx.x0, &opts)?.metrics, None))
        }
        AlgorithmSpec::Spds {
            r,
            c: batch_c,
            sigma,
            noise,
            n_step,
            ..
        } => {
            if *n_step == 0 {
                return Err(Error::InvalidArgument("n_step must be positive".into()));
            }
            let oracles = build_oracles(&objs, *noise, *sigma, ctx.seed)?;
            let mut n = *n_step;
            loop {
                let s = build_stochastic(&ScheduleInputs::stochastic(
                    c.lipschitz,
                    c.mu,
                    *sigma,
                    op.norm(),
                    *r,
                    *batch_c,
                    n,
                ))?;
                let out = spds_run(&oracles, op, &s, n, ctx.x0, ctx.seed, &opts)?;
                if out.metrics.stop != StopReason::Completed || n + n_step > max_outer {
                    return Ok((out.metrics, Some(n)));
                }
                n += n_step;
            }
        }
    }
}

/// Deterministic summary of one `run`; wall-clock times are left out so
/// identical configs give identical files.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub agents: usize,
    pub dim: usize,
    pub edges: usize,
    pub max_degree: usize,
    pub op_norm: f64,
    pub lipschitz: f64,
    pub mu: f64,
    pub outer_iterations: usize,
    pub gradients: u64,
    pub init_gradients: u64,
    pub samples: u64,
    pub rounds: u64,
    pub stop: StopReason,
    pub final_loss: Option<f64>,
    pub final_feasibility: Option<f64>,
    pub x_bar: Vec<f64>,
    pub replications: Option<ReplicationReport>,
    pub message_log_records: usize,
    pub audit_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: RunSummary,
    /// Trajectory CSV (all replications for SPDS).
    pub csv: String,
}

/// Executes one [`RunConfig`].
pub fn execute_run(cfg: &RunConfig) -> Result<RunReport> {
    let objs = cfg.problem.build(cfg.agents, cfg.seed, DEFAULT_SYNTHETIC_ROWS)?;
    let objs = scale_lipschitz(objs, cfg.algorithm.lipschitz_scale())?;
    let c = problem_constants(&objs)?;
    let graph = cfg.graph.build(cfg.agents, cfg.seed)?;
    let op = build_operator(graph, c.dim, cfg.operator)?;
    let x0 = cfg.x0.build(&objs)?;
    let opts = cfg.options();
    let (out, replications) = match &cfg.algorithm {
        AlgorithmSpec::Pds { r, .. } => {
            let s = build_deterministic(&ScheduleInputs::deterministic(c.lipschitz, c.mu, op.norm(), *r))?;
            (pds_run(&objs, &op, &s, cfg.n, &x0, &opts)?, None)
        }
        AlgorithmSpec::Baseline { eta, q, .. } => {
            let d = StepParams::default_for(c.lipschitz, op.norm());
            let steps = StepParams {
                eta: eta.unwrap_or(d.eta),
                q: q.unwrap_or(d.q),
            };
            (baseline_pd_run(&objs, &op, cfg.n, steps, &x0, &opts)?, None)
        }
        AlgorithmSpec::Spds {
            r,
            c: batch_c,
            sigma,
            noise,
            ..
        } => {
            let s = build_stochastic(&ScheduleInputs::stochastic(
                c.lipschitz,
                c.mu,
                *sigma,
                op.norm(),
                *r,
                *batch_c,
                cfg.n,
            ))?;
            let oracles = build_oracles(&objs, *noise, *sigma, cfg.seed)?;
            let rep = replicate(&StochasticRunConfig {
                oracles: &oracles,
                op: &op,
                schedule: &s,
                n: cfg.n,
                x0: &x0,
                replications: cfg.replications,
                base_seed: cfg.seed,
                opts: opts.clone(),
            })?;
            let first = spds_run(&oracles, &op, &s, cfg.n, &x0, cfg.seed, &opts)?;
            (first, Some(rep))
        }
    };
    let csv = match &replications {
        Some(rep) => rep.to_csv(),
        None => out.metrics.to_csv(),
    };
    let m = &out.metrics;
    let summary = RunSummary {
        algorithm: cfg.algorithm.label(),
        agents: cfg.agents,
        dim: c.dim,
        edges: op.graph().edge_count(),
        max_degree: op.graph().max_degree(),
        op_norm: op.norm(),
        lipschitz: c.lipschitz,
        mu: c.mu,
        outer_iterations: m.outer_iterations,
        gradients: m.gradients,
        init_gradients: m.init_gradients,
        samples: m.samples,
        rounds: m.rounds,
        stop: m.stop,
        final_loss: m.final_loss(),
        final_feasibility: m.final_feasibility(),
        x_bar: out.x_bar.clone(),
        replications,
        message_log_records: out.log.len(),
        audit_violations: out.log.audit(op.graph()).len(),
    };
    Ok(RunReport { summary, csv })
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphInfo {
    pub m: usize,
    pub edges: usize,
    pub max_degree: usize,
    pub operator: OperatorChoice,
    pub dim: usize,
    pub norm: f64,
}

pub fn graph_info(cfg: &GraphInfoConfig) -> Result<GraphInfo> {
    let g = cfg.graph.build(cfg.agents, cfg.seed)?;
    info_for(g, cfg.operator, cfg.dim)
}

/// Info for a graph read directly from an edge-list file (Laplacian, `d = 1`).
pub fn graph_info_from_edge_list(path: &Path) -> Result<GraphInfo> {
    info_for(crate::graph::CommGraph::read_edge_list(path)?, OperatorChoice::Laplacian, 1)
}

fn info_for(g: crate::graph::CommGraph, operator: OperatorChoice, dim: usize) -> Result<GraphInfo> {
    let (m, edges, max_degree) = (g.node_count(), g.edge_count(), g.max_degree());
    let op = build_operator(g, dim, operator)?;
    Ok(GraphInfo {
        m,
        edges,
        max_degree,
        operator,
        dim,
        norm: op.norm(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstrainedSummary {
    pub x_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub objective: f64,
    pub f_gap: Option<f64>,
    pub residual: f64,
    pub op_norm: f64,
    pub gradients: u64,
    pub rounds: u64,
}

pub fn execute_constrained(cfg: &ConstrainedConfig) -> Result<ConstrainedSummary> {
    let objs = cfg.objective.build(cfg.blocks, cfg.seed, DEFAULT_SYNTHETIC_ROWS)?;
    let c = problem_constants(&objs)?;
    let a: Arc<dyn LinearOperator> = Arc::new(DenseOperator::from_rows(&cfg.a)?);
    let s = build_deterministic(&ScheduleInputs::deterministic(c.lipschitz, c.mu, a.norm(), cfg.r))?;
    let x0 = cfg.x0.build(&objs)?;
    let op_norm = a.norm();
    let out = constrained_solve(objs, a, cfg.b.clone(), &s, cfg.n, &x0, cfg.f_star, &RunOptions::default())?;
    Ok(ConstrainedSummary {
        x_bar: out.x_bar,
        z_bar: out.z_bar,
        objective: out.objective,
        f_gap: out.f_gap,
        residual: out.residual,
        op_norm,
        gradients: out.metrics.gradients,
        rounds: out.metrics.rounds,
    })
}
