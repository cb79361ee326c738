//! Deterministic primal-dual sliding: network view, message-passing agent
//! view, and a non-sliding primal-dual baseline.
//!
//! The same outer/inner recursion also drives the stochastic solver and the
//! saddle-point solver; they differ only in how `y_k` is produced and how the
//! dual variable is updated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{laplacian_row_from, CommGraph, ConsensusOperator, OperatorForm};
use crate::linalg::{all_finite, norm2, LinearOperator};
use crate::problem::{
    grad, problem_constants, prox_step_into, stoch_grad, EvalCounters, LocalObjective, StochasticOracle,
};
use crate::schedule::{verify_conditions, ParamSchedule, ScheduleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Whole-network recursion with stacked vectors.
    #[default]
    Network,
    /// Per-agent recursion with explicit neighbor messages.
    Agent,
}

/// Where the reported loss is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `Σ_i f_i(x̄^{(i)})`
    #[default]
    Stacked,
    /// `Σ_i f_i(avg_j x̄^{(j)})`
    ConsensusAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub view: View,
    pub loss: LossKind,
    /// Stop before an outer iteration that would exceed this many rounds.
    pub round_budget: Option<u64>,
    /// Stop once the reported loss is at or below this value.
    pub target_loss: Option<f64>,
    /// With a target loss, additionally require `‖𝒜x̄ − b‖ ≤` this value.
    pub target_feasibility: Option<f64>,
    /// Reject schedules that fail the convergence conditions.
    pub check_schedule: bool,
    /// Keep every inner iterate `x_k^t` (and `z_k^t`).
    pub record_iterates: bool,
    /// Upper bound on stochastic mini-batch sizes.
    pub batch_cap: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            view: View::Network,
            loss: LossKind::Stacked,
            round_budget: None,
            target_loss: None,
            target_feasibility: None,
            check_schedule: true,
            record_iterates: false,
            batch_cap: None,
        }
    }
}

impl RunOptions {
    pub fn with_view(mut self, view: View) -> Self {
        self.view = view;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    TargetReached,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: usize,
    /// Outer gradient evaluations per agent so far.
    pub gradients: u64,
    /// Stochastic samples across all agents so far.
    pub samples: u64,
    pub rounds: u64,
    pub loss: f64,
    pub feasibility: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Gradient evaluations (mini-batch estimates for SPDS) per agent in the
    /// outer loop.
    pub gradients: u64,
    /// Gradient evaluations per agent spent on `y_0`.
    pub init_gradients: u64,
    /// Stochastic samples summed over agents.
    pub samples: u64,
    /// Communication rounds, two per inner iteration.
    pub rounds: u64,
    pub operator_applies: u64,
    pub adjoint_applies: u64,
    pub outer_iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TracePoint>,
    pub wall_ms: f64,
}

impl RunMetrics {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|p| p.loss)
    }

    pub fn final_feasibility(&self) -> Option<f64> {
        self.trace.last().map(|p| p.feasibility)
    }

    /// CSV with columns `k,gradients,rounds,loss,feasibility,elapsed_ms`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,gradients,rounds,loss,feasibility,elapsed_ms\n");
        for p in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{:.3}",
                p.k, p.gradients, p.rounds, p.loss, p.feasibility, p.elapsed_ms
            );
        }
        s
    }

    /// CSV with the extra `samples` and `replication` columns.
    pub fn to_csv_stochastic(&self, replication: usize) -> String {
        let mut s = String::from("k,gradients,samples,rounds,loss,feasibility,elapsed_ms,replication\n");
        for p in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{:e},{:.3},{}",
                p.k, p.gradients, p.samples, p.rounds, p.loss, p.feasibility, p.elapsed_ms, replication
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadTag {
    U,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub tag: PayloadTag,
    pub bytes: usize,
}

/// Every message delivered in an agent-view run (empty for the network view).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose endpoints are neither an edge nor a self-loop.
    pub fn audit(&self, g: &CommGraph) -> Vec<MessageRecord> {
        self.records
            .iter()
            .filter(|r| r.sender >= g.node_count() || r.receiver >= g.node_count() || !g.is_adjacent(r.sender, r.receiver))
            .copied()
            .collect()
    }
}

/// Stacked iterates at the end of a run (or at the moment it stopped).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverState {
    /// Last completed outer iteration.
    pub k: usize,
    /// Inner steps of that iteration.
    pub t: usize,
    /// `x_k`
    pub x: Vec<f64>,
    /// `x_{k−1}`
    pub x_prev: Vec<f64>,
    /// `x_k^{T_k − 1}`
    pub x_inner_prev: Vec<f64>,
    /// `x̲_k`
    pub x_under: Vec<f64>,
    /// `x̂_k`
    pub x_hat: Vec<f64>,
    /// `y_k` (or `v_k`)
    pub y: Vec<f64>,
    /// `z_k`
    pub z: Vec<f64>,
    /// `ẑ_k`
    pub z_hat: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerRecord {
    pub k: usize,
    pub t: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_bar: Vec<f64>,
    pub state: SolverState,
    pub metrics: RunMetrics,
    pub log: MessageLog,
    pub iterates: Vec<InnerRecord>,
}

/// How `y_k` is formed.
pub(crate) enum Gradients<'a> {
    Exact,
    Stochastic(&'a [StochasticOracle]),
}

/// Dual update `z ← argmin h(z) − ⟨g, z⟩ + q/2 ‖z − z_prev‖²`, written in place.
pub(crate) type DualUpdate<'a> = &'a (dyn Fn(&mut [f64], &[f64], f64) + Sync);

/// `z += g / q`, the consensus (`h = 0`) dual step.
pub(crate) fn consensus_dual(z: &mut [f64], g: &[f64], q: f64) {
    let inv_q = 1.0 / q;
    for (zi, gi) in z.iter_mut().zip(g) {
        *zi += inv_q * gi;
    }
}

pub(crate) struct EngineInput<'a> {
    pub objs: Vec<&'a LocalObjective>,
    pub op: &'a dyn LinearOperator,
    /// Present for the agent view (Laplacian consensus only).
    pub graph: Option<&'a CommGraph>,
    pub schedule: &'a ParamSchedule,
    pub n: usize,
    pub x0: &'a [f64],
    pub z0: Option<&'a [f64]>,
    pub grads: Gradients<'a>,
    pub dual: DualUpdate<'a>,
    /// Residual `𝒜x − b` instead of `𝒜x` in the feasibility trace.
    pub rhs: Option<&'a [f64]>,
    pub opts: &'a RunOptions,
}

/// Per-agent primal state; the agent view steps these in parallel.
#[derive(Debug, Clone)]
struct AgentState {
    x_prev2: Vec<f64>,
    x_prev: Vec<f64>,
    x_hat: Vec<f64>,
    x_under: Vec<f64>,
    x_inner_prev: Vec<f64>,
    y: Vec<f64>,
    cur: Vec<f64>,
    prev: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    next: Vec<f64>,
    sum_x: Vec<f64>,
    acc_x: Vec<f64>,
    acc_y: Vec<f64>,
    /// Agent-view dual block and its sums.
    z: Vec<f64>,
    z_new: Vec<f64>,
    sum_z: Vec<f64>,
    acc_z: Vec<f64>,
    z_hat: Vec<f64>,
    counters: EvalCounters,
    log: Vec<MessageRecord>,
}

impl AgentState {
    fn new(x0: &[f64], z0: Option<&[f64]>) -> Self {
        let d = x0.len();
        let zeros = vec![0.0; d];
        let zb = z0.map_or_else(Vec::new, <[f64]>::to_vec);
        let zl = zb.len();
        AgentState {
            x_prev2: x0.to_vec(),
            x_prev: x0.to_vec(),
            x_hat: x0.to_vec(),
            x_under: x0.to_vec(),
            x_inner_prev: x0.to_vec(),
            y: zeros.clone(),
            cur: zeros.clone(),
            prev: zeros.clone(),
            u: zeros.clone(),
            w: zeros.clone(),
            next: zeros.clone(),
            sum_x: zeros.clone(),
            acc_x: zeros.clone(),
            acc_y: zeros,
            z: zb,
            z_new: vec![0.0; zl],
            sum_z: vec![0.0; zl],
            acc_z: vec![0.0; zl],
            z_hat: vec![0.0; zl],
            counters: EvalCounters::default(),
            log: Vec::new(),
        }
    }

    /// `x̃_k`, `x̲_k` and `y_k`.
    fn outer(&mut self, obj: &LocalObjective, lambda: f64, tau: f64, grads: GradStep<'_>) -> Result<()> {
        for (((xu, xp), xh), xp2) in self.x_under.iter_mut().zip(&self.x_prev).zip(&self.x_hat).zip(&self.x_prev2) {
            let x_tilde = xp + lambda * (xh - xp2);
            *xu = (x_tilde + tau * *xu) / (1.0 + tau);
        }
        self.y = match grads {
            GradStep::Exact => grad(obj, &self.x_under, &mut self.counters)?,
            GradStep::Stochastic { oracle, batch, mut rng } => {
                self.counters.gradients += 1;
                stoch_grad(oracle, &self.x_under, batch, &mut rng, &mut self.counters)?
            }
        };
        self.cur.clone_from(&self.x_prev);
        self.prev.clone_from(&self.x_inner_prev);
        self.sum_x.fill(0.0);
        self.sum_z.fill(0.0);
        Ok(())
    }

    /// `ũ_k^t`
    fn extrapolate(&mut self, alpha: f64) {
        for ((u, c), p) in self.u.iter_mut().zip(&self.cur).zip(&self.prev) {
            *u = c + alpha * (c - p);
        }
    }

    /// `x_k^t` from `w = (𝒜ᵀz)^{(i)}` already stored in `self.w`.
    fn primal(&mut self, obj: &LocalObjective, eta: f64, p: f64) -> Result<bool> {
        for (w, y) in self.w.iter_mut().zip(&self.y) {
            *w += y;
        }
        prox_step_into(obj, &self.w, &self.cur, &self.x_prev, eta, p, &mut self.next)?;
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        for (s, c) in self.sum_x.iter_mut().zip(&self.cur) {
            *s += c;
        }
        Ok(all_finite(&self.cur))
    }

    /// Closes outer iteration: `x_k`, `x̂_k` and the weighted averages.
    fn close(&mut self, inner: usize, shrink: f64) {
        let tf = inner as f64;
        std::mem::swap(&mut self.x_prev2, &mut self.x_prev);
        self.x_prev.clone_from(&self.cur);
        self.x_inner_prev.clone_from(&self.prev);
        for (h, s) in self.x_hat.iter_mut().zip(&self.sum_x) {
            *h = s / tf;
        }
        for (zh, s) in self.z_hat.iter_mut().zip(&self.sum_z) {
            *zh = s / tf;
        }
        rescaled_add(&mut self.acc_x, shrink, &self.x_hat);
        rescaled_add(&mut self.acc_y, shrink, &self.y);
        rescaled_add(&mut self.acc_z, shrink, &self.z_hat);
    }
}

#[derive(Clone)]
enum GradStep<'a> {
    Exact,
    Stochastic {
        oracle: &'a StochasticOracle,
        batch: usize,
        rng: ChaCha8Rng,
    },
}

/// `acc ← shrink·acc + v`
fn rescaled_add(acc: &mut [f64], shrink: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a = *a * shrink + x;
    }
}

fn stack(agents: &[AgentState], f: impl Fn(&AgentState) -> &[f64]) -> Vec<f64> {
    agents.iter().flat_map(|a| f(a).iter().copied()).collect()
}

fn scaled(v: Vec<f64>, w: f64) -> Vec<f64> {
    v.into_iter().map(|x| x / w).collect()
}

/// Agent `i`'s dual step: `z = z_prev + (1/q)·Σ_{j∈N_i} ℒ^{(i,j)} ũ^{(j)}`.
/// `neighbor_u` must hold exactly the closed neighborhood `N_i`; one receive
/// per entry is appended to `log`.
pub fn agent_step_z(
    graph: &CommGraph,
    i: usize,
    neighbor_u: &BTreeMap<usize, &[f64]>,
    z_prev: &[f64],
    q: f64,
    round: u64,
    log: &mut Vec<MessageRecord>,
) -> Result<Vec<f64>> {
    let mut z = z_prev.to_vec();
    let mut row = vec![0.0; z_prev.len()];
    gather_row(graph, i, neighbor_u, PayloadTag::U, round, &mut row, log)?;
    consensus_dual(&mut z, &row, q);
    Ok(z)
}

/// `Σ_{j∈N_i} ℒ^{(i,j)} v^{(j)}` from received payloads.
fn gather_row(
    graph: &CommGraph,
    i: usize,
    payloads: &BTreeMap<usize, &[f64]>,
    tag: PayloadTag,
    round: u64,
    out: &mut [f64],
    log: &mut Vec<MessageRecord>,
) -> Result<()> {
    let nbrs = graph.neighbors(i);
    if let Some(&sender) = payloads.keys().find(|j| nbrs.binary_search(j).is_err()) {
        return Err(Error::UnexpectedPayload { agent: i, sender });
    }
    for &j in nbrs {
        match payloads.get(&j) {
            Some(v) if v.len() == out.len() => log.push(MessageRecord {
                round,
                sender: j,
                receiver: i,
                tag,
                bytes: std::mem::size_of_val(*v),
            }),
            Some(v) => {
                return Err(Error::DimensionMismatch {
                    context: "neighbor payload",
                    expected: out.len(),
                    got: v.len(),
                })
            }
            None => return Err(Error::MissingNeighborPayload { agent: i, neighbor: j }),
        }
    }
    laplacian_row_from(graph, i, |j| payloads[&j], out);
    Ok(())
}

fn neighborhood<'a>(graph: &CommGraph, i: usize, published: &'a [Vec<f64>]) -> BTreeMap<usize, &'a [f64]> {
    graph.neighbors(i).iter().map(|&j| (j, published[j].as_slice())).collect()
}

pub(crate) fn run_engine(inp: EngineInput<'_>) -> Result<RunOutput> {
    let start = Instant::now();
    let opts = inp.opts;
    let s = inp.schedule;
    let m = inp.objs.len();
    if m == 0 {
        return Err(Error::InvalidArgument("at least one objective is required".into()));
    }
    let consts = problem_constants_ref(&inp.objs)?;
    let d = consts.dim;
    if inp.op.cols() != m * d {
        return Err(Error::DimensionMismatch {
            context: "operator columns vs stacked primal dimension",
            expected: m * d,
            got: inp.op.cols(),
        });
    }
    if inp.x0.len() != m * d {
        return Err(Error::DimensionMismatch {
            context: "initial point",
            expected: m * d,
            got: inp.x0.len(),
        });
    }
    let p_rows = inp.op.rows();
    if let Some(z0) = inp.z0 {
        if z0.len() != p_rows {
            return Err(Error::DimensionMismatch {
                context: "initial dual point",
                expected: p_rows,
                got: z0.len(),
            });
        }
    }
    if let Some(b) = inp.rhs {
        if b.len() != p_rows {
            return Err(Error::DimensionMismatch {
                context: "constraint right-hand side",
                expected: p_rows,
                got: b.len(),
            });
        }
    }
    if inp.n == 0 {
        return Err(Error::InvalidArgument("at least one outer iteration is required".into()));
    }
    for (i, (o, xi)) in inp.objs.iter().zip(inp.x0.chunks_exact(d)).enumerate() {
        if !all_finite(xi) || o.set().distance(xi) > 1e-12 {
            return Err(Error::InvalidArgument(format!("initial block of agent {} is not in its feasible set", i + 1)));
        }
    }
    if let Gradients::Stochastic(oracles) = inp.grads {
        if oracles.len() != m {
            return Err(Error::DimensionMismatch {
                context: "stochastic oracles",
                expected: m,
                got: oracles.len(),
            });
        }
    }
    if opts.check_schedule && !s.is_constant() {
        let mode = match inp.grads {
            Gradients::Exact => ScheduleMode::Deterministic,
            Gradients::Stochastic(_) => ScheduleMode::Stochastic,
        };
        let report = verify_conditions(s, mode, inp.n);
        if !report.passed {
            let names: Vec<String> = report
                .failures()
                .map(|c| format!("{} (first at k={})", c.name, c.first_failure_k.unwrap_or(0)))
                .collect();
            return Err(Error::StepCondition(names.join("; ")));
        }
    }
    let agent_view = inp.graph.is_some();

    let mut agents: Vec<AgentState> = inp
        .x0
        .chunks_exact(d)
        .enumerate()
        .map(|(i, xi)| {
            let zeros = vec![0.0; d];
            let zi = match (agent_view, inp.z0) {
                (true, Some(z0)) => Some(&z0[i * d..(i + 1) * d]),
                (true, None) => Some(&zeros[..]),
                (false, _) => None,
            };
            AgentState::new(xi, zi)
        })
        .collect();

    // network-view dual state
    let mut z: Vec<f64> = inp.z0.map_or_else(|| vec![0.0; p_rows], <[f64]>::to_vec);
    let mut z_sum = vec![0.0; p_rows];
    let mut z_hat = vec![0.0; p_rows];
    let mut acc_z = vec![0.0; p_rows];
    let mut g = vec![0.0; p_rows];
    let mut stacked = vec![0.0; m * d];
    let mut adj = vec![0.0; m * d];
    let mut acc_w = 0.0f64;

    let mut metrics = RunMetrics {
        gradients: 0,
        init_gradients: 0,
        samples: 0,
        rounds: 0,
        operator_applies: 0,
        adjoint_applies: 0,
        outer_iterations: 0,
        stop: StopReason::Completed,
        trace: Vec::new(),
        wall_ms: 0.0,
    };
    let mut log = MessageLog::default();
    let mut iterates = Vec::new();

    // y_0 = ∇f̃(x̲_0) with x̲_0 = x_0, counted on its own line
    if let Gradients::Exact = inp.grads {
        for (a, o) in agents.iter_mut().zip(&inp.objs) {
            let mut c = EvalCounters::default();
            a.y = grad(o, &a.x_under, &mut c)?;
        }
        metrics.init_gradients = 1;
    }

    let mut warned_cap = false;
    let mut last_t = 0;
    for k in 1..=inp.n {
        let inner = s.inner_steps(k)?;
        if let Some(budget) = opts.round_budget {
            if metrics.rounds + 2 * inner as u64 > budget {
                metrics.stop = StopReason::BudgetExhausted;
                break;
            }
        }
        let lambda = s.lambda_k(k);
        let tau = s.tau_k(k);
        let p = s.p_k(k);
        let batch = match inp.grads {
            Gradients::Exact => 0,
            Gradients::Stochastic(_) => {
                let c = s.batch(k)?;
                match opts.batch_cap {
                    Some(cap) if c > cap => {
                        if !warned_cap {
                            log::warn!("mini-batch size {c} at k={k} exceeds the cap {cap}; truncating");
                            warned_cap = true;
                        }
                        cap as usize
                    }
                    _ => c as usize,
                }
            }
        };
        let step_for = |i: usize| match inp.grads {
            Gradients::Exact => GradStep::Exact,
            Gradients::Stochastic(oracles) => GradStep::Stochastic {
                oracle: &oracles[i],
                batch,
                rng: oracles[i].stream(k),
            },
        };
        // the mini-batch estimate is complete before the first inner round
        if agent_view {
            agents
                .par_iter_mut()
                .zip(inp.objs.par_iter())
                .enumerate()
                .try_for_each(|(i, (a, o))| a.outer(o, lambda, tau, step_for(i)))?;
        } else {
            for (i, (a, o)) in agents.iter_mut().zip(&inp.objs).enumerate() {
                a.outer(o, lambda, tau, step_for(i))?;
            }
            z_sum.fill(0.0);
        }

        for t in 1..=inner {
            let alpha = s.alpha(k, t);
            let eta = s.eta(k, t);
            let q = s.q(k, t);
            if !(q > 0.0 && q.is_finite() && eta.is_finite()) {
                return Err(Error::ScheduleOverflow { what: "q_k^t / eta_k^t", k });
            }
            let round_u = metrics.rounds;
            let round_z = round_u + 1;
            if let Some(graph) = inp.graph {
                agents.par_iter_mut().for_each(|a| a.extrapolate(alpha));
                let published: Vec<Vec<f64>> = agents.iter().map(|a| a.u.clone()).collect();
                agents.par_iter_mut().enumerate().try_for_each(|(i, a)| -> Result<()> {
                    let nb = neighborhood(graph, i, &published);
                    let mut row = std::mem::take(&mut a.z_new);
                    gather_row(graph, i, &nb, PayloadTag::U, round_u, &mut row, &mut a.log)?;
                    (inp.dual)(&mut a.z, &row, q);
                    a.z_new = row;
                    for (s, zv) in a.sum_z.iter_mut().zip(&a.z) {
                        *s += zv;
                    }
                    Ok(())
                })?;
                let published: Vec<Vec<f64>> = agents.iter().map(|a| a.z.clone()).collect();
                let bad = agents
                    .par_iter_mut()
                    .zip(inp.objs.par_iter())
                    .enumerate()
                    .map(|(i, (a, o))| -> Result<bool> {
                        let nb = neighborhood(graph, i, &published);
                        let mut w = std::mem::take(&mut a.w);
                        gather_row(graph, i, &nb, PayloadTag::Z, round_z, &mut w, &mut a.log)?;
                        a.w = w;
                        a.primal(o, eta, p).map(|ok| !ok)
                    })
                    .collect::<Result<Vec<bool>>>()?;
                for a in &mut agents {
                    log.records.append(&mut a.log);
                }
                if bad.into_iter().any(|b| b) {
                    return Err(Error::Diverged { k, t });
                }
            } else {
                for (a, chunk) in agents.iter_mut().zip(stacked.chunks_exact_mut(d)) {
                    a.extrapolate(alpha);
                    chunk.copy_from_slice(&a.u);
                }
                inp.op.apply_into(&stacked, &mut g);
                (inp.dual)(&mut z, &g, q);
                for (s, zv) in z_sum.iter_mut().zip(&z) {
                    *s += zv;
                }
                inp.op.apply_adjoint_into(&z, &mut adj);
                let mut ok = all_finite(&z);
                for ((a, o), chunk) in agents.iter_mut().zip(&inp.objs).zip(adj.chunks_exact(d)) {
                    a.w.copy_from_slice(chunk);
                    ok &= a.primal(o, eta, p)?;
                }
                if !ok {
                    return Err(Error::Diverged { k, t });
                }
            }
            metrics.rounds += 2;
            metrics.operator_applies += 1;
            metrics.adjoint_applies += 1;
            if opts.record_iterates {
                let zs = if agent_view { stack(&agents, |a| &a.z) } else { z.clone() };
                iterates.push(InnerRecord {
                    k,
                    t,
                    x: stack(&agents, |a| &a.cur),
                    z: zs,
                });
            }
        }

        let shrink = if k == 1 { 0.0 } else { 1.0 / s.beta_ratio(k) };
        acc_w = acc_w * shrink + 1.0;
        for a in agents.iter_mut() {
            a.close(inner, shrink);
        }
        if !agent_view {
            for (h, sv) in z_hat.iter_mut().zip(&z_sum) {
                *h = sv / inner as f64;
            }
            rescaled_add(&mut acc_z, shrink, &z_hat);
        }
        metrics.outer_iterations = k;
        last_t = inner;
        metrics.gradients = agents[0].counters.gradients;
        metrics.samples = agents.iter().map(|a| a.counters.samples).sum();

        let x_bar = scaled(stack(&agents, |a| &a.acc_x), acc_w);
        let loss = match opts.loss {
            LossKind::Stacked => total_value_ref(&inp.objs, &x_bar),
            LossKind::ConsensusAverage => consensus_value_ref(&inp.objs, &x_bar),
        };
        let mut r = inp.op.apply(&x_bar);
        if let Some(b) = inp.rhs {
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= bi;
            }
        }
        metrics.trace.push(TracePoint {
            k,
            gradients: metrics.gradients,
            samples: metrics.samples,
            rounds: metrics.rounds,
            loss,
            feasibility: norm2(&r),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let feasible = opts.target_feasibility.is_none_or(|eps| norm2(&r) <= eps);
        if feasible && opts.target_loss.is_some_and(|target| loss <= target) {
            metrics.stop = StopReason::TargetReached;
            break;
        }
    }

    let w = if acc_w > 0.0 { acc_w } else { 1.0 };
    let (z_last, z_hat_last, z_bar) = if agent_view {
        (
            stack(&agents, |a| &a.z),
            stack(&agents, |a| &a.z_hat),
            scaled(stack(&agents, |a| &a.acc_z), w),
        )
    } else {
        (z, z_hat, scaled(acc_z, w))
    };
    let state = SolverState {
        k: metrics.outer_iterations,
        t: last_t,
        x: stack(&agents, |a| &a.x_prev),
        x_prev: stack(&agents, |a| &a.x_prev2),
        x_inner_prev: stack(&agents, |a| &a.x_inner_prev),
        x_under: stack(&agents, |a| &a.x_under),
        x_hat: stack(&agents, |a| &a.x_hat),
        y: stack(&agents, |a| &a.y),
        z: z_last,
        z_hat: z_hat_last,
        x_bar: if acc_w > 0.0 { scaled(stack(&agents, |a| &a.acc_x), w) } else { inp.x0.to_vec() },
        y_bar: scaled(stack(&agents, |a| &a.acc_y), w),
        z_bar,
    };
    metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(RunOutput {
        x_bar: state.x_bar.clone(),
        state,
        metrics,
        log,
        iterates,
    })
}

fn problem_constants_ref(objs: &[&LocalObjective]) -> Result<crate::problem::ProblemConstants> {
    let first = objs[0];
    for o in objs {
        if o.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                context: "agent objective dimension",
                expected: first.dim(),
                got: o.dim(),
            });
        }
    }
    Ok(crate::problem::ProblemConstants {
        lipschitz: objs.iter().map(|o| o.lipschitz()).fold(0.0, f64::max),
        mu: first.mu(),
        dim: first.dim(),
    })
}

fn total_value_ref(objs: &[&LocalObjective], x: &[f64]) -> f64 {
    let d = objs[0].dim();
    objs.iter().zip(x.chunks_exact(d)).map(|(o, xi)| o.value(xi)).sum()
}

fn consensus_value_ref(objs: &[&LocalObjective], x: &[f64]) -> f64 {
    let avg = crate::problem::block_average(x, objs.len());
    objs.iter().map(|o| o.value(&avg)).sum()
}

fn check_operator(objs: &[LocalObjective], op: &ConsensusOperator, view: View) -> Result<()> {
    problem_constants(objs)?;
    if op.agents() != objs.len() {
        return Err(Error::DimensionMismatch {
            context: "graph nodes vs objectives",
            expected: objs.len(),
            got: op.agents(),
        });
    }
    if op.agent_dim() != objs[0].dim() {
        return Err(Error::DimensionMismatch {
            context: "operator block dimension",
            expected: objs[0].dim(),
            got: op.agent_dim(),
        });
    }
    if view == View::Agent && op.form() != OperatorForm::Laplacian {
        return Err(Error::InvalidArgument(
            "the agent view exchanges Laplacian rows; use the Laplacian operator form".into(),
        ));
    }
    Ok(())
}

/// Runs deterministic PDS for `n` outer iterations from the stacked point `x0`.
pub fn pds_run(
    objs: &[LocalObjective],
    op: &ConsensusOperator,
    s: &ParamSchedule,
    n: usize,
    x0: &[f64],
    opts: &RunOptions,
) -> Result<RunOutput> {
    check_operator(objs, op, opts.view)?;
    if s.mode() == Some(ScheduleMode::Stochastic) {
        log::info!("running deterministic PDS with a stochastic-mode schedule");
    }
    run_engine(EngineInput {
        objs: objs.iter().collect(),
        op,
        graph: (opts.view == View::Agent).then(|| op.graph()),
        schedule: s,
        n,
        x0,
        z0: None,
        grads: Gradients::Exact,
        dual: &consensus_dual,
        rhs: None,
        opts,
    })
}

pub(crate) fn run_consensus_stochastic(
    oracles: &[StochasticOracle],
    op: &ConsensusOperator,
    s: &ParamSchedule,
    n: usize,
    x0: &[f64],
    opts: &RunOptions,
) -> Result<RunOutput> {
    let objs: Vec<LocalObjective> = oracles.iter().map(|o| o.objective().clone()).collect();
    check_operator(&objs, op, opts.view)?;
    run_engine(EngineInput {
        objs: oracles.iter().map(StochasticOracle::objective).collect(),
        op,
        graph: (opts.view == View::Agent).then(|| op.graph()),
        schedule: s,
        n,
        x0,
        z0: None,
        grads: Gradients::Stochastic(oracles),
        dual: &consensus_dual,
        rhs: None,
        opts,
    })
}

/// Fixed primal and dual steps of the non-sliding baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParams {
    pub eta: f64,
    pub q: f64,
}

impl StepParams {
    /// `q = ‖𝒜‖`, `η = L̃ + ‖𝒜‖` (with `q = 1` for a zero operator).
    pub fn default_for(lipschitz: f64, op_norm: f64) -> Self {
        let q = if op_norm > 0.0 { op_norm } else { 1.0 };
        StepParams {
            eta: lipschitz + op_norm,
            q,
        }
    }

    /// `ηq ≥ ‖𝒜‖²` and `η − ‖𝒜‖²/q ≥ L̃/2`.
    pub fn validate(&self, lipschitz: f64, op_norm: f64) -> Result<()> {
        let a2 = op_norm * op_norm;
        if !(self.eta > 0.0 && self.q > 0.0) {
            return Err(Error::StepCondition(format!("steps must be positive (eta={}, q={})", self.eta, self.q)));
        }
        if self.eta * self.q < a2 {
            return Err(Error::StepCondition(format!(
                "eta*q = {} is below ||A||^2 = {a2}",
                self.eta * self.q
            )));
        }
        if self.eta - a2 / self.q < 0.5 * lipschitz {
            return Err(Error::StepCondition(format!(
                "eta - ||A||^2/q = {} is below L/2 = {}",
                self.eta - a2 / self.q,
                0.5 * lipschitz
            )));
        }
        Ok(())
    }
}

/// Non-sliding primal-dual reference: one gradient per inner iteration,
/// i.e. the PDS recursion with `T_k = 1`, no acceleration, no outer prox
/// term and uniform averaging, run for `total_inner` iterations.
pub fn baseline_pd_run(
    objs: &[LocalObjective],
    op: &ConsensusOperator,
    total_inner: usize,
    steps: StepParams,
    x0: &[f64],
    opts: &RunOptions,
) -> Result<RunOutput> {
    check_operator(objs, op, opts.view)?;
    let c = problem_constants(objs)?;
    steps.validate(c.lipschitz, op.norm())?;
    let s = ParamSchedule::constant(c.lipschitz.max(f64::MIN_POSITIVE), c.mu, op.norm(), steps.eta, steps.q)?;
    let opts = RunOptions {
        check_schedule: false,
        ..opts.clone()
    };
    pds_run(objs, op, &s, total_inner, x0, &opts)
}
