//! Stochastic primal-dual sliding: mini-batch gradient estimates with
//! growing batch sizes, and seeded replications for in-mean guarantees.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::ConsensusOperator;
use crate::pds::{run_consensus_stochastic, RunMetrics, RunOptions, RunOutput};
use crate::problem::StochasticOracle;
use crate::schedule::{ParamSchedule, ScheduleMode};

/// Runs SPDS for `n` outer iterations. Every oracle is reseeded with `seed`,
/// so the run depends only on `(seed, agent, k)` and never on scheduling.
///
/// `n` may stop short of the planned `N` the batch sizes were built for, but
/// may not exceed it.
pub fn spds_run(
    oracles: &[StochasticOracle],
    op: &ConsensusOperator,
    s: &ParamSchedule,
    n: usize,
    x0: &[f64],
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if s.mode() != Some(ScheduleMode::Stochastic) {
        return Err(Error::InvalidArgument("SPDS needs a stochastic schedule".into()));
    }
    let planned = s.inputs().n.unwrap_or(n);
    if n > planned {
        return Err(Error::InvalidArgument(format!(
            "{n} outer iterations requested but the batch sizes were planned for {planned}"
        )));
    }
    let seeded: Vec<StochasticOracle> = oracles.iter().map(|o| o.reseeded(seed)).collect();
    run_consensus_stochastic(&seeded, op, s, n, x0, opts)
}

/// A batch of independent SPDS runs with seeds `base_seed + r`.
#[derive(Debug, Clone)]
pub struct StochasticRunConfig<'a> {
    pub oracles: &'a [StochasticOracle],
    pub op: &'a ConsensusOperator,
    pub schedule: &'a ParamSchedule,
    pub n: usize,
    pub x0: &'a [f64],
    pub replications: usize,
    pub base_seed: u64,
    pub opts: RunOptions,
}

impl StochasticRunConfig<'_> {
    pub fn seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Mean, sample standard deviation (0 for a single value), min and max.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRun {
    pub replication: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub final_feasibility: f64,
    pub samples: u64,
    pub rounds: u64,
    #[serde(skip)]
    pub x_bar: Vec<f64>,
    #[serde(skip)]
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub replications: usize,
    pub base_seed: u64,
    pub final_loss: Summary,
    pub final_feasibility: Summary,
    pub total_samples: u64,
    pub total_rounds: u64,
    pub runs: Vec<ReplicationRun>,
}

impl ReplicationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// All trajectories in one CSV, tagged by replication id.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.runs.iter().enumerate() {
            let csv = r.metrics.to_csv_stochastic(r.replication);
            let body = if i == 0 { &csv[..] } else { csv.split_once('\n').map_or("", |(_, b)| b) };
            let _ = write!(out, "{body}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs every replication (in parallel) and aggregates final loss and
/// feasibility. The report is identical for a given base seed.
pub fn replicate(cfg: &StochasticRunConfig<'_>) -> Result<ReplicationReport> {
    if cfg.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    let runs = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed(r);
            let wrap = |e: Error| Error::Replication {
                replication: r,
                seed,
                source: Box::new(e),
            };
            let out = spds_run(cfg.oracles, cfg.op, cfg.schedule, cfg.n, cfg.x0, seed, &cfg.opts).map_err(wrap)?;
            let last = out
                .metrics
                .trace
                .last()
                .ok_or_else(|| wrap(Error::InvalidArgument("no outer iteration fit the round budget".into())))?;
            Ok(ReplicationRun {
                replication: r,
                seed,
                final_loss: last.loss,
                final_feasibility: last.feasibility,
                samples: out.metrics.samples,
                rounds: out.metrics.rounds,
                x_bar: out.x_bar,
                metrics: out.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    let feas: Vec<f64> = runs.iter().map(|r| r.final_feasibility).collect();
    Ok(ReplicationReport {
        replications: cfg.replications,
        base_seed: cfg.base_seed,
        final_loss: Summary::of(&losses),
        final_feasibility: Summary::of(&feas),
        total_samples: runs.iter().map(|r| r.samples).sum(),
        total_rounds: runs.iter().map(|r| r.rounds).sum(),
        runs,
    })
}
