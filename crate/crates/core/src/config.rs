//! Strict JSON configuration: graph, problem and algorithm specs shared by
//! single runs and experiment plans. Unknown fields are rejected everywhere.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    erdos_renyi, incidence_operator, laplacian_operator, named_graph, CommGraph, ConsensusOperator, GraphFamily,
    OperatorForm, Orientation,
};
use crate::harness::{synthesize_dataset, Separability};
use crate::pds::{LossKind, RunOptions, View};
use crate::problem::{
    load_libsvm, logistic_objective, quadratic_objective, split_shards, FeasibleSet, LipschitzBound, LocalObjective,
    NoiseModel, StochasticOracle,
};

/// Reads and parses a JSON file; syntax and schema errors carry the line
/// and column.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        let msg = full.strip_suffix(&suffix).unwrap_or(&full);
        Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: format!("column {}: {msg}", e.column()),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Named {
        family: GraphFamily,
    },
    ErdosRenyi {
        edge_prob: f64,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Edge-list file; its node count must match the agent count.
    EdgeList {
        path: PathBuf,
    },
}

impl GraphSpec {
    pub fn build(&self, m: usize, seed: u64) -> Result<CommGraph> {
        let g = match self {
            GraphSpec::Named { family } => named_graph(*family, m)?,
            GraphSpec::ErdosRenyi { edge_prob, seed: s } => erdos_renyi(m, *edge_prob, s.unwrap_or(seed))?,
            GraphSpec::EdgeList { path } => CommGraph::read_edge_list(path)?,
        };
        if g.node_count() != m {
            return Err(Error::InvalidArgument(format!(
                "graph has {} nodes but {m} agents are configured",
                g.node_count()
            )));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    #[default]
    Laplacian,
    Incidence,
}

pub fn build_operator(g: CommGraph, d: usize, form: OperatorChoice) -> Result<ConsensusOperator> {
    let g = Arc::new(g);
    match form {
        OperatorChoice::Laplacian => laplacian_operator(g, d),
        OperatorChoice::Incidence => incidence_operator(g, d, Orientation::LowerPositive),
    }
}

impl From<OperatorChoice> for OperatorForm {
    fn from(c: OperatorChoice) -> Self {
        match c {
            OperatorChoice::Laplacian => OperatorForm::Laplacian,
            OperatorChoice::Incidence => OperatorForm::Incidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticBlock {
    pub q_diag: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// One explicit diagonal quadratic per agent.
    Quadratic {
        agents: Vec<QuadraticBlock>,
        #[serde(default)]
        mu: f64,
        #[serde(default = "free_set")]
        set: FeasibleSet,
    },
    /// Random diagonal quadratics with curvatures uniform in `curvature` and
    /// standard normal linear terms.
    RandomQuadratic {
        dim: usize,
        #[serde(default)]
        mu: f64,
        #[serde(default = "default_curvature")]
        curvature: [f64; 2],
        #[serde(default = "free_set")]
        set: FeasibleSet,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Logistic regression on Gaussian class clouds split over the agents.
    SyntheticLogistic {
        /// Total rows; defaults to the scale preset.
        #[serde(default)]
        rows: Option<usize>,
        features: usize,
        #[serde(default)]
        separability: Separability,
        #[serde(default)]
        mu: f64,
        #[serde(default)]
        lipschitz: LipschitzBound,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Logistic regression on a LIBSVM file split over the agents.
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        mu: f64,
        #[serde(default)]
        lipschitz: LipschitzBound,
    },
}

fn free_set() -> FeasibleSet {
    FeasibleSet::Free
}

fn default_curvature() -> [f64; 2] {
    [0.5, 2.0]
}

/// Rows used for synthetic data when neither the spec nor a preset says.
pub const DEFAULT_SYNTHETIC_ROWS: usize = 2000;

impl ProblemSpec {
    pub fn is_logistic(&self) -> bool {
        matches!(self, ProblemSpec::SyntheticLogistic { .. } | ProblemSpec::Libsvm { .. })
    }

    /// Per-agent objectives for `m` agents. `default_rows` fills in an
    /// unspecified synthetic row count.
    pub fn build(&self, m: usize, seed: u64, default_rows: usize) -> Result<Vec<LocalObjective>> {
        if m == 0 {
            return Err(Error::InvalidArgument("at least one agent is required".into()));
        }
        match self {
            ProblemSpec::Quadratic { agents, mu, set } => {
                if agents.len() != m {
                    return Err(Error::InvalidArgument(format!(
                        "{} quadratic blocks given for {m} agents",
                        agents.len()
                    )));
                }
                agents
                    .iter()
                    .map(|a| quadratic_objective(a.q_diag.clone(), a.b.clone(), *mu, set.clone()))
                    .collect()
            }
            ProblemSpec::RandomQuadratic {
                dim,
                mu,
                curvature,
                set,
                seed: s,
            } => {
                let [lo, hi] = *curvature;
                if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(Error::InvalidArgument(format!("bad curvature range [{lo}, {hi}]")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.unwrap_or(seed));
                (0..m)
                    .map(|_| {
                        let q: Vec<f64> = (0..*dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
                        let b: Vec<f64> = (0..*dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                        quadratic_objective(q, b, *mu, set.clone())
                    })
                    .collect()
            }
            ProblemSpec::SyntheticLogistic {
                rows,
                features,
                separability,
                mu,
                lipschitz,
                seed: s,
            } => {
                let data = synthesize_dataset(rows.unwrap_or(default_rows), *features, *separability, s.unwrap_or(seed))?;
                logistic_agents(&data, m, seed, *mu, *lipschitz)
            }
            ProblemSpec::Libsvm { path, mu, lipschitz } => {
                let data = load_libsvm(path)?;
                logistic_agents(&data, m, seed, *mu, *lipschitz)
            }
        }
    }
}

fn logistic_agents(
    data: &crate::problem::DataShard,
    m: usize,
    seed: u64,
    mu: f64,
    bound: LipschitzBound,
) -> Result<Vec<LocalObjective>> {
    let (shards, manifest) = split_shards(data, m, seed)?;
    log::info!("split {} rows over {m} agents: {:?}", data.len(), manifest.rows_per_agent);
    let objs: Vec<LocalObjective> = shards
        .into_iter()
        .map(|s| logistic_objective(Arc::new(s), mu, bound))
        .collect::<Result<_>>()?;
    let lip = objs.iter().map(LocalObjective::lipschitz).fold(0.0, f64::max);
    log::info!("logistic Lipschitz estimate ({bound:?}): {lip}");
    Ok(objs)
}

/// Sets every agent's `L̃` to `scale` times the largest estimate.
pub fn scale_lipschitz(objs: Vec<LocalObjective>, scale: f64) -> Result<Vec<LocalObjective>> {
    if scale == 1.0 {
        return Ok(objs);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("Lipschitz scale {scale} must be positive")));
    }
    let lip = objs.iter().map(LocalObjective::lipschitz).fold(0.0, f64::max);
    objs.into_iter().map(|o| o.with_lipschitz(lip * scale)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive Gaussian noise with `E‖G − ∇f̃‖² = σ²`.
    #[default]
    Gaussian,
    /// One uniformly sampled local row per draw; `sigma` is a declared bound.
    Subsampling,
}

pub fn build_oracles(objs: &[LocalObjective], noise: NoiseKind, sigma: f64, seed: u64) -> Result<Vec<StochasticOracle>> {
    let model = match noise {
        NoiseKind::Gaussian => NoiseModel::AdditiveGaussian { sigma },
        NoiseKind::Subsampling => NoiseModel::Subsampling { sigma },
    };
    objs.iter()
        .enumerate()
        .map(|(i, o)| StochasticOracle::new(Arc::new(o.clone()), model, seed, i))
        .collect()
}

fn one() -> f64 {
    1.0
}

fn default_n_step() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Pds {
        r: f64,
        /// Multiplier applied to the estimated `L̃`.
        #[serde(default = "one")]
        lipschitz_scale: f64,
        #[serde(default)]
        label: Option<String>,
    },
    Spds {
        r: f64,
        c: f64,
        sigma: f64,
        #[serde(default)]
        noise: NoiseKind,
        #[serde(default = "one")]
        lipschitz_scale: f64,
        /// Planned-`N` increment when searching for a target (plans only).
        #[serde(default = "default_n_step")]
        n_step: usize,
        #[serde(default)]
        label: Option<String>,
    },
    Baseline {
        /// Defaults to `L̃ + ‖𝒜‖`.
        #[serde(default)]
        eta: Option<f64>,
        /// Defaults to `‖𝒜‖`.
        #[serde(default)]
        q: Option<f64>,
        #[serde(default = "one")]
        lipschitz_scale: f64,
        #[serde(default)]
        label: Option<String>,
    },
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        let (given, kind) = match self {
            AlgorithmSpec::Pds { label, .. } => (label, "pds"),
            AlgorithmSpec::Spds { label, .. } => (label, "spds"),
            AlgorithmSpec::Baseline { label, .. } => (label, "baseline"),
        };
        given.clone().unwrap_or_else(|| kind.to_string())
    }

    pub fn lipschitz_scale(&self) -> f64 {
        match self {
            AlgorithmSpec::Pds { lipschitz_scale, .. }
            | AlgorithmSpec::Spds { lipschitz_scale, .. }
            | AlgorithmSpec::Baseline { lipschitz_scale, .. } => *lipschitz_scale,
        }
    }
}

/// Initial point rule. Every block is projected onto its feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Rule {
    #[default]
    Zeros,
    Constant {
        value: f64,
    },
    /// One block (broadcast to all agents) or the full stacked vector.
    Explicit {
        values: Vec<f64>,
    },
}

impl X0Rule {
    pub fn build(&self, objs: &[LocalObjective]) -> Result<Vec<f64>> {
        let m = objs.len();
        let d = objs.first().map_or(0, LocalObjective::dim);
        let mut x = match self {
            X0Rule::Zeros => vec![0.0; m * d],
            X0Rule::Constant { value } => vec![*value; m * d],
            X0Rule::Explicit { values } if values.len() == d => values.repeat(m),
            X0Rule::Explicit { values } if values.len() == m * d => values.clone(),
            X0Rule::Explicit { values } => {
                return Err(Error::DimensionMismatch {
                    context: "explicit x0 (one block or the stacked vector)",
                    expected: m * d,
                    got: values.len(),
                })
            }
        };
        if !crate::linalg::all_finite(&x) {
            return Err(Error::NonFinite("x0"));
        }
        for (o, xi) in objs.iter().zip(x.chunks_exact_mut(d.max(1))) {
            o.set().project(xi);
        }
        Ok(x)
    }
}

/// One solver run (`pds run`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub agents: usize,
    pub graph: GraphSpec,
    #[serde(default)]
    pub operator: OperatorChoice,
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    /// Outer iterations (PDS, SPDS) or inner iterations (baseline).
    pub n: usize,
    #[serde(default)]
    pub x0: X0Rule,
    #[serde(default)]
    pub view: View,
    /// Where the reported loss is evaluated.
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
    /// SPDS replications with seeds `seed + r`.
    #[serde(default = "one_usize")]
    pub replications: usize,
    #[serde(default)]
    pub round_budget: Option<u64>,
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub target_feasibility: Option<f64>,
    #[serde(default)]
    pub batch_cap: Option<u64>,
}

fn one_usize() -> usize {
    1
}

impl RunConfig {
    pub fn options(&self) -> RunOptions {
        RunOptions {
            view: self.view,
            loss: self.loss,
            round_budget: self.round_budget,
            target_loss: self.target_loss,
            target_feasibility: self.target_feasibility,
            batch_cap: self.batch_cap,
            ..RunOptions::default()
        }
    }
}

/// `validate-schedule` input: schedule inputs plus the horizon to check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCheckConfig {
    pub schedule: crate::schedule::ScheduleInputs,
    /// Horizon; defaults to the stochastic `n`.
    #[serde(default)]
    pub horizon: Option<usize>,
}

/// `graph-info` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphInfoConfig {
    pub agents: usize,
    pub graph: GraphSpec,
    #[serde(default)]
    pub operator: OperatorChoice,
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

/// `solve-constrained` input: `min Σ f_i s.t. A x = b` with dense `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstrainedConfig {
    pub objective: ProblemSpec,
    /// Number of stacked objective blocks.
    #[serde(default = "one_usize")]
    pub blocks: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub r: f64,
    pub n: usize,
    #[serde(default)]
    pub x0: X0Rule,
    #[serde(default)]
    pub f_star: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"kind":"named","family":"path","extra":1}"#;
        assert!(parse_json::<GraphSpec>(bad, Path::new("g.json")).is_err());
        let ok = r#"{"kind":"named","family":"path"}"#;
        assert_eq!(
            parse_json::<GraphSpec>(ok, Path::new("g.json")).unwrap(),
            GraphSpec::Named {
                family: GraphFamily::Path
            }
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_json::<GraphSpec>("{\n  \"kind\": ,\n}", Path::new("bad.json")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("bad.json:2:"), "{msg}");
        assert!(msg.contains("column"), "{msg}");
        assert!(e.is_config_error());
    }

    #[test]
    fn x0_rules() {
        let objs = ProblemSpec::RandomQuadratic {
            dim: 2,
            mu: 0.0,
            curvature: [1.0, 1.0],
            set: FeasibleSet::uniform_box(2, 1.0, 2.0),
            seed: Some(1),
        }
        .build(3, 0, 0)
        .unwrap();
        assert_eq!(X0Rule::Zeros.build(&objs).unwrap(), vec![1.0; 6]);
        assert_eq!(
            X0Rule::Explicit { values: vec![1.5, 3.0] }.build(&objs).unwrap(),
            [1.5, 2.0].repeat(3)
        );
        assert!(X0Rule::Explicit { values: vec![1.0; 4] }.build(&objs).is_err());
    }

    #[test]
    fn lipschitz_scaling() {
        let objs = ProblemSpec::RandomQuadratic {
            dim: 2,
            mu: 0.0,
            curvature: [1.0, 3.0],
            set: FeasibleSet::Free,
            seed: Some(2),
        }
        .build(2, 0, 0)
        .unwrap();
        let top = objs.iter().map(LocalObjective::lipschitz).fold(0.0, f64::max);
        let scaled = scale_lipschitz(objs, 0.5).unwrap();
        assert!(scaled.iter().all(|o| o.lipschitz() == 0.5 * top));
    }

    #[test]
    fn run_config_defaults() {
        let text = r#"{
            "agents": 4,
            "graph": {"kind": "erdos_renyi", "edge_prob": 0.5},
            "problem": {"kind": "random_quadratic", "dim": 3},
            "algorithm": {"kind": "pds", "r": 1.0},
            "n": 20
        }"#;
        let cfg: RunConfig = parse_json(text, Path::new("run.json")).unwrap();
        assert_eq!(cfg.operator, OperatorChoice::Laplacian);
        assert_eq!(cfg.view, View::Network);
        assert_eq!(cfg.replications, 1);
        assert_eq!(cfg.x0, X0Rule::Zeros);
    }
}
