//! Undirected communication graphs and the consensus operators they induce.
//!
//! Nodes are 0-indexed internally; the edge-list text format is 1-indexed.
//! Each node's neighbor list contains the node itself, so the Laplacian
//! diagonal is `|N_i| - 1`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{operator_norm, LinearOperator, NORM_TOL};

/// Attempts `erdos_renyi` makes before giving up on connectivity.
pub const ER_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    m: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    Path,
    Star,
    Complete,
    Cycle,
}

impl CommGraph {
    /// Builds a graph from 0-indexed edges. Duplicates and orientation are
    /// normalized away; self-loops in the input are rejected.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let g = Self::build_unchecked(m, edges)?;
        let reachable = g.reachable_from_first();
        if reachable != m {
            return Err(Error::Disconnected {
                nodes: m,
                reachable,
            });
        }
        Ok(g)
    }

    fn build_unchecked(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut list = Vec::new();
        for (a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) references a node outside 1..={m}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("explicit self-loop at node {}", a + 1)));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        list.dedup();
        let mut neighbors: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
        for &(a, b) in &list {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(CommGraph {
            m,
            edges: list,
            neighbors,
        })
    }

    /// BFS from node 1; returns the number of reached nodes.
    fn reachable_from_first(&self) -> usize {
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, sorted, 0-indexed.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `N_i`, sorted, including `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Number of distinct other nodes adjacent to `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len() - 1
    }

    pub fn max_degree(&self) -> usize {
        (0..self.m).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// True if `(i, j)` is an edge or `i == j`.
    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        i < self.m && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Laplacian entry `L[i][j]`.
    pub fn laplacian_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.degree(i) as f64
        } else if self.is_adjacent(i, j) {
            -1.0
        } else {
            0.0
        }
    }

    /// Serializes to the edge-list format: `m <count>` then `i j` per line,
    /// 1-indexed.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("m {}\n", self.m);
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{} {}", a + 1, b + 1);
        }
        s
    }

    pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty edge list".into()))?;
        let mut head = header.split_whitespace();
        let m = match (head.next(), head.next(), head.next()) {
            (Some("m"), Some(count), None) => count
                .parse::<usize>()
                .map_err(|e| parse_err(hline, format!("bad node count: {e}")))?,
            _ => return Err(parse_err(hline, format!("expected header `m <count>`, got `{header}`"))),
        };
        let mut edges = Vec::new();
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let pair = (parts.next(), parts.next(), parts.next());
            let (a, b) = match pair {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(parse_err(n, format!("expected `i j`, got `{line}`"))),
            };
            let parse_node = |s: &str| -> Result<usize> {
                let v: usize = s.parse().map_err(|e| parse_err(n, format!("bad node `{s}`: {e}")))?;
                if v == 0 || v > m {
                    return Err(parse_err(n, format!("node {v} outside 1..={m}")));
                }
                Ok(v - 1)
            };
            edges.push((parse_node(a)?, parse_node(b)?));
        }
        Self::from_edges(m, edges)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, path)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

/// Erdős–Rényi `G(m, p)` conditioned on connectivity.
///
/// Attempt `a` draws every pair from ChaCha stream `a` of the generator
/// seeded with `seed`, so the result is a pure function of the arguments.
pub fn erdos_renyi(m: usize, edge_prob: f64, seed: u64) -> Result<CommGraph> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("erdos_renyi needs m >= 2, got {m}")));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "edge probability must lie in (0, 1], got {edge_prob}"
        )));
    }
    for attempt in 0..ER_RETRY_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.random::<f64>() < edge_prob {
                    edges.push((i, j));
                }
            }
        }
        let g = CommGraph::build_unchecked(m, edges)?;
        if g.reachable_from_first() == m {
            return Ok(g);
        }
    }
    Err(Error::RandomGraphExhausted {
        m,
        edge_prob,
        seed,
        attempts: ER_RETRY_BUDGET,
    })
}

pub fn named_graph(kind: GraphFamily, m: usize) -> Result<CommGraph> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("named graphs need m >= 2, got {m}")));
    }
    let edges: Vec<(usize, usize)> = match kind {
        GraphFamily::Path => (0..m - 1).map(|i| (i, i + 1)).collect(),
        GraphFamily::Star => (1..m).map(|j| (0, j)).collect(),
        GraphFamily::Complete => (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .collect(),
        GraphFamily::Cycle => (0..m).map(|i| (i, (i + 1) % m)).collect(),
    };
    CommGraph::from_edges(m, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorForm {
    Laplacian,
    Incidence,
}

/// Edge orientation for the incidence form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// The lower-indexed endpoint carries `+1`.
    LowerPositive,
    /// Each edge's sign is flipped by a fair coin drawn from this seed.
    Random(u64),
}

/// The constraint operator `A` with `Ax = 0` iff all agent blocks agree:
/// `L ⊗ I_d` (Laplacian form) or `Bᵀ ⊗ I_d` (incidence form).
///
/// Matrix-free: applications are neighbor sums over `d`-dimensional blocks.
#[derive(Debug, Clone)]
pub struct ConsensusOperator {
    form: OperatorForm,
    graph: Arc<CommGraph>,
    dim: usize,
    /// `+1` when the lower endpoint of edge `e` is the positive end.
    edge_signs: Vec<f64>,
    norm: f64,
}

pub fn laplacian_operator(g: Arc<CommGraph>, d: usize) -> Result<ConsensusOperator> {
    ConsensusOperator::build(OperatorForm::Laplacian, g, d, Orientation::LowerPositive)
}

pub fn incidence_operator(g: Arc<CommGraph>, d: usize, orientation: Orientation) -> Result<ConsensusOperator> {
    ConsensusOperator::build(OperatorForm::Incidence, g, d, orientation)
}

impl ConsensusOperator {
    fn build(form: OperatorForm, graph: Arc<CommGraph>, dim: usize, orientation: Orientation) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("agent dimension must be positive".into()));
        }
        let edge_signs = match orientation {
            Orientation::LowerPositive => vec![1.0; graph.edge_count()],
            Orientation::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..graph.edge_count())
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            }
        };
        let mut op = ConsensusOperator {
            form,
            graph,
            dim,
            edge_signs,
            norm: 0.0,
        };
        op.norm = match operator_norm(&op, NORM_TOL) {
            Ok(n) => n,
            Err(Error::NormNotConverged { estimate, iterations }) => {
                log::warn!("consensus operator norm unconverged after {iterations} Lanczos steps; using {estimate}");
                estimate
            }
            Err(e) => return Err(e),
        };
        Ok(op)
    }

    pub fn form(&self) -> OperatorForm {
        self.form
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<CommGraph> {
        Arc::clone(&self.graph)
    }

    pub fn agent_dim(&self) -> usize {
        self.dim
    }

    pub fn agents(&self) -> usize {
        self.graph.node_count()
    }

    /// Dense materialization, row-major. Test oracles only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.cols();
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            cols.push(self.apply(&e));
            e[j] = 0.0;
        }
        (0..self.rows())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }
}

/// `Σ_{j ∈ N_i} L[i][j] u_j` for one agent, with `u_j` supplied by `block`,
/// summed in ascending `j`. Both the network view and the agent view go
/// through this routine, which keeps their trajectories bit-identical.
pub fn laplacian_row_from<'a>(graph: &CommGraph, i: usize, block: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
    let deg = graph.degree(i) as f64;
    for (o, v) in out.iter_mut().zip(block(i)) {
        *o = deg * v;
    }
    for &j in graph.neighbors(i) {
        if j != i {
            for (o, v) in out.iter_mut().zip(block(j)) {
                *o -= v;
            }
        }
    }
}

impl LinearOperator for ConsensusOperator {
    fn rows(&self) -> usize {
        match self.form {
            OperatorForm::Laplacian => self.graph.node_count() * self.dim,
            OperatorForm::Incidence => self.graph.edge_count() * self.dim,
        }
    }

    fn cols(&self) -> usize {
        self.graph.node_count() * self.dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.form {
            OperatorForm::Laplacian => {
                for (i, row) in out.chunks_exact_mut(d).enumerate() {
                    laplacian_row_from(&self.graph, i, |j| &x[j * d..(j + 1) * d], row);
                }
            }
            OperatorForm::Incidence => {
                for ((&(a, b), s), row) in self.graph.edges().iter().zip(&self.edge_signs).zip(out.chunks_exact_mut(d)) {
                    for ((o, xa), xb) in row.iter_mut().zip(&x[a * d..(a + 1) * d]).zip(&x[b * d..(b + 1) * d]) {
                        *o = s * (xa - xb);
                    }
                }
            }
        }
    }

    fn apply_adjoint_into(&self, z: &[f64], out: &mut [f64]) {
        match self.form {
            OperatorForm::Laplacian => self.apply_into(z, out),
            OperatorForm::Incidence => {
                let d = self.dim;
                out.fill(0.0);
                for (e, (&(a, b), s)) in self.graph.edges().iter().zip(&self.edge_signs).enumerate() {
                    let ze = &z[e * d..(e + 1) * d];
                    for k in 0..d {
                        out[a * d + k] += s * ze[k];
                        out[b * d + k] -= s * ze[k];
                    }
                }
            }
        }
    }

    fn norm(&self) -> f64 {
        self.norm
    }
}
