//! Per-agent objectives `f_i = f̃_i + μ·½‖x‖²` over a simple feasible set,
//! with gradient, stochastic-gradient and composite-prox oracles.

mod data;
mod oracle;
mod reference;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use data::{load_libsvm, parse_libsvm, split_shards, write_libsvm, DataShard, ShardManifest, SparseRow};
pub use oracle::{stoch_grad, NoiseModel, StochasticOracle};
pub use reference::{centralized_solve, CentralSolution};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, operator_norm};

/// Closed convex set `X^{(i)}` with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeasibleSet {
    Free,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn uniform_box(d: usize, lo: f64, hi: f64) -> Self {
        FeasibleSet::Box {
            lo: vec![lo; d],
            hi: vec![hi; d],
        }
    }

    pub(crate) fn check(&self, d: usize) -> Result<()> {
        match self {
            FeasibleSet::Free => Ok(()),
            FeasibleSet::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "box bounds",
                        expected: d,
                        got: lo.len().max(hi.len()),
                    });
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidArgument("box has lo > hi".into()));
                }
                Ok(())
            }
            FeasibleSet::Ball { center, radius } => {
                if center.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "ball center",
                        expected: d,
                        got: center.len(),
                    });
                }
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidArgument(format!("ball radius {radius} is negative")));
                }
                Ok(())
            }
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        match self {
            FeasibleSet::Free => {}
            FeasibleSet::Box { lo, hi } => {
                for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
                    *v = v.clamp(*l, *h);
                }
            }
            FeasibleSet::Ball { center, radius } => {
                let dist = crate::linalg::dist2(x, center);
                if dist > *radius {
                    let s = radius / dist;
                    for (v, c) in x.iter_mut().zip(center) {
                        *v = c + s * (*v - c);
                    }
                }
            }
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut p = x.to_vec();
        self.project(&mut p);
        crate::linalg::dist2(x, &p)
    }
}

/// How the Lipschitz constant of the logistic loss is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzBound {
    /// `¼ Σ_j ‖a_j‖²`, an upper bound on `¼ λ_max(AᵀA)`.
    #[default]
    Trace,
    /// `¼ λ_max(AᵀA)` via the Krylov norm estimator.
    Spectral,
}

/// The smooth part `f̃_i`.
#[derive(Debug, Clone)]
pub enum Smooth {
    /// `½ xᵀ diag(q) x + bᵀx + offset`
    Quadratic { q_diag: Vec<f64>, b: Vec<f64>, offset: f64 },
    /// `Σ_j log(1 + exp(-y_j ⟨w, a_j⟩))` (sum, not mean, over local rows)
    Logistic(Arc<DataShard>),
}

#[derive(Debug, Clone)]
pub struct LocalObjective {
    smooth: Smooth,
    mu: f64,
    set: FeasibleSet,
    lipschitz: f64,
    dim: usize,
}

/// Exact gradient/sample accounting for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounters {
    pub gradients: u64,
    pub samples: u64,
}

pub fn quadratic_objective(q_diag: Vec<f64>, b: Vec<f64>, mu: f64, set: FeasibleSet) -> Result<LocalObjective> {
    if q_diag.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "quadratic b",
            expected: q_diag.len(),
            got: b.len(),
        });
    }
    if q_diag.is_empty() {
        return Err(Error::InvalidArgument("objective dimension must be positive".into()));
    }
    if let Some(q) = q_diag.iter().find(|q| !(**q >= 0.0)) {
        return Err(Error::InvalidArgument(format!("quadratic weight {q} must be non-negative")));
    }
    if !all_finite(&b) {
        return Err(Error::NonFinite("quadratic linear term"));
    }
    check_mu(mu)?;
    let d = q_diag.len();
    set.check(d)?;
    let lipschitz = q_diag.iter().cloned().fold(0.0, f64::max);
    Ok(LocalObjective {
        smooth: Smooth::Quadratic { q_diag, b, offset: 0.0 },
        mu,
        set,
        lipschitz,
        dim: d,
    })
}

pub fn logistic_objective(shard: Arc<DataShard>, mu: f64, bound: LipschitzBound) -> Result<LocalObjective> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("logistic objective needs a non-empty shard".into()));
    }
    if let Some((row, y)) = shard.labels().iter().enumerate().find(|(_, y)| **y != 1.0 && **y != -1.0) {
        return Err(Error::InvalidArgument(format!(
            "label {y} at row {} is not in {{-1, +1}}",
            row + 1
        )));
    }
    check_mu(mu)?;
    let lipschitz = match bound {
        LipschitzBound::Trace => 0.25 * shard.rows().iter().map(SparseRow::squared_norm).sum::<f64>(),
        LipschitzBound::Spectral => {
            let n = match operator_norm(shard.as_ref(), 1e-10) {
                Ok(n) => n,
                Err(Error::NormNotConverged { estimate, .. }) => estimate,
                Err(e) => return Err(e),
            };
            0.25 * n * n
        }
    };
    Ok(LocalObjective {
        dim: shard.dim(),
        smooth: Smooth::Logistic(shard),
        mu,
        set: FeasibleSet::Free,
        lipschitz,
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if mu >= 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("strong convexity weight {mu} must be >= 0")))
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn smooth(&self) -> &Smooth {
        &self.smooth
    }

    /// Replaces the feasible set.
    pub fn with_set(mut self, set: FeasibleSet) -> Result<Self> {
        set.check(self.dim)?;
        self.set = set;
        Ok(self)
    }

    /// Adds a constant to a quadratic's value (no effect on gradients).
    pub fn with_offset(mut self, c: f64) -> Result<Self> {
        match &mut self.smooth {
            Smooth::Quadratic { offset, .. } => {
                *offset = c;
                Ok(self)
            }
            Smooth::Logistic(_) => Err(Error::InvalidArgument("offsets apply to quadratics only".into())),
        }
    }

    /// Overrides the Lipschitz estimate (for tuned or scaled constants).
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidArgument(format!("Lipschitz constant {lipschitz} must be positive")));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn smooth_value(&self, x: &[f64]) -> f64 {
        match &self.smooth {
            Smooth::Quadratic { q_diag, b, offset } => {
                offset
                    + q_diag
                        .iter()
                        .zip(b)
                        .zip(x)
                        .map(|((q, b), x)| 0.5 * q * x * x + b * x)
                        .sum::<f64>()
            }
            Smooth::Logistic(shard) => shard
                .rows()
                .iter()
                .zip(shard.labels())
                .map(|(row, y)| softplus(-y * row.dot(x)))
                .sum(),
        }
    }

    /// `f_i(x) = f̃_i(x) + μ·½‖x‖²`
    pub fn value(&self, x: &[f64]) -> f64 {
        self.smooth_value(x) + 0.5 * self.mu * dot(x, x)
    }

    /// Exact `∇f̃_i(x)` without touching any counter.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.smooth {
            Smooth::Quadratic { q_diag, b, .. } => q_diag.iter().zip(b).zip(x).map(|((q, b), x)| q * x + b).collect(),
            Smooth::Logistic(shard) => {
                let mut g = vec![0.0; self.dim];
                for (row, y) in shard.rows().iter().zip(shard.labels()) {
                    let w = -y * sigmoid(-y * row.dot(x));
                    row.axpy_into(w, &mut g);
                }
                g
            }
        }
    }

    /// Convex conjugate `f̃_i^*(y)`; closed form for quadratics only.
    pub fn smooth_conjugate(&self, y: &[f64]) -> Result<f64> {
        match &self.smooth {
            Smooth::Quadratic { q_diag, b, offset } => {
                let mut total = -offset;
                for (j, ((q, b), y)) in q_diag.iter().zip(b).zip(y).enumerate() {
                    let r = y - b;
                    if *q > 0.0 {
                        total += 0.5 * r * r / q;
                    } else if r.abs() > 1e-12 * (1.0 + b.abs()) {
                        return Err(Error::ConjugateDomain(format!(
                            "coordinate {j} has zero curvature but y-b = {r}"
                        )));
                    }
                }
                Ok(total)
            }
            Smooth::Logistic(_) => Err(Error::ConjugateDomain(
                "the logistic conjugate is not evaluated in closed form".into(),
            )),
        }
    }
}

/// `∇f̃_i(x)`, counted.
pub fn grad(obj: &LocalObjective, x: &[f64], counters: &mut EvalCounters) -> Result<Vec<f64>> {
    if x.len() != obj.dim {
        return Err(Error::DimensionMismatch {
            context: "gradient input",
            expected: obj.dim,
            got: x.len(),
        });
    }
    if !all_finite(x) {
        return Err(Error::NonFinite("gradient input"));
    }
    counters.gradients += 1;
    Ok(obj.gradient(x))
}

/// Exact minimizer over `X^{(i)}` of
/// `μ·½‖x‖² + ⟨g, x⟩ + η·½‖x − anchor_t‖² + p·½‖x − anchor_k‖²`,
/// i.e. the projection of `(η·anchor_t + p·anchor_k − g)/(μ + η + p)`.
pub fn prox_step(obj: &LocalObjective, g: &[f64], anchor_t: &[f64], anchor_k: &[f64], eta: f64, p: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; obj.dim];
    prox_step_into(obj, g, anchor_t, anchor_k, eta, p, &mut out)?;
    Ok(out)
}

pub(crate) fn prox_step_into(
    obj: &LocalObjective,
    g: &[f64],
    anchor_t: &[f64],
    anchor_k: &[f64],
    eta: f64,
    p: f64,
    out: &mut [f64],
) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("prox step needs eta > 0, got {eta}")));
    }
    if !(p >= 0.0) {
        return Err(Error::InvalidArgument(format!("prox step needs p >= 0, got {p}")));
    }
    let denom = obj.mu + eta + p;
    for (((o, g), at), ak) in out.iter_mut().zip(g).zip(anchor_t).zip(anchor_k) {
        *o = (eta * at + p * ak - g) / denom;
    }
    obj.set.project(out);
    Ok(())
}

/// Network-wide constants shared by all agents: the largest `L̃`, the common
/// `μ` and the agent dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub lipschitz: f64,
    pub mu: f64,
    pub dim: usize,
}

pub fn problem_constants(objs: &[LocalObjective]) -> Result<ProblemConstants> {
    let first = objs
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one objective is required".into()))?;
    let mut lipschitz = 0.0f64;
    for o in objs {
        if o.dim != first.dim {
            return Err(Error::DimensionMismatch {
                context: "agent objective dimension",
                expected: first.dim,
                got: o.dim,
            });
        }
        if o.mu != first.mu {
            return Err(Error::InvalidArgument(format!(
                "strong convexity weights differ across agents ({} vs {})",
                first.mu, o.mu
            )));
        }
        lipschitz = lipschitz.max(o.lipschitz);
    }
    Ok(ProblemConstants {
        lipschitz,
        mu: first.mu,
        dim: first.dim,
    })
}

/// `Σ_i f_i(x^{(i)})` for a stacked vector.
pub fn total_value(objs: &[LocalObjective], x: &[f64]) -> f64 {
    let d = objs.first().map_or(0, |o| o.dim);
    objs.iter()
        .zip(x.chunks_exact(d.max(1)))
        .map(|(o, xi)| o.value(xi))
        .sum()
}

/// `Σ_i f_i(x̄)` at the consensus average `x̄ = (1/m) Σ_i x^{(i)}`.
pub fn consensus_value(objs: &[LocalObjective], x: &[f64]) -> f64 {
    let avg = block_average(x, objs.len());
    objs.iter().map(|o| o.value(&avg)).sum()
}

pub fn block_average(x: &[f64], m: usize) -> Vec<f64> {
    let d = x.len() / m.max(1);
    let mut avg = vec![0.0; d];
    for block in x.chunks_exact(d.max(1)) {
        crate::linalg::axpy(1.0, block, &mut avg);
    }
    crate::linalg::scale(1.0 / m as f64, &mut avg);
    avg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(q: &[f64], b: &[f64]) -> LocalObjective {
        quadratic_objective(q.to_vec(), b.to_vec(), 0.0, FeasibleSet::Free).unwrap()
    }

    #[test]
    fn identity_quadratic() {
        let o = quad(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(o.gradient(&[0.3, -2.0]), vec![0.3, -2.0]);
        assert_eq!(o.lipschitz(), 1.0);
    }

    #[test]
    fn quadratic_gradient_formula() {
        let o = quad(&[2.0, 0.0], &[1.0, -1.0]);
        assert_eq!(o.gradient(&[1.0, 1.0]), vec![3.0, -1.0]);
    }

    #[test]
    fn negative_curvature_rejected() {
        assert!(quadratic_objective(vec![1.0, -0.5], vec![0.0, 0.0], 0.0, FeasibleSet::Free).is_err());
        assert!(quadratic_objective(vec![1.0], vec![0.0, 0.0], 0.0, FeasibleSet::Free).is_err());
        assert!(quadratic_objective(vec![1.0], vec![0.0], -1.0, FeasibleSet::Free).is_err());
    }

    #[test]
    fn grad_counts_and_rejects_nonfinite() {
        let o = quad(&[1.0], &[0.0]);
        let mut c = EvalCounters::default();
        for _ in 0..3 {
            grad(&o, &[1.0], &mut c).unwrap();
        }
        assert_eq!(c.gradients, 3);
        assert!(matches!(grad(&o, &[f64::NAN], &mut c), Err(Error::NonFinite(_))));
        assert_eq!(c.gradients, 3);
    }

    #[test]
    fn prox_average_of_anchors() {
        let o = quad(&[0.0, 0.0], &[0.0, 0.0]);
        let x = prox_step(&o, &[0.0, 0.0], &[1.0, 1.0], &[3.0, 3.0], 1.0, 1.0).unwrap();
        assert_eq!(x, vec![2.0, 2.0]);
    }

    #[test]
    fn prox_clips_to_box() {
        let o = quadratic_objective(vec![0.0, 0.0], vec![0.0, 0.0], 1.0, FeasibleSet::uniform_box(2, 0.0, 1.0)).unwrap();
        let x = prox_step(&o, &[-4.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 2.0, 0.0).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn prox_rejects_bad_eta() {
        let o = quad(&[1.0], &[0.0]);
        assert!(prox_step(&o, &[0.0], &[0.0], &[0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn ball_projection() {
        let s = FeasibleSet::Ball {
            center: vec![1.0, 0.0],
            radius: 1.0,
        };
        let mut x = vec![4.0, 4.0];
        s.project(&mut x);
        assert!((crate::linalg::dist2(&x, &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(s.distance(&x) < 1e-12);
    }

    #[test]
    fn logistic_single_row() {
        let shard = DataShard::new(vec![SparseRow::new(vec![1], vec![1.0]).unwrap()], vec![1.0], 2).unwrap();
        let o = logistic_objective(Arc::new(shard), 0.0, LipschitzBound::Trace).unwrap();
        assert_eq!(o.gradient(&[0.0, 0.0]), vec![-0.5, 0.0]);
        assert_eq!(o.lipschitz(), 0.25);
    }

    #[test]
    fn logistic_symmetric_rows_cancel() {
        let rows = vec![
            SparseRow::new(vec![1], vec![1.0]).unwrap(),
            SparseRow::new(vec![1], vec![1.0]).unwrap(),
        ];
        let shard = DataShard::new(rows, vec![1.0, -1.0], 1).unwrap();
        let o = logistic_objective(Arc::new(shard), 0.0, LipschitzBound::Trace).unwrap();
        assert_eq!(o.gradient(&[0.0]), vec![0.0]);
    }

    #[test]
    fn logistic_rejects_bad_labels() {
        let shard = DataShard::new(vec![SparseRow::new(vec![1], vec![1.0]).unwrap()], vec![0.0], 1).unwrap();
        assert!(logistic_objective(Arc::new(shard), 0.0, LipschitzBound::Trace).is_err());
    }

    #[test]
    fn spectral_bound_is_tighter() {
        let rows = vec![
            SparseRow::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
            SparseRow::new(vec![1, 2], vec![1.0, -1.0]).unwrap(),
        ];
        let shard = Arc::new(DataShard::new(rows, vec![1.0, -1.0], 2).unwrap());
        let trace = logistic_objective(shard.clone(), 0.0, LipschitzBound::Trace).unwrap();
        let spec = logistic_objective(shard, 0.0, LipschitzBound::Spectral).unwrap();
        // AᵀA = 2I: trace bound 1, spectral 0.5
        assert!((trace.lipschitz() - 1.0).abs() < 1e-12);
        assert!((spec.lipschitz() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn conjugate_of_quadratic() {
        let o = quad(&[2.0, 0.0], &[1.0, 3.0]);
        let v = o.smooth_conjugate(&[5.0, 3.0]).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert!(o.smooth_conjugate(&[5.0, 0.0]).is_err());
    }

    #[test]
    fn constants_take_max_lipschitz() {
        let objs = vec![quad(&[1.0], &[0.0]), quad(&[3.0], &[1.0])];
        let c = problem_constants(&objs).unwrap();
        assert_eq!(c.lipschitz, 3.0);
        let mixed = vec![
            quad(&[1.0], &[0.0]),
            quadratic_objective(vec![1.0], vec![0.0], 0.5, FeasibleSet::Free).unwrap(),
        ];
        assert!(problem_constants(&mixed).is_err());
    }
}
