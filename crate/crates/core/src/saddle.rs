//! Sliding for bilinearly coupled saddle-point problems
//! `min_x max_{z∈𝒵} f(x) + ⟨𝒜x, z⟩ − h(z)`, the gap function, and the
//! linearly constrained special case `min f(x) s.t. 𝒜x = b`.
//!
//! The primal side is a stack of [`LocalObjective`] blocks (one block for a
//! plain single-objective problem); `𝒜` is any [`LinearOperator`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist2, dot, LinearOperator};
use crate::pds::{consensus_dual, run_engine, EngineInput, Gradients, RunMetrics, RunOptions, SolverState, View};
use crate::problem::{problem_constants, FeasibleSet, LocalObjective};
use crate::schedule::ParamSchedule;

/// The dual function `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualFunction {
    /// `h = 0`
    Zero,
    /// `h(z) = ⟨b, z⟩`
    Linear { b: Vec<f64> },
    /// `h(z) = ½‖z‖²`
    Quadratic,
}

#[derive(Clone)]
pub struct SaddleProblem {
    objs: Vec<LocalObjective>,
    op: Arc<dyn LinearOperator>,
    h: DualFunction,
    dual_set: FeasibleSet,
}

impl std::fmt::Debug for SaddleProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaddleProblem")
            .field("agents", &self.objs.len())
            .field("rows", &self.op.rows())
            .field("cols", &self.op.cols())
            .field("h", &self.h)
            .field("dual_set", &self.dual_set)
            .finish()
    }
}

/// A primal-dual triple `w = (x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl SaddleProblem {
    pub fn new(
        objs: Vec<LocalObjective>,
        op: Arc<dyn LinearOperator>,
        h: DualFunction,
        dual_set: FeasibleSet,
    ) -> Result<Self> {
        let c = problem_constants(&objs)?;
        let n = objs.len() * c.dim;
        if op.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "coupling operator columns",
                expected: n,
                got: op.cols(),
            });
        }
        if let DualFunction::Linear { b } = &h {
            if b.len() != op.rows() {
                return Err(Error::DimensionMismatch {
                    context: "dual linear term",
                    expected: op.rows(),
                    got: b.len(),
                });
            }
            if !all_finite(b) {
                return Err(Error::NonFinite("dual linear term"));
            }
        }
        dual_set.check(op.rows())?;
        Ok(SaddleProblem { objs, op, h, dual_set })
    }

    pub fn objectives(&self) -> &[LocalObjective] {
        &self.objs
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        self.op.as_ref()
    }

    pub fn dual_function(&self) -> &DualFunction {
        &self.h
    }

    pub fn dual_set(&self) -> &FeasibleSet {
        &self.dual_set
    }

    pub fn primal_dim(&self) -> usize {
        self.op.cols()
    }

    pub fn dual_dim(&self) -> usize {
        self.op.rows()
    }

    fn block_dim(&self) -> usize {
        self.objs[0].dim()
    }

    /// `h(z)`; errors outside `𝒵`.
    pub fn h_value(&self, z: &[f64]) -> Result<f64> {
        if self.dual_set.distance(z) > 1e-12 {
            return Err(Error::ConjugateDomain("dual probe lies outside the dual set".into()));
        }
        Ok(match &self.h {
            DualFunction::Zero => 0.0,
            DualFunction::Linear { b } => dot(b, z),
            DualFunction::Quadratic => 0.5 * dot(z, z),
        })
    }

    /// `Σ_i f̃_i^*(y^{(i)})`
    pub fn conjugate_value(&self, y: &[f64]) -> Result<f64> {
        let d = self.block_dim();
        self.objs.iter().zip(y.chunks_exact(d)).map(|(o, yi)| o.smooth_conjugate(yi)).sum()
    }

    /// `Σ_i f_i(x^{(i)})`
    pub fn primal_value(&self, x: &[f64]) -> f64 {
        let d = self.block_dim();
        self.objs.iter().zip(x.chunks_exact(d)).map(|(o, xi)| o.value(xi)).sum()
    }

    /// Stacked `∇f̃(x)`.
    pub fn smooth_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.block_dim();
        self.objs.iter().zip(x.chunks_exact(d)).flat_map(|(o, xi)| o.gradient(xi)).collect()
    }

    /// `L(x, y, z) = μν(x) + ⟨x, y + 𝒜ᵀz⟩ − f̃*(y) − h(z)`
    pub fn lagrangian(&self, w: &SaddlePoint) -> Result<f64> {
        self.check_point(w)?;
        let mu = self.objs[0].mu();
        let coupling = dot(&w.x, &w.y) + dot(&w.x, &self.op.apply_adjoint(&w.z));
        Ok(0.5 * mu * dot(&w.x, &w.x) + coupling - self.conjugate_value(&w.y)? - self.h_value(&w.z)?)
    }

    fn check_point(&self, w: &SaddlePoint) -> Result<()> {
        for (context, v, n) in [
            ("saddle x", &w.x, self.primal_dim()),
            ("saddle y", &w.y, self.primal_dim()),
            ("saddle z", &w.z, self.dual_dim()),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// Dual step `argmin_{z∈𝒵} h(z) − ⟨g, z⟩ + q·½‖z − z_prev‖²`, in place.
    fn dual_step(&self, z: &mut [f64], g: &[f64], q: f64) {
        match &self.h {
            DualFunction::Zero => consensus_dual(z, g, q),
            DualFunction::Linear { b } => {
                let inv_q = 1.0 / q;
                for ((zi, gi), bi) in z.iter_mut().zip(g).zip(b) {
                    *zi += inv_q * (gi - bi);
                }
            }
            DualFunction::Quadratic => {
                for (zi, gi) in z.iter_mut().zip(g) {
                    *zi = (gi + q * *zi) / (1.0 + q);
                }
            }
        }
        self.dual_set.project(z);
    }
}

#[derive(Debug, Clone)]
pub struct SaddleOutput {
    /// `w̄_N = (x̄_N, ȳ_N, z̄_N)`, the β-weighted averages.
    pub w_bar: SaddlePoint,
    pub state: SolverState,
    pub metrics: RunMetrics,
}

/// Runs the saddle-point method for `n` outer iterations from `(x0, z0)`.
///
/// `y0` is validated but never read: the schedule must have `τ_1 = 0`, which
/// makes the first `y` depend on `x0` alone. The network view is the only
/// execution mode, and the reported feasibility is `‖𝒜x̄ − b‖` for linear
/// `h` and `‖𝒜x̄‖` otherwise.
pub fn saddle_run(
    p: &SaddleProblem,
    s: &ParamSchedule,
    n: usize,
    x0: &[f64],
    y0: &[f64],
    z0: &[f64],
    opts: &RunOptions,
) -> Result<SaddleOutput> {
    if opts.view != View::Network {
        return Err(Error::InvalidArgument("the saddle solver runs in the network view only".into()));
    }
    if y0.len() != p.primal_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial y",
            expected: p.primal_dim(),
            got: y0.len(),
        });
    }
    if s.tau_k(1) != 0.0 {
        return Err(Error::StepCondition("the first outer iteration needs tau_1 = 0".into()));
    }
    if z0.len() == p.dual_dim() && p.dual_set.distance(z0) > 1e-12 {
        return Err(Error::InvalidArgument("initial dual point lies outside the dual set".into()));
    }
    let dual = |z: &mut [f64], g: &[f64], q: f64| p.dual_step(z, g, q);
    let rhs = match &p.h {
        DualFunction::Linear { b } => Some(b.as_slice()),
        _ => None,
    };
    let out = run_engine(EngineInput {
        objs: p.objs.iter().collect(),
        op: p.op.as_ref(),
        graph: None,
        schedule: s,
        n,
        x0,
        z0: Some(z0),
        grads: Gradients::Exact,
        dual: &dual,
        rhs,
        opts,
    })?;
    Ok(SaddleOutput {
        w_bar: SaddlePoint {
            x: out.state.x_bar.clone(),
            y: out.state.y_bar.clone(),
            z: out.state.z_bar.clone(),
        },
        state: out.state,
        metrics: out.metrics,
    })
}

/// A candidate `w̄` and the probe `w` at which `Q(w̄, w)` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProbe {
    pub candidate: SaddlePoint,
    pub probe: SaddlePoint,
}

/// Value returned by [`gap_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GapValue {
    /// `Q(w̄, w)` itself.
    Exact(f64),
    /// `f(x̄) − f(x)`, a lower bound on `Q(w̄, w)` at the probe
    /// `(x, ∇f̃(x̄), 0)`; used when `f̃*` has no closed form.
    ObjectiveGapSurrogate(f64),
}

impl GapValue {
    pub fn value(self) -> f64 {
        match self {
            GapValue::Exact(v) | GapValue::ObjectiveGapSurrogate(v) => v,
        }
    }
}

/// `Q(w̄, w) = L(x̄, y, z) − L(x, ȳ, z̄)`.
pub fn gap_estimate(probe: &GapProbe, p: &SaddleProblem) -> Result<GapValue> {
    let GapProbe { candidate: c, probe: w } = probe;
    let closed_form = p.objs.iter().all(|o| matches!(o.smooth(), crate::problem::Smooth::Quadratic { .. }));
    if closed_form {
        let upper = p.lagrangian(&SaddlePoint {
            x: c.x.clone(),
            y: w.y.clone(),
            z: w.z.clone(),
        })?;
        let lower = p.lagrangian(&SaddlePoint {
            x: w.x.clone(),
            y: c.y.clone(),
            z: c.z.clone(),
        })?;
        Ok(GapValue::Exact(upper - lower))
    } else {
        p.check_point(c)?;
        p.check_point(w)?;
        Ok(GapValue::ObjectiveGapSurrogate(p.primal_value(&c.x) - p.primal_value(&w.x)))
    }
}

/// `(Σβ_k)⁻¹ β_1 [q_1¹ U(z0, z)/T_1 + (η_1¹/T_1 + p_1) V(x0, x)]` for the probe
/// `(x, ·, z)`, with `U`, `V` half squared distances.
pub fn gap_bound(s: &ParamSchedule, n: usize, x0: &[f64], z0: &[f64], probe: &SaddlePoint) -> Result<f64> {
    let t1 = s.inner_steps(1)? as f64;
    let w1 = (s.ln_beta(1) - s.ln_beta_sum(n)).exp();
    let u = 0.5 * dist2(z0, &probe.z).powi(2);
    let v = 0.5 * dist2(x0, &probe.x).powi(2);
    Ok(w1 * (s.q(1, 1) * u / t1 + (s.eta(1, 1) / t1 + s.p_k(1)) * v))
}

#[derive(Debug, Clone)]
pub struct ConstrainedOutput {
    pub x_bar: Vec<f64>,
    /// `f(x̄_N)`
    pub objective: f64,
    /// `f(x̄_N) − f*` when the optimal value is supplied.
    pub f_gap: Option<f64>,
    /// `‖𝒜x̄_N − b‖₂`
    pub residual: f64,
    pub z_bar: Vec<f64>,
    pub metrics: RunMetrics,
}

/// Solves `min Σ_i f_i(x^{(i)}) s.t. 𝒜x = b` from `x0` with `z0 = 0`.
/// `f_star`, when known, turns the objective value into a gap.
#[allow(clippy::too_many_arguments)]
pub fn constrained_solve(
    objs: Vec<LocalObjective>,
    a: Arc<dyn LinearOperator>,
    b: Vec<f64>,
    s: &ParamSchedule,
    n: usize,
    x0: &[f64],
    f_star: Option<f64>,
    opts: &RunOptions,
) -> Result<ConstrainedOutput> {
    let p = SaddleProblem::new(objs, a, DualFunction::Linear { b: b.clone() }, FeasibleSet::Free)?;
    let z0 = vec![0.0; p.dual_dim()];
    let y0 = vec![0.0; p.primal_dim()];
    let out = saddle_run(&p, s, n, x0, &y0, &z0, opts)?;
    let mut r = p.op.apply(&out.w_bar.x);
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri -= bi;
    }
    let objective = p.primal_value(&out.w_bar.x);
    Ok(ConstrainedOutput {
        objective,
        f_gap: f_star.map(|f| objective - f),
        residual: crate::linalg::norm2(&r),
        x_bar: out.w_bar.x,
        z_bar: out.w_bar.z,
        metrics: out.metrics,
    })
}
