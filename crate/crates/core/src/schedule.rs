//! Parameter sequences for the deterministic and stochastic sliding methods,
//! plus an executable checker for their convergence conditions.
//!
//! Per-iteration scalars are produced lazily from closed forms. Quantities
//! that grow geometrically once the strongly convex branch kicks in (`β_k`,
//! `T_k`, `c_k`) are also available as natural logarithms so the checker never
//! overflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest inner-step count or batch size the solvers will execute.
pub const MAX_EXEC_COUNT: f64 = 9_007_199_254_740_992.0; // 2^53

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleInputs {
    /// `L̃`
    pub lipschitz: f64,
    pub mu: f64,
    #[serde(default)]
    pub sigma: f64,
    /// `‖𝒜‖`
    pub op_norm: f64,
    pub r: f64,
    /// Batch constant `c` (stochastic only).
    #[serde(default)]
    pub c: Option<f64>,
    /// Planned outer iterations (stochastic only).
    #[serde(default)]
    pub n: Option<usize>,
    pub mode: ScheduleMode,
}

impl ScheduleInputs {
    pub fn deterministic(lipschitz: f64, mu: f64, op_norm: f64, r: f64) -> Self {
        ScheduleInputs {
            lipschitz,
            mu,
            sigma: 0.0,
            op_norm,
            r,
            c: None,
            n: None,
            mode: ScheduleMode::Deterministic,
        }
    }

    pub fn stochastic(lipschitz: f64, mu: f64, sigma: f64, op_norm: f64, r: f64, c: f64, n: usize) -> Self {
        ScheduleInputs {
            lipschitz,
            mu,
            sigma,
            op_norm,
            r,
            c: Some(c),
            n: Some(n),
            mode: ScheduleMode::Stochastic,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be non-negative and finite, got {v}")))
            }
        };
        positive("lipschitz", self.lipschitz)?;
        nonneg("mu", self.mu)?;
        nonneg("sigma", self.sigma)?;
        nonneg("op_norm", self.op_norm)?;
        positive("r", self.r)?;
        if self.mode == ScheduleMode::Stochastic {
            let c = self
                .c
                .ok_or_else(|| Error::InvalidArgument("stochastic schedules need the batch constant c".into()))?;
            positive("c", c)?;
            match self.n {
                Some(n) if n >= 1 => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "stochastic schedules need the planned outer iteration count n".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Schedule quantities that can be perturbed for mutation testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleField {
    Tau,
    Lambda,
    Beta,
    P,
    Eta,
    Q,
}

/// Multiplies `field` at outer iteration `k` by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub field: ScheduleField,
    pub k: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Standard(ScheduleMode),
    /// No sliding: one inner step per outer step, fixed steps.
    Constant { eta: f64, q: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSchedule {
    inputs: ScheduleInputs,
    kind: Kind,
    /// `τ` of the strongly convex branch (0 when `μ = 0`).
    tau: f64,
    /// `λ = τ/(1+τ)` (0 when `μ = 0`).
    lambda: f64,
    delta: Option<usize>,
    perturbations: Vec<Perturbation>,
}

fn switch_point(tau: f64) -> Option<usize> {
    let d = (2.0 * tau + 1.0).ceil();
    // beyond 2^53 no run can reach the switch
    (d.is_finite() && d < MAX_EXEC_COUNT).then_some(d as usize)
}

pub fn build_deterministic(inp: &ScheduleInputs) -> Result<ParamSchedule> {
    if inp.mode != ScheduleMode::Deterministic {
        return Err(Error::InvalidArgument("build_deterministic needs deterministic inputs".into()));
    }
    inp.validate()?;
    Ok(ParamSchedule::standard(inp.clone(), (2.0 * inp.lipschitz / inp.mu).sqrt()))
}

pub fn build_stochastic(inp: &ScheduleInputs) -> Result<ParamSchedule> {
    if inp.mode != ScheduleMode::Stochastic {
        return Err(Error::InvalidArgument("build_stochastic needs stochastic inputs".into()));
    }
    inp.validate()?;
    Ok(ParamSchedule::standard(inp.clone(), 2.0 * (inp.lipschitz / inp.mu).sqrt()))
}

/// Builds whichever schedule `inp.mode` names.
pub fn build(inp: &ScheduleInputs) -> Result<ParamSchedule> {
    match inp.mode {
        ScheduleMode::Deterministic => build_deterministic(inp),
        ScheduleMode::Stochastic => build_stochastic(inp),
    }
}

impl ParamSchedule {
    fn standard(inputs: ScheduleInputs, tau: f64) -> Self {
        let (tau, lambda, delta) = if inputs.mu > 0.0 {
            (tau, tau / (1.0 + tau), switch_point(tau))
        } else {
            (0.0, 0.0, None)
        };
        ParamSchedule {
            kind: Kind::Standard(inputs.mode),
            inputs,
            tau,
            lambda,
            delta,
            perturbations: Vec::new(),
        }
    }

    /// Non-sliding schedule: `τ_k = λ_k = p_k = 0`, `β_k = 1`, `T_k = 1`,
    /// `α = 1` and fixed primal/dual steps `η`, `q`.
    pub fn constant(lipschitz: f64, mu: f64, op_norm: f64, eta: f64, q: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite() && q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidArgument(format!("steps must be positive, got eta={eta}, q={q}")));
        }
        let inputs = ScheduleInputs::deterministic(lipschitz, mu, op_norm, 1.0);
        inputs.validate()?;
        Ok(ParamSchedule {
            inputs,
            kind: Kind::Constant { eta, q },
            tau: 0.0,
            lambda: 0.0,
            delta: None,
            perturbations: Vec::new(),
        })
    }

    /// Copy with one extra multiplicative perturbation.
    pub fn perturbed(&self, field: ScheduleField, k: usize, factor: f64) -> Self {
        let mut s = self.clone();
        s.perturbations.push(Perturbation { field, k, factor });
        s
    }

    pub fn inputs(&self) -> &ScheduleInputs {
        &self.inputs
    }

    /// `None` for the non-sliding constant schedule.
    pub fn mode(&self) -> Option<ScheduleMode> {
        match self.kind {
            Kind::Standard(m) => Some(m),
            Kind::Constant { .. } => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant { .. })
    }

    /// Switch point `Δ`; `None` means `+∞`.
    pub fn delta(&self) -> Option<usize> {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn factor(&self, field: ScheduleField, k: usize) -> f64 {
        self.perturbations
            .iter()
            .filter(|p| p.field == field && p.k == k)
            .map(|p| p.factor)
            .product()
    }

    fn before_switch(&self, k: usize) -> bool {
        self.delta.is_none_or(|d| k <= d)
    }

    fn stochastic(&self) -> bool {
        self.kind == Kind::Standard(ScheduleMode::Stochastic)
    }

    pub fn tau_k(&self, k: usize) -> f64 {
        let base = match self.kind {
            Kind::Constant { .. } => 0.0,
            Kind::Standard(_) if self.before_switch(k) => (k as f64 - 1.0) / 2.0,
            Kind::Standard(_) => self.tau,
        };
        base * self.factor(ScheduleField::Tau, k)
    }

    pub fn lambda_k(&self, k: usize) -> f64 {
        let base = match self.kind {
            Kind::Constant { .. } => 0.0,
            Kind::Standard(_) if self.before_switch(k) => (k as f64 - 1.0) / k as f64,
            Kind::Standard(_) => self.lambda,
        };
        base * self.factor(ScheduleField::Lambda, k)
    }

    /// `ln β_k`
    pub fn ln_beta(&self, k: usize) -> f64 {
        let base = match (self.kind.clone(), self.delta) {
            (Kind::Constant { .. }, _) => 0.0,
            (Kind::Standard(_), Some(d)) if k > d => (d as f64).ln() - (k - d) as f64 * self.lambda.ln(),
            (Kind::Standard(_), _) => (k as f64).ln(),
        };
        base + self.factor(ScheduleField::Beta, k).ln()
    }

    /// `β_k` (may be `+∞` far beyond the switch point; use [`Self::ln_beta`]).
    pub fn beta(&self, k: usize) -> f64 {
        match self.kind {
            Kind::Constant { .. } => self.factor(ScheduleField::Beta, k),
            Kind::Standard(_) if self.before_switch(k) => k as f64 * self.factor(ScheduleField::Beta, k),
            Kind::Standard(_) => self.ln_beta(k).exp(),
        }
    }

    /// `β_k / β_{k-1}` for `k ≥ 2`, in closed form.
    pub fn beta_ratio(&self, k: usize) -> f64 {
        debug_assert!(k >= 2);
        let base = match self.kind {
            Kind::Constant { .. } => 1.0,
            Kind::Standard(_) if self.before_switch(k) => k as f64 / (k as f64 - 1.0),
            Kind::Standard(_) => 1.0 / self.lambda,
        };
        base * self.factor(ScheduleField::Beta, k) / self.factor(ScheduleField::Beta, k - 1)
    }

    pub fn p_k(&self, k: usize) -> f64 {
        let l = self.inputs.lipschitz;
        let scale = if self.stochastic() { 2.0 } else { 1.0 };
        let base = match self.kind {
            Kind::Constant { .. } => 0.0,
            Kind::Standard(_) if self.before_switch(k) => scale * 2.0 * l / k as f64,
            Kind::Standard(_) => scale * l / (1.0 + self.tau),
        };
        base * self.factor(ScheduleField::P, k)
    }

    /// `T_k` as a real number (`+∞` if it overflows).
    fn inner_raw(&self, k: usize) -> f64 {
        let inp = &self.inputs;
        let raw = match self.kind {
            Kind::Constant { .. } => return 1.0,
            Kind::Standard(_) if self.before_switch(k) => k as f64 * inp.r * inp.op_norm / inp.lipschitz,
            Kind::Standard(_) => {
                let d = self.delta.expect("past the switch point");
                2.0 * (1.0 + self.tau) * inp.r * inp.op_norm
                    / (inp.lipschitz * self.lambda.powf((k - d) as f64 / 2.0))
            }
        };
        raw.ceil().max(1.0)
    }

    /// `ln T_k`, exact for representable `T_k`.
    pub fn ln_inner(&self, k: usize) -> f64 {
        let t = self.inner_raw(k);
        if t.is_finite() {
            return t.ln();
        }
        let inp = &self.inputs;
        let d = self.delta.expect("only the geometric branch overflows");
        ((2.0 * (1.0 + self.tau)).ln() + inp.r.ln() + inp.op_norm.ln() - inp.lipschitz.ln())
            - (k - d) as f64 / 2.0 * self.lambda.ln()
    }

    /// `T_k` as a real (may be `+∞`).
    pub fn inner_f64(&self, k: usize) -> f64 {
        self.inner_raw(k)
    }

    /// `T_k` as an executable count.
    pub fn inner_steps(&self, k: usize) -> Result<usize> {
        let t = self.inner_raw(k);
        if t < MAX_EXEC_COUNT {
            Ok(t as usize)
        } else {
            Err(Error::ScheduleOverflow { what: "T_k", k })
        }
    }

    /// `η_k^t = (p_k + μ)(t − 1) + p_k T_k`
    pub fn eta(&self, k: usize, t: usize) -> f64 {
        let base = match self.kind {
            Kind::Constant { eta, .. } => eta,
            Kind::Standard(_) => {
                let p = self.p_k(k);
                (p + self.inputs.mu) * (t as f64 - 1.0) + p * self.inner_raw(k)
            }
        };
        base * self.factor(ScheduleField::Eta, k)
    }

    /// `ln η_k^{T_k}` without forming `T_k` when it overflows.
    fn ln_eta_last(&self, k: usize) -> f64 {
        if let Kind::Constant { eta, .. } = self.kind {
            return (eta * self.factor(ScheduleField::Eta, k)).ln();
        }
        let p = self.p_k(k);
        let ln_t = self.ln_inner(k);
        let inv_t = (-ln_t).exp();
        // (p+μ)(T−1) + pT = T·[(p+μ)(1 − 1/T) + p]
        ln_t + ((p + self.inputs.mu) * (1.0 - inv_t) + p).ln() + self.factor(ScheduleField::Eta, k).ln()
    }

    /// `ln η_k^{T_k − 1}` (requires `T_k ≥ 2`).
    fn ln_eta_penultimate(&self, k: usize) -> f64 {
        let p = self.p_k(k);
        let ln_t = self.ln_inner(k);
        let inv_t = (-ln_t).exp();
        ln_t + ((p + self.inputs.mu) * (1.0 - 2.0 * inv_t) + p).ln() + self.factor(ScheduleField::Eta, k).ln()
    }

    fn ln_eta_first(&self, k: usize) -> f64 {
        match self.kind {
            Kind::Constant { eta, .. } => (eta * self.factor(ScheduleField::Eta, k)).ln(),
            Kind::Standard(_) => self.p_k(k).ln() + self.ln_inner(k) + self.factor(ScheduleField::Eta, k).ln(),
        }
    }

    fn q_divisor(&self) -> f64 {
        if self.stochastic() {
            4.0
        } else {
            2.0
        }
    }

    /// `ln q_k^t` (constant in `t`).
    pub fn ln_q(&self, k: usize) -> f64 {
        let inp = &self.inputs;
        let base = match self.kind {
            Kind::Constant { q, .. } => q.ln(),
            Kind::Standard(_) => {
                inp.lipschitz.ln() + self.ln_inner(k) - self.q_divisor().ln() - self.ln_beta(k) - 2.0 * inp.r.ln()
            }
        };
        base + self.factor(ScheduleField::Q, k).ln()
    }

    /// `q_k^t = L̃ T_k / (2 β_k R²)` (`4` instead of `2` when stochastic).
    pub fn q(&self, k: usize, _t: usize) -> f64 {
        let inp = &self.inputs;
        match self.kind {
            Kind::Constant { q, .. } => q * self.factor(ScheduleField::Q, k),
            Kind::Standard(_) => {
                let (t, b) = (self.inner_raw(k), self.beta(k));
                if t.is_finite() && b.is_finite() {
                    inp.lipschitz * t / (self.q_divisor() * b * inp.r * inp.r) * self.factor(ScheduleField::Q, k)
                } else {
                    self.ln_q(k).exp()
                }
            }
        }
    }

    /// `α_k^1 = β_{k−1}T_k/(β_k T_{k−1})` for `k ≥ 2`; `1` otherwise.
    pub fn alpha(&self, k: usize, t: usize) -> f64 {
        if k < 2 || t != 1 || self.is_constant() {
            return 1.0;
        }
        let (tk, tk1) = (self.inner_raw(k), self.inner_raw(k - 1));
        if tk.is_finite() {
            tk / tk1 / self.beta_ratio(k)
        } else {
            (self.ln_inner(k) - self.ln_inner(k - 1) - self.beta_ratio(k).ln()).exp()
        }
    }

    /// `ln c_k` of the stochastic schedule.
    pub fn ln_batch(&self, k: usize) -> Result<f64> {
        let (c, n) = match (self.stochastic(), self.inputs.c, self.inputs.n) {
            (true, Some(c), Some(n)) => (c, n),
            _ => return Err(Error::InvalidArgument("batch sizes exist for stochastic schedules only".into())),
        };
        let l = self.inputs.lipschitz;
        let raw = match self.delta {
            Some(d) if k > d => {
                let ln = 2.0 * (1.0 + self.tau).ln() + (d as f64).ln() + c.ln()
                    - 2.0 * l.ln()
                    - (k + n) as f64 / 2.0 * self.lambda.ln()
                    + d as f64 * self.lambda.ln();
                let v = ln.exp();
                return Ok(if v.is_finite() { v.ceil().max(1.0).ln() } else { ln });
            }
            _ => {
                let span = self.delta.map_or(n, |d| n.min(d)) as f64;
                span * self.beta(k) * c / (self.p_k(k) * l)
            }
        };
        Ok(raw.ceil().max(1.0).ln())
    }

    /// Executable mini-batch size `c_k`.
    pub fn batch(&self, k: usize) -> Result<u64> {
        let v = self.ln_batch(k)?.exp().round();
        if v < MAX_EXEC_COUNT {
            Ok(v as u64)
        } else {
            Err(Error::ScheduleOverflow { what: "c_k", k })
        }
    }

    /// `ln Σ_{k≤n} β_k`
    pub fn ln_beta_sum(&self, n: usize) -> f64 {
        let top = (1..=n).map(|k| self.ln_beta(k)).fold(f64::NEG_INFINITY, f64::max);
        top + (1..=n).map(|k| (self.ln_beta(k) - top).exp()).sum::<f64>().ln()
    }

    /// `Σ_k β_k v_k / Σ_k β_k` over `k = 1..=n`, evaluated stably.
    pub fn beta_average(&self, n: usize, v: impl Fn(usize) -> f64) -> f64 {
        let top = (1..=n).map(|k| self.ln_beta(k)).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..=n {
            let w = (self.ln_beta(k) - top).exp();
            num += w * v(k);
            den += w;
        }
        num / den
    }

    /// `min{2/N², λ^{N−Δ}}` (the first term alone when `μ = 0`).
    pub fn rate_factor(&self, n: usize) -> f64 {
        let poly = 2.0 / (n as f64 * n as f64);
        match self.delta {
            Some(d) => poly.min(self.lambda.powf(n as f64 - d as f64)),
            None => poly,
        }
    }

    /// Ergodic error bounds after `n` outer iterations started from `x0` with
    /// `z0 = 0`, given `v0 = V(x0, x*)` and `z_norm = ‖z*‖`. `variance` is
    /// the network-level gradient noise `E‖G − ∇f̃‖²` of a single sample; it
    /// adds `Σβ_k variance/(p_k c_k) / Σβ_k` to both bounds (pass 0 for exact
    /// gradients).
    pub fn error_bounds(&self, n: usize, v0: f64, z_norm: f64, variance: f64) -> Result<ErrorBounds> {
        let t1 = self.inner_steps(1)? as f64;
        let w1 = (self.ln_beta(1) - self.ln_beta_sum(n)).exp();
        let primal = (self.eta(1, 1) / t1 + self.p_k(1)) * v0;
        let dual = self.q(1, 1) / (2.0 * t1) * (z_norm + 1.0).powi(2);
        let noise = if variance > 0.0 {
            let batches = (1..=n).map(|k| self.batch(k)).collect::<Result<Vec<u64>>>()?;
            self.beta_average(n, |k| variance / (self.p_k(k) * batches[k - 1] as f64))
        } else {
            0.0
        };
        Ok(ErrorBounds {
            objective: w1 * primal + noise,
            feasibility: w1 * (primal + dual) + noise,
        })
    }

    /// Closed-form rates of the built schedules: `rate · 4L̃V` and
    /// `rate · [L̃(‖z*‖+1)²/(4R²) + 4L̃V]` for exact gradients; the stochastic
    /// forms use `‖x0 − x*‖² = 2V`, `L̃/(8R²)` and add `L̃·variance/c`.
    pub fn closed_form_bounds(&self, n: usize, v0: f64, z_norm: f64, variance: f64) -> ErrorBounds {
        let inp = &self.inputs;
        let l = inp.lipschitz;
        let rate = self.rate_factor(n);
        let z2 = (z_norm + 1.0).powi(2);
        if self.stochastic() {
            let base = 8.0 * l * v0 + l * variance / inp.c.unwrap_or(1.0);
            ErrorBounds {
                objective: rate * base,
                feasibility: rate * (l / (8.0 * inp.r * inp.r) * z2 + base),
            }
        } else {
            ErrorBounds {
                objective: rate * 4.0 * l * v0,
                feasibility: rate * (l / (4.0 * inp.r * inp.r) * z2 + 4.0 * l * v0),
            }
        }
    }

    /// Per-k table for JSON dumps.
    pub fn table(&self, n: usize) -> Vec<ScheduleRow> {
        (1..=n)
            .map(|k| ScheduleRow {
                k,
                tau: self.tau_k(k),
                lambda: self.lambda_k(k),
                ln_beta: self.ln_beta(k),
                p: self.p_k(k),
                ln_inner: self.ln_inner(k),
                eta_first: self.eta(k, 1),
                ln_q: self.ln_q(k),
                alpha: self.alpha(k, 1),
                ln_batch: self.ln_batch(k).ok(),
            })
            .collect()
    }

    pub fn dump_json(&self, n: usize) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            inputs: &'a ScheduleInputs,
            tau: f64,
            lambda: f64,
            delta: Option<usize>,
            rows: Vec<ScheduleRow>,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            inputs: &self.inputs,
            tau: self.tau,
            lambda: self.lambda,
            delta: self.delta,
            rows: self.table(n),
        })?)
    }
}

/// Upper bounds on `f(x̄_N) − f(x*)` and `‖𝒜x̄_N − b‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBounds {
    pub objective: f64,
    pub feasibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub k: usize,
    pub tau: f64,
    pub lambda: f64,
    pub ln_beta: f64,
    pub p: f64,
    pub ln_inner: f64,
    pub eta_first: f64,
    pub ln_q: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ln_batch: Option<f64>,
}

/// Outcome of one named inequality across all iterations it applies to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest `ln(rhs) − ln(lhs)` seen (`None` when every instance is
    /// trivially satisfied, e.g. a zero operator norm).
    pub worst_slack: Option<f64>,
    pub worst_k: Option<usize>,
    pub failures: usize,
    pub first_failure_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub mode: ScheduleMode,
    pub n: usize,
    pub passed: bool,
    pub worst_slack: Option<f64>,
    pub conditions: Vec<ConditionResult>,
}

impl ConditionReport {
    pub fn failures(&self) -> impl Iterator<Item = &ConditionResult> {
        self.conditions.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Relative tolerance for comparisons in log space.
const LOG_TOL: f64 = 1e-12;
/// Relative tolerance for the equality `β_{k−1} = β_k λ_k`.
const EQ_TOL: f64 = 1e-12;

struct Tracker {
    result: ConditionResult,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker {
            result: ConditionResult {
                name,
                passed: true,
                worst_slack: None,
                worst_k: None,
                failures: 0,
                first_failure_k: None,
            },
        }
    }

    fn record(&mut self, k: usize, slack: f64, ok: bool) {
        let r = &mut self.result;
        if r.worst_slack.is_none_or(|w| slack < w) {
            r.worst_slack = Some(slack);
            r.worst_k = Some(k);
        }
        if !ok {
            r.passed = false;
            r.failures += 1;
            r.first_failure_k.get_or_insert(k);
        }
    }

    /// `lhs ≤ rhs` given as sums of logs; a `-∞` lhs is trivially true.
    fn leq(&mut self, k: usize, lhs: &[f64], rhs: &[f64]) {
        let l: f64 = lhs.iter().sum();
        let r: f64 = rhs.iter().sum();
        if l == f64::NEG_INFINITY {
            return;
        }
        let scale = lhs.iter().chain(rhs).filter(|v| v.is_finite()).fold(1.0f64, |a, v| a.max(v.abs()));
        let slack = r - l;
        self.record(k, slack, !slack.is_nan() && slack >= -LOG_TOL * (1.0 + scale));
    }

    /// `a = b` to relative tolerance, with `a`, `b` given as logs.
    fn log_eq(&mut self, k: usize, lhs: &[f64], rhs: &[f64]) {
        let l: f64 = lhs.iter().sum();
        let r: f64 = rhs.iter().sum();
        let scale = lhs.iter().chain(rhs).filter(|v| v.is_finite()).fold(1.0f64, |a, v| a.max(v.abs()));
        let slack = -(r - l).abs();
        self.record(k, slack, slack >= -LOG_TOL * (1.0 + scale));
    }

    fn direct(&mut self, k: usize, slack: f64, ok: bool) {
        self.record(k, slack, ok);
    }
}

fn ln(v: f64) -> f64 {
    v.ln()
}

/// Evaluates every inequality of the convergence conditions for outer
/// iterations `1..=n`. Per-inner-step conditions are checked at `t = 2` and
/// `t = T_k`, which suffices because `η_k^t` is affine in `t` and `q_k^t` is
/// constant in `t`. In stochastic mode the two modified conditions carry the
/// factor 2.
pub fn verify_conditions(s: &ParamSchedule, mode: ScheduleMode, n: usize) -> ConditionReport {
    let inp = &s.inputs;
    let l = inp.lipschitz;
    let mu = inp.mu;
    let ln_a2 = 2.0 * ln(inp.op_norm);
    let modified = if mode == ScheduleMode::Stochastic { 2.0 } else { 1.0 };

    let mut beta_tau = Tracker::new("beta_k tau_k <= beta_{k-1} (tau_{k-1} + 1)");
    let mut beta_eq = Tracker::new("beta_{k-1} = beta_k lambda_k");
    let mut lip = Tracker::new(if mode == ScheduleMode::Stochastic {
        "2 L lambda_k <= p_{k-1} tau_k"
    } else {
        "L lambda_k <= p_{k-1} tau_k"
    });
    let mut alpha_eq = Tracker::new("beta_k T_{k-1} alpha_k^1 = beta_{k-1} T_k");
    let mut alpha_norm = Tracker::new("alpha_k^1 ||A||^2 <= eta_{k-1}^{T_{k-1}} q_k^1");
    let mut q_cross = Tracker::new("beta_k T_{k-1} q_k^1 <= beta_{k-1} T_k q_{k-1}^{T_{k-1}}");
    let mut eta_cross =
        Tracker::new("beta_k T_{k-1} (eta_k^1 + p_k T_k) <= beta_{k-1} T_k (mu + eta_{k-1}^{T_{k-1}} + p_{k-1})");
    let mut alpha_one = Tracker::new("alpha_k^t = 1 for t >= 2");
    let mut eta_q = Tracker::new("||A||^2 <= eta_k^{t-1} q_k^t");
    let mut q_mono = Tracker::new("q_k^t <= q_k^{t-1}");
    let mut eta_growth = Tracker::new("eta_k^t <= mu + eta_k^{t-1} + p_k");
    let mut tau_one = Tracker::new("tau_1 = 0");
    let mut final_p = Tracker::new(if mode == ScheduleMode::Stochastic {
        "p_N (tau_N + 1) >= 2 L"
    } else {
        "p_N (tau_N + 1) >= L"
    });
    let mut final_eta_q = Tracker::new("eta_N^{T_N} q_N^{T_N} >= ||A||^2");

    for k in 1..=n {
        let ln_t = s.ln_inner(k);
        let ln_q = s.ln_q(k);
        let p = s.p_k(k);
        if k >= 2 {
            let ratio = s.beta_ratio(k);
            let ln_ratio = ln(ratio);
            let ln_t1 = s.ln_inner(k - 1);
            beta_tau.leq(k, &[ln_ratio, ln(s.tau_k(k))], &[ln(s.tau_k(k - 1) + 1.0)]);
            let prod = ratio * s.lambda_k(k);
            beta_eq.direct(k, -(prod - 1.0).abs(), (prod - 1.0).abs() <= EQ_TOL);
            lip.leq(k, &[ln(modified * l), ln(s.lambda_k(k))], &[ln(s.p_k(k - 1)), ln(s.tau_k(k))]);
            let alpha = s.alpha(k, 1);
            alpha_eq.log_eq(k, &[ln_ratio, ln_t1, ln(alpha)], &[ln_t]);
            alpha_norm.leq(k, &[ln(alpha), ln_a2], &[s.ln_eta_last(k - 1), ln_q]);
            q_cross.leq(k, &[ln_ratio, ln_t1, ln_q], &[ln_t, s.ln_q(k - 1)]);
            // η_k^1 + p_k T_k and μ + η_{k−1}^{T_{k−1}} + p_{k−1}, factoring out T
            let lhs_inner = ln((s.ln_eta_first(k) - ln_t).exp() + p) + ln_t;
            let eta_last = s.ln_eta_last(k - 1);
            let rhs_inner = eta_last + ln(1.0 + (mu + s.p_k(k - 1)) * (-eta_last).exp());
            eta_cross.leq(k, &[ln_ratio, ln_t1, lhs_inner], &[ln_t, rhs_inner]);
        }
        if ln_t > 0.0 {
            // T_k ≥ 2: check t = 2 and t = T_k
            alpha_one.direct(k, 0.0, s.alpha(k, 2) == 1.0);
            eta_q.leq(k, &[ln_a2], &[s.ln_eta_first(k), ln_q]);
            eta_q.leq(k, &[ln_a2], &[s.ln_eta_penultimate(k), ln_q]);
            q_mono.leq(k, &[ln_q], &[ln_q]);
            let first = s.ln_eta_first(k);
            let second = ln_t + ln((p + mu) * (-ln_t).exp() + p) + ln(s.factor(ScheduleField::Eta, k));
            eta_growth.leq(k, &[second], &[first + ln(1.0 + (mu + p) * (-first).exp())]);
            let last = s.ln_eta_last(k);
            let pen = s.ln_eta_penultimate(k);
            eta_growth.leq(k, &[last], &[pen + ln(1.0 + (mu + p) * (-pen).exp())]);
        }
    }
    let t1 = s.tau_k(1);
    tau_one.direct(1, -t1.abs(), t1 == 0.0);
    final_p.leq(n, &[ln(modified * l)], &[ln(s.p_k(n)), ln(s.tau_k(n) + 1.0)]);
    final_eta_q.leq(n, &[ln_a2], &[s.ln_eta_last(n), s.ln_q(n)]);

    let conditions: Vec<ConditionResult> = [
        beta_tau, beta_eq, lip, alpha_eq, alpha_norm, q_cross, eta_cross, alpha_one, eta_q, q_mono, eta_growth,
        tau_one, final_p, final_eta_q,
    ]
    .into_iter()
    .map(|t| t.result)
    .collect();
    let passed = conditions.iter().all(|c| c.passed);
    let worst_slack = conditions.iter().filter_map(|c| c.worst_slack).reduce(f64::min);
    ConditionReport {
        mode,
        n,
        passed,
        worst_slack,
        conditions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_mu_zero_k3() {
        let s = build_deterministic(&ScheduleInputs::deterministic(1.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(s.tau_k(3), 1.0);
        assert_relative_eq!(s.lambda_k(3), 2.0 / 3.0);
        assert_eq!(s.beta(3), 3.0);
        assert_relative_eq!(s.p_k(3), 2.0 / 3.0);
        assert_eq!(s.inner_steps(3).unwrap(), 3);
        assert_eq!(s.delta(), None);
    }

    #[test]
    fn first_iteration() {
        let s = build_deterministic(&ScheduleInputs::deterministic(2.0, 0.0, 3.0, 1.5)).unwrap();
        assert_eq!(s.tau_k(1), 0.0);
        assert_eq!(s.inner_steps(1).unwrap(), 3); // ⌈1.5·3/2⌉
        for t in 1..5 {
            assert_eq!(s.alpha(1, t), 1.0);
        }
    }

    #[test]
    fn strongly_convex_branch() {
        let s = build_deterministic(&ScheduleInputs::deterministic(8.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(s.tau(), 4.0);
        assert_eq!(s.delta(), Some(9));
        assert_relative_eq!(s.beta(10), 9.0 * 1.25, max_relative = 1e-14);
        assert_relative_eq!(s.p_k(10), 8.0 / 5.0);
    }

    #[test]
    fn stochastic_batch_example() {
        let s = build_stochastic(&ScheduleInputs::stochastic(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 10)).unwrap();
        assert_eq!(s.p_k(2), 2.0);
        assert_eq!(s.batch(2).unwrap(), 10);
    }

    #[test]
    fn general_bounds_within_closed_forms() {
        for mu in [0.0, 0.5] {
            let s = build_deterministic(&ScheduleInputs::deterministic(2.0, mu, 3.0, 0.7)).unwrap();
            for n in [1, 5, 40] {
                let g = s.error_bounds(n, 1.3, 0.4, 0.0).unwrap();
                let c = s.closed_form_bounds(n, 1.3, 0.4, 0.0);
                assert!(g.objective <= c.objective * (1.0 + 1e-12), "mu={mu} n={n}");
                assert!(g.feasibility <= c.feasibility * (1.0 + 1e-12), "mu={mu} n={n}");
            }
        }
        let s = build_stochastic(&ScheduleInputs::stochastic(1.0, 0.0, 1.0, 2.0, 1.0, 0.5, 20)).unwrap();
        let g = s.error_bounds(20, 0.8, 1.0, 1.0).unwrap();
        let c = s.closed_form_bounds(20, 0.8, 1.0, 1.0);
        assert!(g.objective <= c.objective && g.feasibility <= c.feasibility);
    }

    #[test]
    fn stochastic_needs_n() {
        let mut inp = ScheduleInputs::stochastic(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 10);
        inp.n = None;
        assert!(build_stochastic(&inp).is_err());
    }

    #[test]
    fn zero_norm_clamps_inner_steps() {
        let s = build_deterministic(&ScheduleInputs::deterministic(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.inner_steps(7).unwrap(), 1);
        assert!(verify_conditions(&s, ScheduleMode::Deterministic, 50).passed);
    }

    #[test]
    fn standard_schedules_pass() {
        let s = build_deterministic(&ScheduleInputs::deterministic(3.0, 0.0, 2.5, 0.7)).unwrap();
        let r = verify_conditions(&s, ScheduleMode::Deterministic, 100);
        assert!(r.passed, "{:#?}", r.failures().collect::<Vec<_>>());
        let s = build_stochastic(&ScheduleInputs::stochastic(4.0, 1.0, 1.0, 2.0, 1.0, 0.5, 30)).unwrap();
        let r = verify_conditions(&s, ScheduleMode::Stochastic, 30);
        assert!(r.passed, "{:#?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn halved_p_is_flagged() {
        let s = build_deterministic(&ScheduleInputs::deterministic(1.0, 0.0, 1.0, 1.0))
            .unwrap()
            .perturbed(ScheduleField::P, 5, 0.5);
        let r = verify_conditions(&s, ScheduleMode::Deterministic, 20);
        assert!(!r.passed);
        assert!(r.failures().any(|c| matches!(c.first_failure_k, Some(5 | 6))));
    }

    #[test]
    fn far_geometric_branch_stays_finite() {
        let s = build_deterministic(&ScheduleInputs::deterministic(1.0, 50.0, 10.0, 1.0)).unwrap();
        assert!(s.beta(10_000).is_infinite());
        assert!(s.ln_beta(10_000).is_finite());
        assert!(s.inner_steps(10_000).is_err());
        let r = verify_conditions(&s, ScheduleMode::Deterministic, 10_000);
        assert!(r.passed, "{:#?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn report_serializes() {
        let s = build_deterministic(&ScheduleInputs::deterministic(1.0, 0.0, 1.0, 1.0)).unwrap();
        let json = verify_conditions(&s, ScheduleMode::Deterministic, 5).to_json().unwrap();
        assert!(json.contains("\"passed\": true"));
        assert!(s.dump_json(3).unwrap().contains("\"rows\""));
    }
}
