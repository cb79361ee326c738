use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EvalCounters, LocalObjective, Smooth};
use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// How a stochastic gradient `G(x, ξ)` deviates from `∇f̃(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `∇f̃(x) + (σ/√d)·ξ` with `ξ ~ N(0, I_d)`, so `E‖G − ∇f̃‖² = σ²`.
    AdditiveGaussian { sigma: f64 },
    /// `n·∇ℓ_j(x)` for a uniformly drawn local row `j`; `sigma` is the
    /// declared variance bound used by schedules and bounds.
    Subsampling { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::AdditiveGaussian { sigma } | NoiseModel::Subsampling { sigma } => sigma,
        }
    }
}

/// Unbiased gradient oracle for one agent. Randomness is keyed by
/// `(seed, agent, outer iteration)`; samples within a batch are drawn in
/// order from that stream, so results never depend on agent scheduling.
#[derive(Debug, Clone)]
pub struct StochasticOracle {
    objective: Arc<LocalObjective>,
    noise: NoiseModel,
    seed: u64,
    agent: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StochasticOracle {
    pub fn new(objective: Arc<LocalObjective>, noise: NoiseModel, seed: u64, agent: usize) -> Result<Self> {
        if !(noise.sigma() >= 0.0 && noise.sigma().is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level {} must be >= 0", noise.sigma())));
        }
        if matches!(noise, NoiseModel::Subsampling { .. }) && !matches!(objective.smooth(), Smooth::Logistic(_)) {
            return Err(Error::InvalidArgument(
                "data subsampling needs a data-backed objective".into(),
            ));
        }
        Ok(StochasticOracle {
            objective,
            noise,
            seed,
            agent: agent as u64,
        })
    }

    pub fn objective(&self) -> &LocalObjective {
        &self.objective
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same oracle with a different base seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        StochasticOracle { seed, ..self.clone() }
    }

    /// The random stream for outer iteration `k`.
    pub fn stream(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(self.agent)));
        rng.set_stream(k as u64);
        rng
    }
}

/// Average of `batch` independent draws of `G(x, ξ)` from `rng`; advances
/// `counters.samples` by `batch`.
pub fn stoch_grad(
    oracle: &StochasticOracle,
    x: &[f64],
    batch: usize,
    rng: &mut ChaCha8Rng,
    counters: &mut EvalCounters,
) -> Result<Vec<f64>> {
    let obj = &oracle.objective;
    if batch == 0 {
        return Err(Error::InvalidArgument("mini-batch size must be at least 1".into()));
    }
    if x.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            context: "stochastic gradient input",
            expected: obj.dim(),
            got: x.len(),
        });
    }
    if !all_finite(x) {
        return Err(Error::NonFinite("stochastic gradient input"));
    }
    counters.samples += batch as u64;
    let inv = 1.0 / batch as f64;
    match oracle.noise {
        NoiseModel::AdditiveGaussian { sigma } => {
            let mut v = obj.gradient(x);
            if sigma == 0.0 {
                return Ok(v);
            }
            let mut noise = vec![0.0; v.len()];
            for _ in 0..batch {
                for n in noise.iter_mut() {
                    let xi: f64 = rng.sample(StandardNormal);
                    *n += xi;
                }
            }
            let s = sigma / (v.len() as f64).sqrt() * inv;
            for (vi, n) in v.iter_mut().zip(&noise) {
                *vi += s * n;
            }
            Ok(v)
        }
        NoiseModel::Subsampling { .. } => {
            let Smooth::Logistic(shard) = obj.smooth() else {
                unreachable!("checked at construction");
            };
            let n = shard.len();
            let mut v = vec![0.0; obj.dim()];
            for _ in 0..batch {
                let j = rng.random_range(0..n);
                let (row, y) = (&shard.rows()[j], shard.labels()[j]);
                let t = -y * row.dot(x);
                let s = 1.0 / (1.0 + (-t).exp());
                row.axpy_into(-y * s * n as f64, &mut v);
            }
            crate::linalg::scale(inv, &mut v);
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{quadratic_objective, FeasibleSet};

    fn oracle(sigma: f64) -> StochasticOracle {
        let obj = quadratic_objective(vec![1.0, 2.0, 0.5], vec![0.1, -0.2, 0.3], 0.0, FeasibleSet::Free).unwrap();
        StochasticOracle::new(Arc::new(obj), NoiseModel::AdditiveGaussian { sigma }, 17, 0).unwrap()
    }

    #[test]
    fn zero_noise_is_exact_gradient() {
        let o = oracle(0.0);
        let x = [0.3, -1.0, 2.0];
        let mut c = EvalCounters::default();
        let v = stoch_grad(&o, &x, 7, &mut o.stream(1), &mut c).unwrap();
        assert_eq!(v, o.objective().gradient(&x));
        assert_eq!(c.samples, 7);
        assert_eq!(c.gradients, 0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let o = oracle(1.0);
        let x = [0.0; 3];
        let mut c = EvalCounters::default();
        let a = stoch_grad(&o, &x, 3, &mut o.stream(2), &mut c).unwrap();
        let b = stoch_grad(&o, &x, 3, &mut o.stream(2), &mut c).unwrap();
        let other = stoch_grad(&o, &x, 3, &mut o.stream(3), &mut c).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn zero_batch_rejected() {
        let o = oracle(1.0);
        let mut c = EvalCounters::default();
        assert!(stoch_grad(&o, &[0.0; 3], 0, &mut o.stream(1), &mut c).is_err());
    }

    #[test]
    fn subsampling_needs_data() {
        let obj = quadratic_objective(vec![1.0], vec![0.0], 0.0, FeasibleSet::Free).unwrap();
        assert!(StochasticOracle::new(Arc::new(obj), NoiseModel::Subsampling { sigma: 1.0 }, 0, 0).is_err());
    }
}
