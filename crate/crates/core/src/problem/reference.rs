use super::LocalObjective;
use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2};

/// Iteration cap for [`centralized_solve`].
pub const CENTRAL_MAX_ITERS: usize = 500_000;

#[derive(Debug, Clone)]
pub struct CentralSolution {
    /// Common minimizer `x*` of `Σ_i f_i` over `X`.
    pub x: Vec<f64>,
    /// `Σ_i f_i(x*)`
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes `F(x) = Σ_i f_i(x)` over the shared feasible set by accelerated
/// projected gradient with gradient-based restarts, stopping once the
/// gradient-mapping norm drops below `tol`.
pub fn centralized_solve(objs: &[LocalObjective], tol: f64) -> Result<CentralSolution> {
    let first = objs
        .first()
        .ok_or_else(|| Error::InvalidArgument("centralized solve needs objectives".into()))?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let d = first.dim();
    for o in objs {
        if o.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "centralized objective dimension",
                expected: d,
                got: o.dim(),
            });
        }
        if o.set() != first.set() {
            return Err(Error::InvalidArgument("objectives must share one feasible set".into()));
        }
    }
    let set = first.set();
    let lip: f64 = objs.iter().map(|o| o.lipschitz() + o.mu()).sum();
    if lip == 0.0 {
        // F is affine-free constant zero curvature: only possible for zero quadratics
        let mut x = vec![0.0; d];
        set.project(&mut x);
        let value = objs.iter().map(|o| o.value(&x)).sum();
        return Ok(CentralSolution { x, value, iterations: 0 });
    }
    let step = 1.0 / lip;
    let full_grad = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; d];
        for o in objs {
            for ((gi, oi), xi) in g.iter_mut().zip(o.gradient(x)).zip(x) {
                *gi += oi + o.mu() * xi;
            }
        }
        g
    };

    let mut x = vec![0.0; d];
    set.project(&mut x);
    let mut y = x.clone();
    let mut theta = 1.0f64;
    for it in 0..CENTRAL_MAX_ITERS {
        let g = full_grad(&y);
        let mut x_new: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        set.project(&mut x_new);
        let mapping = dist2(&y, &x_new) * lip;
        if mapping < tol {
            // confirm at the plain iterate as well
            let gx = full_grad(&x_new);
            let mut px: Vec<f64> = x_new.iter().zip(&gx).map(|(a, b)| a - step * b).collect();
            set.project(&mut px);
            if dist2(&x_new, &px) * lip < tol {
                let value = objs.iter().map(|o| o.value(&px)).sum();
                return Ok(CentralSolution {
                    x: px,
                    value,
                    iterations: it + 1,
                });
            }
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_next;
        // restart when the step direction opposes the momentum
        let restart = y
            .iter()
            .zip(&x_new)
            .zip(&x)
            .map(|((yi, xn), xo)| (yi - xn) * (xn - xo))
            .sum::<f64>()
            > 0.0;
        if restart {
            theta = 1.0;
            y.clone_from(&x_new);
        } else {
            theta = theta_next;
            for ((yi, xn), xo) in y.iter_mut().zip(&x_new).zip(&x) {
                *yi = xn + momentum * (xn - xo);
            }
        }
        x = x_new;
        if !x.iter().all(|v| v.is_finite()) || !norm2(&x).is_finite() {
            return Err(Error::NonFinite("centralized solve iterate"));
        }
    }
    Err(Error::IterationCap(CENTRAL_MAX_ITERS))
}
