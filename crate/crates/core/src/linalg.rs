//! Slice-level vector helpers, the matrix-free [`LinearOperator`] abstraction
//! and a spectral-norm estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// A real linear map `R^cols -> R^rows` with its adjoint.
///
/// Implementations write into caller-provided buffers so the solvers can
/// reuse allocations across inner iterations.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint_into(&self, z: &[f64], out: &mut [f64]);
    /// Spectral norm `||A||_2` (cached or computed by the implementation).
    fn norm(&self) -> f64;

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out);
        out
    }

    fn apply_adjoint(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        self.apply_adjoint_into(z, &mut out);
        out
    }
}

/// Row-major dense matrix used for general coupling operators.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    norm: f64,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "dense operator data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("dense operator entries"));
        }
        let mut op = DenseOperator {
            rows,
            cols,
            data,
            norm: 0.0,
        };
        op.norm = match operator_norm(&op, NORM_TOL) {
            Ok(n) => n,
            Err(Error::NormNotConverged { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
        Ok(op)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::DimensionMismatch {
                context: "dense operator row",
                expected: c,
                got: bad.len(),
            });
        }
        Self::new(r, c, rows.concat())
    }

    /// The all-zero operator; useful for uncoupled (single agent) problems.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseOperator {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            norm: 0.0,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.cols..(i + 1) * self.cols], x);
        }
    }

    fn apply_adjoint_into(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, zi) in z.iter().enumerate() {
            axpy(*zi, &self.data[i * self.cols..(i + 1) * self.cols], out);
        }
    }

    fn norm(&self) -> f64 {
        self.norm
    }
}

/// Tolerance used when operators cache their own norm.
pub(crate) const NORM_TOL: f64 = 1e-13;

/// Largest Krylov subspace the norm estimator will build.
pub const MAX_KRYLOV_DIM: usize = 600;

/// Spectral norm of `op` as the square root of the top eigenvalue of `AᵀA`.
///
/// Runs Lanczos on `AᵀA` with full reorthogonalization, starting from a fixed
/// seeded vector, and stops once the top Ritz value changes by less than
/// `tol` (relative) on two consecutive steps, or the Krylov space becomes
/// invariant. Ritz values never exceed the true eigenvalue, so the estimate
/// approaches `||A||` from below.
pub fn operator_norm(op: &dyn LinearOperator, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "operator_norm tolerance must be positive, got {tol}"
        )));
    }
    let n = op.cols();
    if n == 0 || op.rows() == 0 {
        return Ok(0.0);
    }
    let cap = n.min(MAX_KRYLOV_DIM);

    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f_726d);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = norm2(&v);
    scale(1.0 / nv, &mut v);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cap);
    let mut alphas: Vec<f64> = Vec::with_capacity(cap);
    let mut betas: Vec<f64> = Vec::with_capacity(cap);
    let mut tmp = vec![0.0; op.rows()];
    let mut w = vec![0.0; n];
    let mut theta_prev = f64::NAN;
    let mut small_changes = 0;
    let mut theta = 0.0;

    for j in 0..cap {
        op.apply_into(&v, &mut tmp);
        op.apply_adjoint_into(&tmp, &mut w);
        let alpha = dot(&w, &v);
        axpy(-alpha, &v, &mut w);
        if let (Some(prev), Some(b)) = (basis.last(), betas.last()) {
            axpy(-b, prev, &mut w);
        }
        // two passes of Gram-Schmidt against everything seen so far
        for _ in 0..2 {
            for q in basis.iter().chain(std::iter::once(&v)) {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        alphas.push(alpha);
        basis.push(std::mem::take(&mut v));
        theta = tridiagonal_max_eigenvalue(&alphas, &betas).max(0.0);

        let beta = norm2(&w);
        let scale_ref = theta.abs().max(alpha.abs()).max(f64::MIN_POSITIVE);
        if beta <= 1e-13 * scale_ref || j + 1 == n {
            return Ok(theta.sqrt());
        }
        if theta_prev.is_finite() && (theta - theta_prev).abs() <= tol * theta.max(f64::MIN_POSITIVE) {
            small_changes += 1;
            if small_changes >= 2 {
                return Ok(theta.sqrt());
            }
        } else {
            small_changes = 0;
        }
        theta_prev = theta;
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }
    Err(Error::NormNotConverged {
        iterations: cap,
        estimate: theta.sqrt(),
    })
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off.len() == diag.len() - 1`), by Sturm
/// bisection.
pub(crate) fn tridiagonal_max_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    debug_assert!(off.len() + 1 >= n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    // number of eigenvalues strictly below x
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..n {
            let b2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
            d = diag[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
