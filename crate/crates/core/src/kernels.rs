//! Matérn covariance, Gram matrices with jitter, and cross-covariances
//! between design points and prediction points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::bessel::bessel_k;
use crate::error::{Error, Result};

/// Matérn kernel hyperparameters. Unit marginal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub alpha: f64,
    pub length_scale: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, length_scale: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!(
                "kernel alpha must be positive, got {alpha}"
            )));
        }
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(Error::domain(format!(
                "kernel length_scale must be positive, got {length_scale}"
            )));
        }
        Ok(KernelSpec {
            alpha,
            length_scale,
        })
    }

    /// Covariance as a function of Euclidean distance.
    pub fn at_distance(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 1.0;
        }
        let scaled = r / self.length_scale;
        if self.alpha == 0.5 {
            return (-scaled).exp();
        }
        if self.alpha == 1.5 {
            let z = 3f64.sqrt() * scaled;
            return (1.0 + z) * (-z).exp();
        }
        if self.alpha == 2.5 {
            let z = 5f64.sqrt() * scaled;
            return (1.0 + z + z * z / 3.0) * (-z).exp();
        }
        if self.alpha == 3.5 {
            let z = 7f64.sqrt() * scaled;
            return (1.0 + z + 0.4 * z * z + z * z * z / 15.0) * (-z).exp();
        }
        matern_bessel(self.alpha, scaled)
    }
}

/// General-order Matérn correlation at scaled distance `s = r / l`:
/// `2^{1-α}/Γ(α) z^α K_α(z)` with `z = sqrt(2α) s`.
pub fn matern_bessel(alpha: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    let z = (2.0 * alpha).sqrt() * s;
    if z > 700.0 {
        return 0.0;
    }
    let k = match bessel_k(alpha, z) {
        Ok(k) => k,
        Err(_) => return 0.0,
    };
    if k == 0.0 {
        return 0.0;
    }
    // Log space keeps z^α and K_α(z) from over/underflowing separately.
    let log_val =
        (1.0 - alpha) * std::f64::consts::LN_2 - libm::lgamma(alpha) + alpha * z.ln() + k.ln();
    log_val.exp().min(1.0)
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Matérn covariance between two points.
pub fn matern(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::domain(format!(
            "kernel inputs have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("kernel inputs must be finite"));
    }
    Ok(spec.at_distance(distance(x, y)))
}

/// Diagonal jitter escalation for Gram factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterPolicy {
    pub ladder: Vec<f64>,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            ladder: vec![1e-10, 1e-8, 1e-6],
        }
    }
}

/// A symmetric positive definite matrix together with its Cholesky factor.
/// `values` already include `jitter_applied` on the diagonal.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub jitter_applied: f64,
    chol: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    /// Factor `base + j I` for the smallest `j` on the ladder that succeeds.
    pub fn factor(base: DMatrix<f64>, policy: &JitterPolicy) -> Result<Self> {
        let n = base.nrows();
        if n == 0 || n != base.ncols() {
            return Err(Error::domain(format!(
                "cannot factor a {}x{} matrix",
                n,
                base.ncols()
            )));
        }
        for &jitter in &policy.ladder {
            let mut values = base.clone();
            for i in 0..n {
                values[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(values.clone()) {
                return Ok(GramMatrix {
                    values,
                    jitter_applied: jitter,
                    chol,
                });
            }
        }
        let max_jitter = policy.ladder.last().copied().unwrap_or(0.0);
        Err(Error::numerical(format!(
            "{n}x{n} covariance matrix is not positive definite even with jitter {max_jitter:e}"
        )))
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

/// Pairwise covariances without jitter.
pub fn gram_values(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::domain("Gram matrix needs at least one point"));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::domain(format!(
            "points have dimensions {} and {}",
            d,
            p.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("kernel inputs must be finite"));
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = spec.at_distance(distance(&points[i], &points[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `K_n` over `points`, jittered until it factors.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>], policy: &JitterPolicy) -> Result<GramMatrix> {
    GramMatrix::factor(gram_values(spec, points)?, policy)
}

/// Prior covariances involving one prediction point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCov {
    /// `κ(x*, x*)`.
    pub kappa_star: f64,
    /// `(κ(x_1, x*), ..., κ(x_n, x*))`.
    pub kappa_n_star: DVector<f64>,
}

pub fn cross_cov(spec: &KernelSpec, points: &[Vec<f64>], x_star: &[f64]) -> Result<PredictionCov> {
    let mut kappa_n_star = DVector::zeros(points.len());
    for (i, p) in points.iter().enumerate() {
        kappa_n_star[i] = matern(spec, p, x_star)?;
    }
    Ok(PredictionCov {
        kappa_star: matern(spec, x_star, x_star)?,
        kappa_n_star,
    })
}

/// `n x m` matrix of covariances between design points and prediction points.
pub fn cross_cov_matrix(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    stars: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(points.len(), stars.len());
    for (j, s) in stars.iter().enumerate() {
        for (i, p) in points.iter().enumerate() {
            out[(i, j)] = matern(spec, p, s)?;
        }
    }
    Ok(out)
}
