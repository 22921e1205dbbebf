//! Data, parameters, likelihood and the log-squared-residual transform of
//! the heteroskedastic probit model
//! `P(Y = 1 | x) = Φ(x'β exp(-g(x)/2))`, `β = (θ', 1)'`.

use crate::distributions::{log_norm_cdf, norm_cdf, RngStream};
use crate::error::{Error, Result};

/// Covariates and binary outcomes.
///
/// Columns are stored with the normalized covariate (coefficient fixed to 1)
/// moved to the last position; `column_names` follows that internal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    y: Vec<bool>,
    column_names: Vec<String>,
    /// `original_index[j]` is the input position of internal column `j`.
    original_index: Vec<usize>,
}

impl Dataset {
    /// Build from rows in input column order. `normalized_column` indexes
    /// `column_names`.
    pub fn new(
        rows: Vec<Vec<f64>>,
        y: Vec<bool>,
        column_names: Vec<String>,
        normalized_column: usize,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no observations".into()));
        }
        if y.len() != n {
            return Err(Error::Validation(format!(
                "{} covariate rows but {} outcomes",
                n,
                y.len()
            )));
        }
        let d = column_names.len();
        if d < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 covariates, got {d}"
            )));
        }
        if normalized_column >= d {
            return Err(Error::Validation(format!(
                "normalized column index {normalized_column} out of range for {d} covariates"
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Validation(format!(
                    "row {i} has {} values, expected {d}",
                    r.len()
                )));
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "row {i} has non-finite covariate {v}"
                )));
            }
        }
        let mut original_index: Vec<usize> = (0..d).filter(|&j| j != normalized_column).collect();
        original_index.push(normalized_column);
        let rows = rows
            .into_iter()
            .map(|r| original_index.iter().map(|&j| r[j]).collect())
            .collect();
        let column_names = original_index
            .iter()
            .map(|&j| column_names[j].clone())
            .collect();
        Ok(Dataset {
            rows,
            y,
            column_names,
            original_index,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of covariates `d_x`.
    pub fn dim(&self) -> usize {
        self.column_names.len()
    }

    /// Covariate row `i` in internal order.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    /// Names in internal order; the last one is the normalized covariate.
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Names of the free coefficients θ.
    pub fn theta_names(&self) -> &[String] {
        &self.column_names[..self.dim() - 1]
    }

    pub fn normalized_name(&self) -> &str {
        &self.column_names[self.dim() - 1]
    }

    /// Internal index of a column given by name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Reorder a point given in input column order into internal order.
    pub fn to_internal(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim() {
            return Err(Error::Validation(format!(
                "point has {} coordinates, data has {} covariates",
                point.len(),
                self.dim()
            )));
        }
        Ok(self.original_index.iter().map(|&j| point[j]).collect())
    }

    /// Reorder an internal-order point back to input column order.
    pub fn to_original(&self, point: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; point.len()];
        for (internal, &orig) in self.original_index.iter().enumerate() {
            out[orig] = point[internal];
        }
        out
    }

    /// Column names in input order.
    pub fn original_column_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim()];
        for (internal, &orig) in self.original_index.iter().enumerate() {
            names[orig] = self.column_names[internal].clone();
        }
        names
    }

    /// Input position of the normalized column.
    pub fn normalized_original_index(&self) -> usize {
        self.original_index[self.dim() - 1]
    }

    /// Same covariates with new outcomes.
    pub fn with_outcomes(&self, y: Vec<bool>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::Validation(format!(
                "{} outcomes for {} observations",
                y.len(),
                self.n()
            )));
        }
        Ok(Dataset { y, ..self.clone() })
    }
}

/// Free index coefficients θ; the full vector is `β = (θ', 1)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub theta: Vec<f64>,
}

impl Coefficients {
    pub fn new(theta: Vec<f64>) -> Self {
        Coefficients { theta }
    }

    pub fn beta(&self) -> Vec<f64> {
        let mut b = self.theta.clone();
        b.push(1.0);
        b
    }

    /// `x'β` for an internal-order covariate vector.
    #[inline]
    pub fn index(&self, x: &[f64]) -> f64 {
        let d = self.theta.len();
        debug_assert_eq!(x.len(), d + 1);
        let mut v = x[d];
        for (xj, tj) in x[..d].iter().zip(&self.theta) {
            v += xj * tj;
        }
        v
    }
}

/// Log conditional variance at the design points and at prediction points.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSkedastic {
    pub g_at_design: Vec<f64>,
    pub g_at_star: Vec<f64>,
}

impl LogSkedastic {
    pub fn zeros(n: usize, m: usize) -> Self {
        LogSkedastic {
            g_at_design: vec![0.0; n],
            g_at_star: vec![0.0; m],
        }
    }
}

/// Full state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub coefficients: Coefficients,
    pub log_sked: LogSkedastic,
    /// Latent utilities; `z[i] >= 0` exactly when `y[i]` is true.
    pub z: Vec<f64>,
    /// Mixture component of each observation, 0-based.
    pub labels: Vec<usize>,
}

impl ChainState {
    /// Indices where the latent sign disagrees with the outcome.
    pub fn sign_violations(&self, data: &Dataset) -> Vec<usize> {
        self.z
            .iter()
            .zip(data.y())
            .enumerate()
            .filter(|(_, (&z, &y))| (z >= 0.0) != y)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Normal mixture `Σ_j ω_j N(μ_j, τ²_j)` standing in for the log χ²₁ law.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

// Ten-component approximation of log χ²₁ from Omori, Chib, Shephard and
// Nakajima (2007, J. Econometrics 140, Table 1): (p_j, m_j, v_j²).
const OMORI_WEIGHTS: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
const OMORI_MEANS: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65000,
];
const OMORI_VARIANCES: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

impl MixtureTable {
    /// The embedded ten-component table.
    pub fn log_chi2() -> Self {
        let table = MixtureTable {
            weights: OMORI_WEIGHTS.to_vec(),
            means: OMORI_MEANS.to_vec(),
            variances: OMORI_VARIANCES.to_vec(),
        };
        debug_assert!(table.check_invariants().is_ok());
        table
    }

    /// Custom table; weights are normalized to sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::domain(
                "mixture table needs equal, nonzero numbers of weights, means and variances",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain(
                "mixture weights must be finite and nonnegative",
            ));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("mixture variances must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("mixture means must be finite"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("mixture weights sum to zero"));
        }
        Ok(MixtureTable {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            variances,
        })
    }

    /// Weights sum to one and variances are positive.
    pub fn check_invariants(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::numerical(format!("mixture weights sum to {total}")));
        }
        if self.variances.iter().any(|v| *v <= 0.0) {
            return Err(Error::numerical("mixture has a nonpositive variance"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture CDF at `t`.
    pub fn cdf(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * norm_cdf((t - m) / v.sqrt()))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * (v + (m - mu) * (m - mu)))
            .sum()
    }
}

fn check_point(x: &[f64], coefficients: &Coefficients) -> Result<()> {
    if x.len() != coefficients.theta.len() + 1 {
        return Err(Error::domain(format!(
            "covariate vector has {} entries, coefficients imply {}",
            x.len(),
            coefficients.theta.len() + 1
        )));
    }
    Ok(())
}

/// `Φ(x'β exp(-g/2))`.
pub fn choice_probability(x: &[f64], coefficients: &Coefficients, g_at_x: f64) -> Result<f64> {
    check_point(x, coefficients)?;
    if x.iter().chain(&coefficients.theta).any(|v| !v.is_finite()) || !g_at_x.is_finite() {
        return Err(Error::domain("choice probability needs finite inputs"));
    }
    Ok(norm_cdf(scaled_index(coefficients.index(x), g_at_x)))
}

#[inline]
pub(crate) fn scaled_index(index: f64, g: f64) -> f64 {
    if index == 0.0 {
        0.0
    } else {
        index * (-0.5 * g).exp()
    }
}

/// Bernoulli log-likelihood of the outcomes given (θ, g at the design points).
pub fn log_likelihood(
    data: &Dataset,
    coefficients: &Coefficients,
    log_sked: &LogSkedastic,
) -> Result<f64> {
    if log_sked.g_at_design.len() != data.n() {
        return Err(Error::domain(format!(
            "g has {} design values for {} observations",
            log_sked.g_at_design.len(),
            data.n()
        )));
    }
    if coefficients.theta.len() + 1 != data.dim() {
        return Err(Error::domain(
            "coefficient dimension does not match the data",
        ));
    }
    Ok(data
        .rows()
        .iter()
        .zip(data.y())
        .zip(&log_sked.g_at_design)
        .map(|((x, &y), &g)| {
            let v = scaled_index(coefficients.index(x), g);
            if y {
                log_norm_cdf(v)
            } else {
                log_norm_cdf(-v)
            }
        })
        .sum())
}

/// Floor on the squared residual inside [`transform_t`].
pub const RESIDUAL_FLOOR: f64 = 1e-50;

/// `log((z - x'β)²)` with the squared residual floored at [`RESIDUAL_FLOOR`].
pub fn transform_t(z: f64, x: &[f64], coefficients: &Coefficients) -> f64 {
    log_sq_residual(z - coefficients.index(x))
}

#[inline]
pub(crate) fn log_sq_residual(e: f64) -> f64 {
    (e * e).max(RESIDUAL_FLOOR).ln()
}

/// Sup-distance between the mixture CDF and the empirical CDF of `draws`
/// simulated values of `log W²`, `W ~ N(0, 1)`.
pub fn mixture_logchisq_density_check(
    table: &MixtureTable,
    rng: &mut RngStream,
    draws: usize,
) -> f64 {
    let mut sample: Vec<f64> = (0..draws)
        .map(|_| {
            let w = rng.std_normal();
            log_sq_residual(w)
        })
        .collect();
    sample.sort_by(|a, b| a.total_cmp(b));
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = table.cdf(t);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}
