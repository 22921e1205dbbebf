//! Summaries of retained draws: medians, equitailed intervals, choice
//! probabilities, predictive probabilities, the Bayes decision and
//! effective sample sizes.

use crate::error::{Error, Result};
use crate::gibbs::PosteriorDraws;
use crate::model::{choice_probability, Coefficients, Dataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CredibleInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl CredibleInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub theta_names: Vec<String>,
    pub theta_medians: Vec<f64>,
    pub theta_intervals: Vec<CredibleInterval>,
    pub predictive_probs: Vec<f64>,
    pub decisions: Vec<u8>,
    pub ess: Vec<f64>,
}

/// Empirical quantile of `sorted` (ascending) with linear interpolation
/// between order statistics: `h = (n-1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("quantile level {p} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    let mut v = values.to_vec();
    sort(&mut v)?;
    quantile_sorted(&v, p)
}

fn sort(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::domain("sample contains NaN"));
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(())
}

/// Median and equitailed interval at `level` for one series.
pub fn median_and_interval(values: &[f64], level: f64) -> Result<(f64, CredibleInterval)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "credible level {level} outside (0, 1)"
        )));
    }
    let mut v = values.to_vec();
    sort(&mut v)?;
    let tail = 0.5 * (1.0 - level);
    Ok((
        quantile_sorted(&v, 0.5)?,
        CredibleInterval {
            lower: quantile_sorted(&v, tail)?,
            upper: quantile_sorted(&v, 1.0 - tail)?,
            level,
        },
    ))
}

/// Coordinatewise posterior medians and equitailed intervals of θ.
pub fn summarize_theta(
    draws: &PosteriorDraws,
    level: f64,
) -> Result<(Vec<f64>, Vec<CredibleInterval>)> {
    if draws.thetas.is_empty() {
        return Err(Error::domain("no retained draws"));
    }
    let p = draws.thetas[0].len();
    let mut medians = Vec::with_capacity(p);
    let mut intervals = Vec::with_capacity(p);
    for j in 0..p {
        let (m, ci) = median_and_interval(&draws.theta_series(j), level)?;
        medians.push(m);
        intervals.push(ci);
    }
    Ok((medians, intervals))
}

/// Per-draw `Φ(x_*'β_s exp(-g_s(x_*)/2))` at prediction point `k`.
pub fn predictive_prob_draws(draws: &PosteriorDraws, k: usize) -> Result<Vec<f64>> {
    if k >= draws.prediction_points.len() {
        return Err(Error::domain(format!(
            "no g draws for prediction point {k} ({} points sampled)",
            draws.prediction_points.len()
        )));
    }
    if draws.g_star_draws.len() != draws.thetas.len() {
        return Err(Error::domain("g draws at prediction points are missing"));
    }
    let x = &draws.prediction_points[k];
    draws
        .thetas
        .iter()
        .zip(&draws.g_star_draws)
        .map(|(theta, gs)| choice_probability(x, &Coefficients::new(theta.clone()), gs[k]))
        .collect()
}

/// Posterior predictive probability at prediction point `k`.
pub fn posterior_predictive_at(draws: &PosteriorDraws, k: usize) -> Result<f64> {
    let p = predictive_prob_draws(draws, k)?;
    if p.is_empty() {
        return Err(Error::domain("no retained draws"));
    }
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

/// Posterior predictive probability at `x_star` (internal column order),
/// which must be one of the sampled prediction points.
pub fn posterior_predictive(draws: &PosteriorDraws, x_star: &[f64]) -> Result<f64> {
    let k = draws
        .prediction_points
        .iter()
        .position(|p| p.as_slice() == x_star)
        .ok_or_else(|| Error::domain(format!("no g draws were kept for the point {x_star:?}")))?;
    posterior_predictive_at(draws, k)
}

/// 1 when `prob >= 1/2`, else 0.
pub fn bayes_decision(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}

/// Per-draw choice probability at design point `i` (0-based).
pub fn choice_prob_draws(draws: &PosteriorDraws, data: &Dataset, i: usize) -> Result<Vec<f64>> {
    if i >= data.n() {
        return Err(Error::domain(format!(
            "observation index {i} out of range (n = {})",
            data.n()
        )));
    }
    if draws.g_draws.len() != draws.thetas.len() {
        return Err(Error::domain("g draws at design points were not stored"));
    }
    let x = data.row(i);
    draws
        .thetas
        .iter()
        .zip(&draws.g_draws)
        .map(|(theta, g)| choice_probability(x, &Coefficients::new(theta.clone()), g[i]))
        .collect()
}

/// Effective sample size by the initial monotone sequence estimator.
/// Constant series and series whose estimate exceeds their length report
/// their length.
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::domain(format!(
            "ESS needs at least 10 values, got {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("ESS of a non-finite series"));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| {
        dev[..n - k]
            .iter()
            .zip(&dev[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nf
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Ok(nf);
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = 2.0 * sum - 1.0;
    if tau <= 1.0 {
        return Ok(nf);
    }
    Ok(nf / tau)
}

/// Full summary: θ medians, intervals and ESS, plus predictive
/// probabilities and decisions at every prediction point.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<Summary> {
    let (theta_medians, theta_intervals) = summarize_theta(draws, level)?;
    let mut ess = Vec::with_capacity(theta_medians.len());
    for j in 0..theta_medians.len() {
        let s = draws.theta_series(j);
        ess.push(if s.len() >= 10 {
            effective_sample_size(&s)?
        } else {
            f64::NAN
        });
    }
    let predictive_probs = (0..draws.prediction_points.len())
        .map(|k| posterior_predictive_at(draws, k))
        .collect::<Result<Vec<_>>>()?;
    let decisions = predictive_probs
        .iter()
        .map(|&p| bayes_decision(p))
        .collect();
    Ok(Summary {
        theta_names: draws.theta_names.clone(),
        theta_medians,
        theta_intervals,
        predictive_probs,
        decisions,
        ess,
    })
}

/// Sample mean and standard deviation (divisor `n - 1`).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
