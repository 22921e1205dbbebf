//! Monte Carlo study on the two-covariate design
//! `Y = 1{X1 + θ X2 >= U}`, `U = 0.25 (1 + 2s² + s⁴) V`, `s = X1 + X2`,
//! with `X1 ~ N(0,1)`, `X2 ~ N(1,1)` and `V` logistic with median 0 and
//! variance 1. The coefficient on `x1` is normalized to one and θ is the
//! coefficient on `x2`.

use rayon::prelude::*;

use crate::distributions::{sample_logistic, RngStream};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, GibbsConfig};
use crate::kernels::KernelSpec;
use crate::model::{Dataset, MixtureTable};
use crate::posterior::median_and_interval;

/// Stream ids per replication: data on `r * STREAMS_PER_REPLICATION`, the
/// chain for the k-th α on `r * STREAMS_PER_REPLICATION + 1 + k`.
pub const STREAMS_PER_REPLICATION: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub theta_true: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(n: usize, theta_true: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("sample size must be at least 1".into()));
        }
        if !theta_true.is_finite() {
            return Err(Error::Validation("theta must be finite".into()));
        }
        Ok(DgpSpec {
            n,
            theta_true,
            seed,
        })
    }

    /// Dataset drawn from stream 0 of `seed`.
    pub fn dataset(&self) -> Result<Dataset> {
        generate_dgp(self, &mut RngStream::new(self.seed, 0))
    }
}

/// `0.25 (1 + 2s² + s⁴)` at `s = x1 + x2`.
pub fn skedastic_factor(s: f64) -> f64 {
    let s2 = s * s;
    0.25 * (1.0 + 2.0 * s2 + s2 * s2)
}

/// One row `(x1, x2, u)` of the design.
pub fn draw_design_row(rng: &mut RngStream) -> Result<(f64, f64, f64)> {
    let x1 = rng.std_normal();
    let x2 = 1.0 + rng.std_normal();
    let u = skedastic_factor(x1 + x2) * sample_logistic(rng, 0.0, 1.0)?;
    Ok((x1, x2, u))
}

/// Columns `x1, x2`, `x1` normalized.
pub fn generate_dgp(spec: &DgpSpec, rng: &mut RngStream) -> Result<Dataset> {
    let mut rows = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (x1, x2, u) = draw_design_row(rng)?;
        rows.push(vec![x1, x2]);
        y.push(x1 + spec.theta_true * x2 >= u);
    }
    Dataset::new(rows, y, vec!["x1".into(), "x2".into()], 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub replications: usize,
    pub theta_true: f64,
    pub length_scale: f64,
    pub level: f64,
    /// Iterations, burn-in, thinning and base seed of every chain.
    pub gibbs: GibbsConfig,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("sample size must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Validation("replications must be at least 1".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Validation("at least one alpha is required".into()));
        }
        for &a in &self.alphas {
            KernelSpec::new(a, self.length_scale)?;
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Validation(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        self.gibbs.validate()
    }
}

/// What one fit contributes to the study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationOutcome {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub alpha: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub avg_length: f64,
    pub avg_length_se: f64,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub n: usize,
    pub rows: Vec<StudyRow>,
    /// `(replication, alpha, message)` for every failed fit.
    pub failures: Vec<(usize, f64, String)>,
}

impl StudyResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn fit_one(
    data: &Dataset,
    config: &StudyConfig,
    alpha: f64,
    stream_id: u64,
) -> Result<ReplicationOutcome> {
    let spec = KernelSpec::new(alpha, config.length_scale)?;
    let gibbs = GibbsConfig {
        stream_id,
        store_g: false,
        prediction_points: Vec::new(),
        grouping: None,
        ..config.gibbs.clone()
    };
    let draws = run_chain(data, &spec, &gibbs, &MixtureTable::log_chi2())?;
    let (median, ci) = median_and_interval(&draws.theta_series(0), config.level)?;
    Ok(ReplicationOutcome {
        median,
        lower: ci.lower,
        upper: ci.upper,
    })
}

/// Outcomes of replication `r` for every α. All α see the same dataset.
pub fn run_replication(config: &StudyConfig, r: usize) -> Vec<Result<ReplicationOutcome>> {
    let base = r as u64 * STREAMS_PER_REPLICATION;
    let data = match DgpSpec::new(config.n, config.theta_true, config.gibbs.seed)
        .and_then(|spec| generate_dgp(&spec, &mut RngStream::new(config.gibbs.seed, base)))
    {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return config
                .alphas
                .iter()
                .map(|_| Err(Error::numerical(msg.clone())))
                .collect();
        }
    };
    config
        .alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| fit_one(&data, config, alpha, base + 1 + k as u64))
        .collect()
}

/// Aggregate outcomes for one α.
pub fn aggregate(
    alpha: f64,
    theta_true: f64,
    outcomes: &[ReplicationOutcome],
    failures: usize,
) -> StudyRow {
    let r = outcomes.len();
    let rf = r as f64;
    let sq: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.median - theta_true).powi(2))
        .collect();
    let cover: Vec<f64> = outcomes
        .iter()
        .map(|o| f64::from(u8::from(o.lower <= theta_true && theta_true <= o.upper)))
        .collect();
    let len: Vec<f64> = outcomes.iter().map(|o| o.upper - o.lower).collect();
    let mean = |v: &[f64]| {
        if r == 0 {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / rf
        }
    };
    let se = |v: &[f64]| {
        if r < 2 {
            return f64::NAN;
        }
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rf - 1.0) / rf).sqrt()
    };
    let coverage = mean(&cover);
    StudyRow {
        alpha,
        mse: mean(&sq),
        mse_se: se(&sq),
        coverage,
        coverage_se: if r == 0 {
            f64::NAN
        } else {
            (coverage * (1.0 - coverage) / rf).sqrt()
        },
        avg_length: mean(&len),
        avg_length_se: se(&len),
        replications: r,
        failures,
    }
}

/// Fit every replication under every α and aggregate. Replications run in
/// parallel; failed fits are counted and excluded.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    run_study_with_progress(config, |_| {})
}

/// As [`run_study`], calling `progress(r)` when replication `r` finishes.
pub fn run_study_with_progress<P>(config: &StudyConfig, progress: P) -> Result<StudyResult>
where
    P: Fn(usize) + Sync,
{
    config.validate()?;
    let per_rep: Vec<Vec<Result<ReplicationOutcome>>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let out = run_replication(config, r);
            progress(r);
            out
        })
        .collect();
    let mut rows = Vec::with_capacity(config.alphas.len());
    let mut failures = Vec::new();
    for (k, &alpha) in config.alphas.iter().enumerate() {
        let mut ok = Vec::with_capacity(config.replications);
        let mut failed = 0;
        for (r, outs) in per_rep.iter().enumerate() {
            match &outs[k] {
                Ok(o) => ok.push(*o),
                Err(e) => {
                    failed += 1;
                    failures.push((r, alpha, e.to_string()));
                }
            }
        }
        rows.push(aggregate(alpha, config.theta_true, &ok, failed));
    }
    Ok(StudyResult {
        n: config.n,
        rows,
        failures,
    })
}
