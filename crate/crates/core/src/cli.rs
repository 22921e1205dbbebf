//! Subcommand implementations behind the `hetprobit` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{PointsSource, RunConfig};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::gibbs::{run_chain_with, PosteriorDraws};
use crate::io::{create, fmt_num, parse_inline_points, read_dataset, read_points, write_dataset};
use crate::model::{Dataset, MixtureTable};
use crate::posterior::{
    effective_sample_size, mean_sd, median_and_interval, predictive_prob_draws, summarize, Summary,
};
use crate::simstudy::{generate_dgp, run_study_with_progress, DgpSpec, StudyConfig, StudyResult};

/// Per-point result of `predict`, coordinates in input column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub point: Vec<f64>,
    pub probability: f64,
    pub decision: u8,
    /// Equitailed band of the per-draw choice probability.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub data: Dataset,
    pub draws: PosteriorDraws,
    pub summary: Summary,
    pub predictions: Vec<Prediction>,
    pub files: Vec<PathBuf>,
}

struct Inputs {
    data: Dataset,
    /// Prediction points in internal column order.
    points: Vec<Vec<f64>>,
    grouping: Option<Vec<usize>>,
}

fn load(config: &RunConfig) -> Result<Inputs> {
    let data = read_dataset(&config.data_path, config.normalized_column.as_deref())?;
    let points = match &config.prediction_points {
        None => Vec::new(),
        Some(PointsSource::Inline(text)) => parse_inline_points(text, data.dim())?,
        Some(PointsSource::File(path)) => read_points(path, &data)?,
    };
    let internal = points
        .iter()
        .map(|p| data.to_internal(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = config.g_indices.iter().find(|&&i| i > data.n()) {
        return Err(Error::Validation(format!(
            "g index {bad} exceeds the number of observations {}",
            data.n()
        )));
    }
    let grouping = if config.group_by.is_empty() {
        None
    } else {
        Some(
            config
                .group_by
                .iter()
                .map(|name| {
                    data.column_index(name).ok_or_else(|| {
                        Error::Validation(format!("group_by column '{name}' is not a covariate"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok(Inputs {
        data,
        points: internal,
        grouping,
    })
}

/// Run the chain, stream `draws.csv`, write `summary.csv` and
/// `diagnostics.csv`, plus `predictions.csv` when points are given.
pub fn fit(config: &RunConfig) -> Result<FitOutput> {
    let Inputs {
        data,
        points,
        grouping,
    } = load(config)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| {
        Error::Validation(format!(
            "cannot create {}: {e}",
            config.output_dir.display()
        ))
    })?;
    let gibbs = crate::gibbs::GibbsConfig {
        prediction_points: points.clone(),
        grouping,
        store_g: false,
        ..config.gibbs.clone()
    };

    let draws_path = config.output_dir.join("draws.csv");
    let mut out = create(&draws_path)?;
    let mut header: Vec<String> = vec!["iteration".into()];
    header.extend(data.theta_names().iter().map(|n| format!("theta.{n}")));
    header.push("log_likelihood".into());
    header.extend(config.g_indices.iter().map(|i| format!("g.{i}")));
    header.extend((1..=points.len()).map(|k| format!("g_star.{k}")));
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    let draws = run_chain_with(
        &data,
        &config.kernel,
        &gibbs,
        &MixtureTable::log_chi2(),
        |s, state| {
            line.clear();
            line.push_str(&s.to_string());
            let ll = crate::model::log_likelihood(&data, &state.coefficients, &state.log_sked)?;
            let vals = state
                .coefficients
                .theta
                .iter()
                .copied()
                .chain(std::iter::once(ll))
                .chain(
                    config
                        .g_indices
                        .iter()
                        .map(|&i| state.log_sked.g_at_design[i - 1]),
                )
                .chain(state.log_sked.g_at_star.iter().copied());
            for v in vals {
                line.push(',');
                line.push_str(&fmt_num(v));
            }
            writeln!(out, "{line}")?;
            Ok(())
        },
    )?;
    out.flush()?;

    let summary = summarize(&draws, config.level)?;
    let mut predictions = Vec::with_capacity(points.len());
    for (k, point) in points.iter().enumerate() {
        let p = predictive_prob_draws(&draws, k)?;
        let (_, band) = median_and_interval(&p, config.level)?;
        predictions.push(Prediction {
            point: data.to_original(point),
            probability: summary.predictive_probs[k],
            decision: summary.decisions[k],
            lower: band.lower,
            upper: band.upper,
        });
    }

    let mut files = vec![draws_path];
    files.push(write_summary(
        &config.output_dir,
        config,
        &data,
        &draws,
        &summary,
    )?);
    files.push(write_diagnostics(&config.output_dir, &draws)?);
    if !points.is_empty() {
        files.push(write_predictions(&config.output_dir, &data, &predictions)?);
    }
    Ok(FitOutput {
        data,
        draws,
        summary,
        predictions,
        files,
    })
}

fn write_summary(
    dir: &Path,
    config: &RunConfig,
    data: &Dataset,
    draws: &PosteriorDraws,
    s: &Summary,
) -> Result<PathBuf> {
    let path = dir.join("summary.csv");
    let mut out = create(&path)?;
    writeln!(out, "key,value")?;
    let mut kv = |k: String, v: String| writeln!(out, "{k},{v}");
    kv("n".into(), data.n().to_string())?;
    kv(
        "normalized_column".into(),
        data.normalized_name().to_string(),
    )?;
    kv("alpha".into(), fmt_num(config.kernel.alpha))?;
    kv("length_scale".into(), fmt_num(config.kernel.length_scale))?;
    kv("iterations".into(), config.gibbs.iterations.to_string())?;
    kv("burn_in".into(), config.gibbs.burn_in.to_string())?;
    kv("thin".into(), config.gibbs.thin.to_string())?;
    kv("seed".into(), config.gibbs.seed.to_string())?;
    kv("retained".into(), draws.retained.to_string())?;
    kv("level".into(), fmt_num(config.level))?;
    for (j, name) in s.theta_names.iter().enumerate() {
        let (mean, sd) = mean_sd(&draws.theta_series(j));
        kv(format!("theta.{name}.median"), fmt_num(s.theta_medians[j]))?;
        kv(
            format!("theta.{name}.lower"),
            fmt_num(s.theta_intervals[j].lower),
        )?;
        kv(
            format!("theta.{name}.upper"),
            fmt_num(s.theta_intervals[j].upper),
        )?;
        kv(format!("theta.{name}.mean"), fmt_num(mean))?;
        kv(format!("theta.{name}.sd"), fmt_num(sd))?;
        kv(format!("theta.{name}.ess"), fmt_num(s.ess[j]))?;
    }
    for (k, (p, d)) in s.predictive_probs.iter().zip(&s.decisions).enumerate() {
        kv(format!("predictive.{}.probability", k + 1), fmt_num(*p))?;
        kv(format!("predictive.{}.decision", k + 1), d.to_string())?;
    }
    out.flush()?;
    Ok(path)
}

fn lag1(series: &[f64]) -> f64 {
    let (m, sd) = mean_sd(series);
    if sd == 0.0 || series.len() < 2 {
        return 0.0;
    }
    let c1: f64 = series.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let c0: f64 = series.iter().map(|v| (v - m).powi(2)).sum();
    c1 / c0
}

fn write_diagnostics(dir: &Path, draws: &PosteriorDraws) -> Result<PathBuf> {
    let path = dir.join("diagnostics.csv");
    let mut out = create(&path)?;
    writeln!(out, "parameter,mean,sd,ess,lag1_autocorrelation")?;
    let mut series: Vec<(String, Vec<f64>)> = draws
        .theta_names
        .iter()
        .enumerate()
        .map(|(j, n)| (format!("theta.{n}"), draws.theta_series(j)))
        .collect();
    series.push(("log_likelihood".into(), draws.log_likelihood.clone()));
    for k in 0..draws.prediction_points.len() {
        series.push((format!("g_star.{}", k + 1), draws.g_star_series(k)));
    }
    for (name, s) in series {
        let (mean, sd) = mean_sd(&s);
        let ess = if s.len() >= 10 {
            effective_sample_size(&s)?
        } else {
            f64::NAN
        };
        writeln!(
            out,
            "{name},{},{},{},{}",
            fmt_num(mean),
            fmt_num(sd),
            fmt_num(ess),
            fmt_num(lag1(&s))
        )?;
    }
    out.flush()?;
    Ok(path)
}

fn write_predictions(dir: &Path, data: &Dataset, preds: &[Prediction]) -> Result<PathBuf> {
    let path = dir.join("predictions.csv");
    let mut out = create(&path)?;
    writeln!(
        out,
        "point,{},probability,decision,probability_lower,probability_upper",
        data.original_column_names().join(",")
    )?;
    for (k, p) in preds.iter().enumerate() {
        let coords: Vec<String> = p.point.iter().map(|v| fmt_num(*v)).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            k + 1,
            coords.join(","),
            fmt_num(p.probability),
            p.decision,
            fmt_num(p.lower),
            fmt_num(p.upper)
        )?;
    }
    out.flush()?;
    Ok(path)
}

/// Human-readable summary table.
pub fn render_summary(out: &FitOutput, level: f64) -> String {
    let mut s = format!(
        "n = {}, normalized column = {}, retained draws = {}\n\n{:<16} {:>12} {:>12} {:>12} {:>10}\n",
        out.data.n(),
        out.data.normalized_name(),
        out.draws.retained,
        "coefficient",
        "median",
        format!("{:.1}% lo", 100.0 * (1.0 - level) / 2.0),
        format!("{:.1}% hi", 100.0 * (1.0 + level) / 2.0),
        "ess"
    );
    for (j, name) in out.summary.theta_names.iter().enumerate() {
        let ci = out.summary.theta_intervals[j];
        s.push_str(&format!(
            "{:<16} {:>12.6} {:>12.6} {:>12.6} {:>10.1}\n",
            name, out.summary.theta_medians[j], ci.lower, ci.upper, out.summary.ess[j]
        ));
    }
    if !out.predictions.is_empty() {
        s.push_str(&format!(
            "\n{:<6} {:>12} {:>9}  {}\n",
            "point",
            "probability",
            "decision",
            out.data.original_column_names().join(", ")
        ));
        for (k, p) in out.predictions.iter().enumerate() {
            s.push_str(&format!(
                "{:<6} {:>12.6} {:>9}  {:?}\n",
                k + 1,
                p.probability,
                p.decision,
                p.point
            ));
        }
    }
    s
}

/// Simulate a dataset from the study design and write it.
pub fn simulate(spec: &DgpSpec, out: &Path) -> Result<Dataset> {
    let data = generate_dgp(spec, &mut RngStream::new(spec.seed, 0))?;
    write_dataset(out, &data)?;
    Ok(data)
}

pub const STUDY_HEADER: &str =
    "alpha,n,mse,mse_se,coverage,coverage_se,avg_length,avg_length_se,replications,failures,status";

/// Write the study table. Returns an error after writing when any
/// replication failed.
pub fn write_study(path: &Path, result: &StudyResult) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{STUDY_HEADER}")?;
    let status = if result.is_complete() {
        "complete"
    } else {
        "partial"
    };
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{status}",
            fmt_num(r.alpha),
            result.n,
            fmt_num(r.mse),
            fmt_num(r.mse_se),
            fmt_num(r.coverage),
            fmt_num(r.coverage_se),
            fmt_num(r.avg_length),
            fmt_num(r.avg_length_se),
            r.replications,
            r.failures
        )?;
    }
    out.flush()?;
    if !result.is_complete() {
        let (r, a, msg) = &result.failures[0];
        return Err(Error::Numerical(format!(
            "{} fit(s) failed, table marked partial; first: replication {r}, alpha {a}: {msg}",
            result.failures.len()
        )));
    }
    Ok(())
}

pub fn replicate_study(config: &StudyConfig, out: &Path, verbose: bool) -> Result<StudyResult> {
    let done = std::sync::atomic::AtomicUsize::new(0);
    let total = config.replications;
    let result = run_study_with_progress(config, |_| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if verbose {
            eprintln!("replication {k}/{total} done");
        }
    })?;
    write_study(out, &result)?;
    Ok(result)
}

pub fn render_study(result: &StudyResult) -> String {
    let mut s = format!(
        "n = {}\n{:>6} {:>10} {:>10} {:>10} {:>6} {:>8}\n",
        result.n, "alpha", "mse", "coverage", "length", "reps", "failed"
    );
    for r in &result.rows {
        s.push_str(&format!(
            "{:>6} {:>10.4} {:>9.1}% {:>10.4} {:>6} {:>8}\n",
            r.alpha,
            r.mse,
            100.0 * r.coverage,
            r.avg_length,
            r.replications,
            r.failures
        ));
    }
    s
}
