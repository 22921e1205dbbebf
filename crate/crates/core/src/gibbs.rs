//! Four-block Gibbs sampler for the heteroskedastic probit model.
//!
//! One sweep updates, in order,
//!
//! 1. the latent utilities `Z_i` (truncated normals),
//! 2. the free coefficients θ (Gaussian weighted least squares),
//! 3. the mixture labels `A_i` of the log χ²₁ approximation,
//! 4. the log variances `g(x_1..x_n)` (Gaussian-process regression on
//!    `log((Z_i - x_i'β)²) - μ_{A_i}`),
//!
//! and, when prediction points are requested, a fifth block draws `g` at
//! those points from its GP conditional. With discrete covariates the
//! fourth block splits into independent per-group updates.
//!
//! Every conditional is sampled exactly. The GP block uses the
//! prior-draw-plus-correction form: with prior `N(m0, P)` and noise
//! `N(0, Σ)`, `f ~ N(m0, P)`, `e ~ N(0, Σ)` give
//! `f + P (P + Σ)⁻¹ (y - f - e) ~ N(m, V)` with
//! `m = Σ(P+Σ)⁻¹ m0 + P(P+Σ)⁻¹ y` and `V = P - P(P+Σ)⁻¹P`,
//! which needs one Cholesky of `P + Σ` per sweep and never factors `V`.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{
    categorical_index, psd_factor, sample_mvn_factored, sample_truncated_normal, RngStream,
    TruncationRegion,
};
use crate::error::{Error, Result};
use crate::kernels::{
    cross_cov_matrix, gram, gram_values, GramMatrix, JitterPolicy, KernelSpec, PredictionCov,
};
use crate::linalg::{cholesky_psd, lower_mul, symmetrize};
use crate::model::{
    log_likelihood, log_sq_residual, ChainState, Coefficients, Dataset, LogSkedastic, MixtureTable,
};

/// Prior on θ. The sampler ships with the flat prior; the Gaussian one
/// exists for joint-distribution testing and informative analyses.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ThetaPrior {
    #[default]
    Flat,
    Normal {
        mean: Vec<f64>,
        precision: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream_id: u64,
    /// Prediction points in the dataset's internal column order.
    pub prediction_points: Vec<Vec<f64>>,
    /// Internal indices of discrete covariates defining groups.
    pub grouping: Option<Vec<usize>>,
    /// Keep `g` at every design point for every retained draw.
    pub store_g: bool,
    pub theta_prior: ThetaPrior,
    pub jitter: JitterPolicy,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            stream_id: 0,
            prediction_points: Vec::new(),
            grouping: None,
            store_g: true,
            theta_prior: ThetaPrior::Flat,
            jitter: JitterPolicy::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Validation(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        if self.jitter.ladder.is_empty() {
            return Err(Error::Validation("jitter ladder is empty".into()));
        }
        Ok(())
    }

    /// `⌊(iterations - burn_in) / thin⌋`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub theta_names: Vec<String>,
    pub thetas: Vec<Vec<f64>>,
    /// `g` at the design points, one vector per retained draw (empty unless
    /// `store_g`).
    pub g_draws: Vec<Vec<f64>>,
    /// `g` at the prediction points, one vector per retained draw.
    pub g_star_draws: Vec<Vec<f64>>,
    /// Prediction points in internal column order.
    pub prediction_points: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    pub retained: usize,
}

impl PosteriorDraws {
    /// Trace of θ coordinate `j`.
    pub fn theta_series(&self, j: usize) -> Vec<f64> {
        self.thetas.iter().map(|t| t[j]).collect()
    }

    /// Trace of `g` at prediction point `k`.
    pub fn g_star_series(&self, k: usize) -> Vec<f64> {
        self.g_star_draws.iter().map(|g| g[k]).collect()
    }
}

/// `Z_i ~ N(x_i'β, exp(g(x_i)))` truncated to the side given by `Y_i`.
pub fn step1_update_latents(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
) -> Result<()> {
    let coef = &state.coefficients;
    for (i, x) in data.rows().iter().enumerate() {
        let mean = coef.index(x);
        let var = state.log_sked.g_at_design[i].exp();
        state.z[i] =
            sample_truncated_normal(rng, mean, var, TruncationRegion::for_outcome(data.y()[i]))?;
    }
    Ok(())
}

/// Precision and its lower factor for the θ conditional, plus the
/// right-hand side `b` so that the mean solves `M θ = b`.
struct ThetaSystem {
    lower: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn theta_system(data: &Dataset, state: &ChainState, prior: &ThetaPrior) -> Result<ThetaSystem> {
    let p = data.dim() - 1;
    let mut prec = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (i, x) in data.rows().iter().enumerate() {
        let w = (-state.log_sked.g_at_design[i]).exp();
        let target = state.z[i] - x[p];
        for a in 0..p {
            let wa = w * x[a];
            rhs[a] += wa * target;
            for b in 0..=a {
                prec[(a, b)] += wa * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            prec[(b, a)] = prec[(a, b)];
        }
    }
    if let ThetaPrior::Normal { mean, precision } = prior {
        if mean.len() != p || precision.nrows() != p || precision.ncols() != p {
            return Err(Error::domain(format!("θ prior must have dimension {p}")));
        }
        prec += precision;
        rhs += precision * DVector::from_column_slice(mean);
    }
    let singular = |column: usize| {
        Error::numerical(format!(
            "weighted covariate Gram matrix is singular: column '{}' is linearly dependent on the others",
            data.theta_names()[column]
        ))
    };
    let lower = cholesky_psd(&prec, 1e-12).map_err(|f| singular(f.column))?;
    if let Some(j) = (0..p).find(|&j| lower[(j, j)] == 0.0) {
        return Err(singular(j));
    }
    Ok(ThetaSystem { lower, rhs })
}

impl ThetaSystem {
    fn mean(&self) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(&self.rhs)
            .expect("nonzero diagonal");
        self.lower
            .transpose()
            .solve_upper_triangular(&y)
            .expect("nonzero diagonal")
    }
}

/// Mean `θ̂_n(g)` and covariance `V̂_n(g)` of the θ conditional.
pub fn theta_conditional(
    data: &Dataset,
    state: &ChainState,
    prior: &ThetaPrior,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sys = theta_system(data, state, prior)?;
    let p = sys.lower.nrows();
    let linv = sys
        .lower
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .expect("nonzero diagonal");
    Ok((sys.mean(), linv.transpose() * linv))
}

/// `θ ~ N(θ̂_n(g), V̂_n(g))` given the current `Z` and `g`.
pub fn step2_update_theta(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    prior: &ThetaPrior,
) -> Result<()> {
    let sys = theta_system(data, state, prior)?;
    let p = sys.rhs.len();
    let eps = DVector::from_fn(p, |_, _| rng.std_normal());
    // L' u = ε gives Cov(u) = (L L')⁻¹.
    let u = sys
        .lower
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("nonzero diagonal");
    let theta = sys.mean() + u;
    state.coefficients.theta = theta.iter().copied().collect();
    Ok(())
}

/// Posterior label probabilities for one observation with transformed
/// residual `t` and log variance `g`.
pub fn label_probabilities(t: f64, g: f64, table: &MixtureTable) -> Result<Vec<f64>> {
    let mut w = vec![0.0; table.len()];
    label_weights(t, g, table, &mut w)?;
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

fn label_weights(t: f64, g: f64, table: &MixtureTable, out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (j, slot) in out.iter_mut().enumerate() {
        let var = table.variances()[j];
        let dev = t - table.means()[j] - g;
        let lw = table.weights()[j].ln() - 0.5 * var.ln() - 0.5 * dev * dev / var;
        *slot = lw;
        max = max.max(lw);
    }
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::numerical(format!(
            "every mixture component has zero weight at T={t}, g={g}"
        )));
    }
    for slot in out.iter_mut() {
        *slot = (*slot - max).exp();
    }
    Ok(())
}

/// `A_i` from the ten-category conditional given `T(Z_i, x_i, β)` and `g(x_i)`.
pub fn step3_update_labels(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    table: &MixtureTable,
) -> Result<()> {
    let mut w = vec![0.0; table.len()];
    for (i, x) in data.rows().iter().enumerate() {
        let t = log_sq_residual(state.z[i] - state.coefficients.index(x));
        label_weights(t, state.log_sked.g_at_design[i], table, &mut w)?;
        let total: f64 = w.iter().sum();
        state.labels[i] = categorical_index(rng, &w, total);
    }
    Ok(())
}

/// Mean and covariance of the GP conditional with prior `N(prior_mean,
/// prior_cov)`, observation noise `diag(noise)` and observations `resid`:
/// `m = Σ(P+Σ)⁻¹ m0 + P(P+Σ)⁻¹ y`, `V = P - P(P+Σ)⁻¹P`.
pub fn g_conditional_moments(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    noise: &[f64],
    resid: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = prior_mean.len();
    let mut s = prior_cov.clone();
    for i in 0..n {
        s[(i, i)] += noise[i];
    }
    let chol =
        Cholesky::new(s).ok_or_else(|| Error::numerical("K + Σ is not positive definite"))?;
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(noise));
    let mean = &sigma * chol.solve(prior_mean) + prior_cov * chol.solve(resid);
    let mut cov = prior_cov - prior_cov * chol.solve(prior_cov);
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// One draw from the GP conditional, by prior draw plus correction.
fn gp_conditional_draw(
    rng: &mut RngStream,
    prior_mean: &DVector<f64>,
    prior: &GramMatrix,
    prior_lower: &DMatrix<f64>,
    noise: &[f64],
    resid: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = prior_mean.len();
    let eps = DVector::from_fn(n, |_, _| rng.std_normal());
    let f = prior_mean + lower_mul(prior_lower, &eps);
    let mut gap = resid - &f;
    for i in 0..n {
        gap[i] -= noise[i].sqrt() * rng.std_normal();
    }
    let mut s = prior.values.clone();
    for i in 0..n {
        s[(i, i)] += noise[i];
    }
    let chol =
        Cholesky::new(s).ok_or_else(|| Error::numerical("K + Σ is not positive definite"))?;
    let w = chol.solve(&gap);
    Ok(f + &prior.values * w)
}

/// Residuals `T_i - μ_{A_i}` and noise variances `τ²_{A_i}` for a set of
/// observations.
fn gp_targets(
    data: &Dataset,
    state: &ChainState,
    table: &MixtureTable,
    idx: &[usize],
) -> (DVector<f64>, Vec<f64>) {
    let mut resid = DVector::zeros(idx.len());
    let mut noise = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let a = state.labels[i];
        let t = log_sq_residual(state.z[i] - state.coefficients.index(data.row(i)));
        resid[k] = t - table.means()[a];
        noise.push(table.variances()[a]);
    }
    (resid, noise)
}

/// Cached quantities that tie `g` at prediction points to `g` at design
/// points under the GP prior.
#[derive(Clone, Debug)]
pub struct StarPrior {
    /// `K_{n*}`, `n x m`.
    pub cross: DMatrix<f64>,
    /// `K_{**}` with jitter, `m x m`.
    pub kstar: GramMatrix,
    /// `K_{n*} K_{**}⁻¹`: prior mean of `g_n` given `g_*` is `prior_gain g_*`.
    pub prior_gain: DMatrix<f64>,
    /// `K_{n,*} = K_n - K_{n*} K_{**}⁻¹ K_{*n}`, jittered and factored.
    pub conditional_prior: GramMatrix,
    conditional_lower: DMatrix<f64>,
    /// `K_{*n} K_n⁻¹`: mean of `g_*` given `g_n` is `interp_gain g_n`.
    pub interp_gain: DMatrix<f64>,
    /// Covariance of `g_*` given `g_n`: `K_{**} - K_{*n} K_n⁻¹ K_{n*}`.
    pub interp_cov: DMatrix<f64>,
    interp_lower: DMatrix<f64>,
}

impl StarPrior {
    /// From the design Gram matrix, the `n x m` cross-covariances and the
    /// un-jittered `m x m` prediction-point covariances.
    pub fn new(
        gram: &GramMatrix,
        cross: DMatrix<f64>,
        kstar: DMatrix<f64>,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        let n = gram.dim();
        let m = kstar.nrows();
        if cross.nrows() != n || cross.ncols() != m || kstar.ncols() != m {
            return Err(Error::domain(
                "prediction covariance blocks have inconsistent shapes",
            ));
        }
        let kstar_raw = kstar.clone();
        let kstar = GramMatrix::factor(kstar, policy)?;
        let prior_gain = kstar.solve_mat(&cross.transpose()).transpose();
        let mut cond = &gram.values - &prior_gain * cross.transpose();
        symmetrize(&mut cond);
        // `gram.values` already carries its own jitter.
        let mut zero_first = vec![0.0];
        zero_first.extend(policy.ladder.iter().copied());
        let conditional_prior = GramMatrix::factor(cond, &JitterPolicy { ladder: zero_first })?;
        let conditional_lower = conditional_prior.lower();
        let interp_gain = gram.solve_mat(&cross).transpose();
        let mut interp_cov = &kstar_raw - &interp_gain * &cross;
        symmetrize(&mut interp_cov);
        let (interp_lower, _) = psd_factor(&interp_cov)?;
        Ok(StarPrior {
            cross,
            kstar,
            prior_gain,
            conditional_prior,
            conditional_lower,
            interp_gain,
            interp_cov,
            interp_lower,
        })
    }

    /// Single prediction point.
    pub fn from_prediction_cov(
        gram: &GramMatrix,
        cross: &PredictionCov,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        let n = cross.kappa_n_star.len();
        StarPrior::new(
            gram,
            DMatrix::from_column_slice(n, 1, cross.kappa_n_star.as_slice()),
            DMatrix::from_element(1, 1, cross.kappa_star),
            policy,
        )
    }

    pub fn m(&self) -> usize {
        self.cross.ncols()
    }

    /// Prior mean of `g_n` given `g_*`.
    pub fn conditional_prior_mean(&self, g_star: &[f64]) -> DVector<f64> {
        &self.prior_gain * DVector::from_column_slice(g_star)
    }

    /// Mean of `g_*` given `g_n`.
    pub fn interpolation_mean(&self, g_design: &[f64]) -> DVector<f64> {
        &self.interp_gain * DVector::from_column_slice(g_design)
    }
}

/// One Gaussian-process block: a set of observations sharing a latent
/// function, and the prediction points that belong to it.
#[derive(Clone, Debug)]
pub struct GpBlock {
    /// Group key: values of the discrete covariates (empty when ungrouped).
    pub key: Vec<f64>,
    pub design: Vec<usize>,
    pub stars: Vec<usize>,
    pub gram: Option<GramMatrix>,
    gram_lower: Option<DMatrix<f64>>,
    pub star: Option<StarPrior>,
    /// Lower factor of `K_{**}` for blocks without observations.
    star_only_lower: Option<DMatrix<f64>>,
}

impl GpBlock {
    fn build(
        key: Vec<f64>,
        design: Vec<usize>,
        stars: Vec<usize>,
        design_inputs: &[Vec<f64>],
        star_inputs: &[Vec<f64>],
        spec: &KernelSpec,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        let d_pts: Vec<Vec<f64>> = design.iter().map(|&i| design_inputs[i].clone()).collect();
        let s_pts: Vec<Vec<f64>> = stars.iter().map(|&k| star_inputs[k].clone()).collect();
        let mut block = GpBlock {
            key,
            design,
            stars,
            gram: None,
            gram_lower: None,
            star: None,
            star_only_lower: None,
        };
        if !d_pts.is_empty() {
            let g = gram(spec, &d_pts, policy)?;
            block.gram_lower = Some(g.lower());
            if !s_pts.is_empty() {
                let cross = cross_cov_matrix(spec, &d_pts, &s_pts)?;
                let kstar = gram_values(spec, &s_pts)?;
                block.star = Some(StarPrior::new(&g, cross, kstar, policy)?);
            }
            block.gram = Some(g);
        } else if !s_pts.is_empty() {
            let kstar = gram_values(spec, &s_pts)?;
            block.star_only_lower = Some(psd_factor(&kstar)?.0);
        }
        Ok(block)
    }

    /// Step 4 (and 5 when the block has prediction points) for this block.
    /// Returns new `g` at the block's design points and prediction points.
    fn update(
        &self,
        rng: &mut RngStream,
        data: &Dataset,
        state: &ChainState,
        table: &MixtureTable,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (gram, lower) = match (&self.gram, &self.gram_lower) {
            (Some(g), Some(l)) => (g, l),
            _ => {
                let lower = self.star_only_lower.as_ref().expect("block has points");
                let draw = sample_mvn_factored(rng, &DVector::zeros(self.stars.len()), lower);
                return Ok((Vec::new(), draw.iter().copied().collect()));
            }
        };
        let (resid, noise) = gp_targets(data, state, table, &self.design);
        match &self.star {
            None => {
                let zero = DVector::zeros(self.design.len());
                let g = gp_conditional_draw(rng, &zero, gram, lower, &noise, &resid)?;
                Ok((g.iter().copied().collect(), Vec::new()))
            }
            Some(star) => {
                let g_star_now: Vec<f64> = self
                    .stars
                    .iter()
                    .map(|&k| state.log_sked.g_at_star[k])
                    .collect();
                let m0 = star.conditional_prior_mean(&g_star_now);
                let g = gp_conditional_draw(
                    rng,
                    &m0,
                    &star.conditional_prior,
                    &star.conditional_lower,
                    &noise,
                    &resid,
                )?;
                let g_vec: Vec<f64> = g.iter().copied().collect();
                let mean = star.interpolation_mean(&g_vec);
                let g_star = sample_mvn_factored(rng, &mean, &star.interp_lower);
                Ok((g_vec, g_star.iter().copied().collect()))
            }
        }
    }
}

/// Partition of observations and prediction points into GP blocks.
#[derive(Clone, Debug)]
pub struct GpLayout {
    pub blocks: Vec<GpBlock>,
    /// Internal columns that enter the kernel.
    pub kernel_columns: Vec<usize>,
}

impl GpLayout {
    /// Build the blocks and factor every Gram matrix once.
    pub fn new(
        data: &Dataset,
        spec: &KernelSpec,
        prediction_points: &[Vec<f64>],
        grouping: Option<&[usize]>,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        let d = data.dim();
        for (k, p) in prediction_points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Validation(format!(
                    "prediction point {k} has {} coordinates, data has {d} covariates",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "prediction point {k} is not finite"
                )));
            }
        }
        let discrete: Vec<usize> = grouping.map(|g| g.to_vec()).unwrap_or_default();
        if let Some(&bad) = discrete.iter().find(|&&c| c >= d) {
            return Err(Error::Validation(format!(
                "grouping column {bad} out of range"
            )));
        }
        let kernel_columns: Vec<usize> = (0..d).filter(|c| !discrete.contains(c)).collect();
        let project = |x: &[f64]| kernel_columns.iter().map(|&c| x[c]).collect::<Vec<f64>>();
        let design_inputs: Vec<Vec<f64>> = data.rows().iter().map(|r| project(r)).collect();
        let star_inputs: Vec<Vec<f64>> = prediction_points.iter().map(|p| project(p)).collect();

        if discrete.is_empty() {
            let block = GpBlock::build(
                Vec::new(),
                (0..data.n()).collect(),
                (0..prediction_points.len()).collect(),
                &design_inputs,
                &star_inputs,
                spec,
                policy,
            )?;
            return Ok(GpLayout {
                blocks: vec![block],
                kernel_columns,
            });
        }

        let key_of = |x: &[f64]| {
            discrete
                .iter()
                .map(|&c| x[c].to_bits())
                .collect::<Vec<u64>>()
        };
        let mut groups: BTreeMap<Vec<u64>, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, r) in data.rows().iter().enumerate() {
            groups.entry(key_of(r)).or_default().0.push(i);
        }
        for (k, p) in prediction_points.iter().enumerate() {
            groups.entry(key_of(p)).or_default().1.push(k);
        }
        let blocks = groups
            .into_iter()
            .map(|(key, (design, stars))| {
                let key_f: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
                GpBlock::build(
                    key_f.clone(),
                    design,
                    stars,
                    &design_inputs,
                    &star_inputs,
                    spec,
                    policy,
                )
                .map_err(|e| Error::numerical(format!("group {key_f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpLayout {
            blocks,
            kernel_columns,
        })
    }

    pub fn n_stars(&self) -> usize {
        self.blocks.iter().map(|b| b.stars.len()).sum()
    }

    /// Steps 4 and 5 over all blocks. Several blocks run in parallel on
    /// child streams seeded from `rng`.
    pub fn update(
        &self,
        rng: &mut RngStream,
        data: &Dataset,
        state: &mut ChainState,
        table: &MixtureTable,
    ) -> Result<()> {
        let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = if self.blocks.len() == 1 {
            vec![self.blocks[0].update(rng, data, state, table)]
        } else {
            let seeds: Vec<u64> = self.blocks.iter().map(|_| rng.fork_seed()).collect();
            let snapshot: &ChainState = state;
            self.blocks
                .par_iter()
                .zip(seeds)
                .map(|(b, seed)| {
                    let mut child = RngStream::new(seed, 0);
                    b.update(&mut child, data, snapshot, table)
                })
                .collect()
        };
        for (block, res) in self.blocks.iter().zip(results) {
            let (g, g_star) = res.map_err(|e| {
                if block.key.is_empty() {
                    e
                } else {
                    Error::numerical(format!("group {:?}: {e}", block.key))
                }
            })?;
            for (&i, v) in block.design.iter().zip(g) {
                state.log_sked.g_at_design[i] = v;
            }
            for (&k, v) in block.stars.iter().zip(g_star) {
                state.log_sked.g_at_star[k] = v;
            }
        }
        Ok(())
    }
}

/// `(g(x_1), ..., g(x_n)) ~ N(m_n, V_n)` with the mean-zero GP prior `K_n`.
pub fn step4_update_g(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    gram: &GramMatrix,
    table: &MixtureTable,
) -> Result<()> {
    if gram.dim() != data.n() {
        return Err(Error::domain(
            "Gram matrix does not match the number of observations",
        ));
    }
    let idx: Vec<usize> = (0..data.n()).collect();
    let (resid, noise) = gp_targets(data, state, table, &idx);
    let zero = DVector::zeros(data.n());
    let g = gp_conditional_draw(rng, &zero, gram, &gram.lower(), &noise, &resid)?;
    state.log_sked.g_at_design = g.iter().copied().collect();
    Ok(())
}

/// Step 4 when `g` at prediction points is part of the state: the prior
/// for `g_n` is its GP conditional given `g_*`.
pub fn step4_update_g_with_star(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    star: &StarPrior,
    table: &MixtureTable,
) -> Result<()> {
    if star.cross.nrows() != data.n() || state.log_sked.g_at_star.len() != star.m() {
        return Err(Error::domain("prediction prior does not match the state"));
    }
    let idx: Vec<usize> = (0..data.n()).collect();
    let (resid, noise) = gp_targets(data, state, table, &idx);
    let m0 = star.conditional_prior_mean(&state.log_sked.g_at_star);
    let g = gp_conditional_draw(
        rng,
        &m0,
        &star.conditional_prior,
        &star.conditional_lower,
        &noise,
        &resid,
    )?;
    state.log_sked.g_at_design = g.iter().copied().collect();
    Ok(())
}

/// `g_* ~ N(K_{*n} K_n⁻¹ g_n, K_{**} - K_{*n} K_n⁻¹ K_{n*})`.
pub fn step5_update_g_star(
    rng: &mut RngStream,
    state: &mut ChainState,
    star: &StarPrior,
) -> Result<()> {
    if state.log_sked.g_at_design.len() != star.cross.nrows() {
        return Err(Error::domain("prediction prior does not match the state"));
    }
    let mean = star.interpolation_mean(&state.log_sked.g_at_design);
    let draw = sample_mvn_factored(rng, &mean, &star.interp_lower);
    state.log_sked.g_at_star = draw.iter().copied().collect();
    Ok(())
}

/// Step 4 applied independently within each group of a grouped layout.
pub fn step4_grouped(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    layout: &GpLayout,
    table: &MixtureTable,
) -> Result<()> {
    layout.update(rng, data, state, table)
}

/// Starting state: θ from unweighted least squares of `2Y - 1`, `g ≡ 0`,
/// labels from the prior weights, `Z` from step 1.
pub fn initial_state(
    rng: &mut RngStream,
    data: &Dataset,
    n_stars: usize,
    table: &MixtureTable,
    prior: &ThetaPrior,
) -> Result<ChainState> {
    let n = data.n();
    let mut state = ChainState {
        coefficients: Coefficients::new(vec![0.0; data.dim() - 1]),
        log_sked: LogSkedastic::zeros(n, n_stars),
        z: data
            .y()
            .iter()
            .map(|&y| if y { 1.0 } else { -1.0 })
            .collect(),
        labels: vec![0; n],
    };
    let (theta0, _) = theta_conditional(data, &state, prior)?;
    state.coefficients.theta = theta0.iter().copied().collect();
    for a in state.labels.iter_mut() {
        *a = categorical_index(rng, table.weights(), 1.0);
    }
    step1_update_latents(rng, data, &mut state)?;
    Ok(state)
}

/// One full sweep: steps 1 through 4 (and 5).
pub fn sweep(
    rng: &mut RngStream,
    data: &Dataset,
    state: &mut ChainState,
    layout: &GpLayout,
    table: &MixtureTable,
    prior: &ThetaPrior,
) -> Result<()> {
    step1_update_latents(rng, data, state)?;
    if let Some(i) = state.sign_violations(data).first() {
        return Err(Error::numerical(format!(
            "latent utility {i} has the wrong sign"
        )));
    }
    step2_update_theta(rng, data, state, prior)?;
    step3_update_labels(rng, data, state, table)?;
    layout.update(rng, data, state, table)?;
    Ok(())
}

/// Run one chain and keep the post-burn-in, thinned draws.
pub fn run_chain(
    data: &Dataset,
    spec: &KernelSpec,
    config: &GibbsConfig,
    table: &MixtureTable,
) -> Result<PosteriorDraws> {
    run_chain_with(data, spec, config, table, |_, _| Ok(()))
}

/// As [`run_chain`], calling `observer(iteration, state)` for every
/// retained draw as it is produced.
pub fn run_chain_with<F>(
    data: &Dataset,
    spec: &KernelSpec,
    config: &GibbsConfig,
    table: &MixtureTable,
    mut observer: F,
) -> Result<PosteriorDraws>
where
    F: FnMut(usize, &ChainState) -> Result<()>,
{
    config.validate()?;
    table.check_invariants()?;
    let layout = GpLayout::new(
        data,
        spec,
        &config.prediction_points,
        config.grouping.as_deref(),
        &config.jitter,
    )?;
    let mut rng = RngStream::new(config.seed, config.stream_id);
    let at = |iteration: usize| {
        move |e: Error| Error::AtIteration {
            iteration,
            source: Box::new(e),
        }
    };
    let mut state = initial_state(
        &mut rng,
        data,
        config.prediction_points.len(),
        table,
        &config.theta_prior,
    )
    .map_err(at(0))?;

    let retained = config.retained();
    let mut draws = PosteriorDraws {
        theta_names: data.theta_names().to_vec(),
        thetas: Vec::with_capacity(retained),
        g_draws: Vec::with_capacity(if config.store_g { retained } else { 0 }),
        g_star_draws: Vec::with_capacity(retained),
        prediction_points: config.prediction_points.clone(),
        log_likelihood: Vec::with_capacity(retained),
        retained: 0,
    };
    for s in 1..=config.iterations {
        sweep(
            &mut rng,
            data,
            &mut state,
            &layout,
            table,
            &config.theta_prior,
        )
        .map_err(at(s))?;
        if config.keeps(s) {
            observer(s, &state).map_err(at(s))?;
            draws.thetas.push(state.coefficients.theta.clone());
            if config.store_g {
                draws.g_draws.push(state.log_sked.g_at_design.clone());
            }
            if !config.prediction_points.is_empty() {
                draws.g_star_draws.push(state.log_sked.g_at_star.clone());
            }
            draws
                .log_likelihood
                .push(log_likelihood(data, &state.coefficients, &state.log_sked).map_err(at(s))?);
            draws.retained += 1;
        }
    }
    debug_assert_eq!(draws.retained, retained);
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data() -> Dataset {
        let rows = vec![
            vec![0.3, -1.0],
            vec![-0.7, 0.4],
            vec![1.2, 0.1],
            vec![0.0, 2.0],
            vec![-1.5, -0.2],
            vec![0.8, 0.9],
        ];
        let y = vec![false, true, true, true, false, true];
        Dataset::new(rows, y, vec!["a".into(), "b".into()], 1).unwrap()
    }

    fn fresh_state(data: &Dataset, m: usize) -> ChainState {
        ChainState {
            coefficients: Coefficients::new(vec![0.5; data.dim() - 1]),
            log_sked: LogSkedastic::zeros(data.n(), m),
            z: data
                .y()
                .iter()
                .map(|&y| if y { 0.5 } else { -0.5 })
                .collect(),
            labels: vec![3; data.n()],
        }
    }

    #[test]
    fn config_validation_and_retained_count() {
        let mut c = GibbsConfig {
            iterations: 10,
            burn_in: 9,
            thin: 1,
            ..GibbsConfig::default()
        };
        assert_eq!(c.retained(), 1);
        c.validate().unwrap();
        c.thin = 3;
        c.burn_in = 2;
        assert_eq!(c.retained(), 2);
        assert_eq!((1..=10).filter(|&s| c.keeps(s)).count(), 2);
        c.burn_in = 10;
        assert!(c.validate().is_err());
        c.burn_in = 0;
        c.thin = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step1_respects_signs() {
        let data = tiny_data();
        let mut state = fresh_state(&data, 0);
        state.coefficients.theta = vec![-4.0];
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            step1_update_latents(&mut rng, &data, &mut state).unwrap();
            assert!(state.sign_violations(&data).is_empty());
        }
    }

    #[test]
    fn theta_hand_example() {
        // n=1, x=(1,1), g=0, Z=2 gives θ̂ = 1, V̂ = 1.
        let data = Dataset::new(
            vec![vec![1.0, 1.0]],
            vec![true],
            vec!["a".into(), "b".into()],
            1,
        )
        .unwrap();
        let mut state = fresh_state(&data, 0);
        state.z = vec![2.0];
        let (m, v) = theta_conditional(&data, &state, &ThetaPrior::Flat).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((v[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theta_weight_shift() {
        let data = tiny_data();
        let mut state = fresh_state(&data, 0);
        state.z = vec![-0.4, 0.2, 1.1, 0.7, -2.0, 0.3];
        state.log_sked.g_at_design = vec![0.1, -0.3, 0.5, 0.0, 0.2, -0.1];
        let (m0, v0) = theta_conditional(&data, &state, &ThetaPrior::Flat).unwrap();
        let c = 0.7;
        for g in state.log_sked.g_at_design.iter_mut() {
            *g += c;
        }
        let (m1, v1) = theta_conditional(&data, &state, &ThetaPrior::Flat).unwrap();
        assert!((m0 - m1).abs().max() < 1e-12);
        assert!((v0 * c.exp() - v1).abs().max() < 1e-12);
    }

    #[test]
    fn singular_design_names_column() {
        let rows = vec![
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 2.0],
            vec![0.0, -1.0, 0.5],
        ];
        let data = Dataset::new(
            rows,
            vec![true, false, true],
            vec!["a".into(), "zero".into(), "c".into()],
            2,
        )
        .unwrap();
        let mut state = fresh_state(&data, 0);
        state.coefficients.theta = vec![0.0, 0.0];
        let err = theta_conditional(&data, &state, &ThetaPrior::Flat).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("'a'"), "{err}");
    }

    #[test]
    fn degenerate_table_forces_label() {
        let data = tiny_data();
        let mut state = fresh_state(&data, 0);
        let mut w = vec![0.0; 10];
        w[0] = 1.0;
        let t0 = MixtureTable::log_chi2();
        let table = MixtureTable::new(w, t0.means().to_vec(), t0.variances().to_vec()).unwrap();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..50 {
            step3_update_labels(&mut rng, &data, &mut state, &table).unwrap();
            assert!(state.labels.iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn equal_components_return_prior_weights() {
        let t0 = MixtureTable::log_chi2();
        let table =
            MixtureTable::new(t0.weights().to_vec(), vec![-1.0; 10], vec![2.0; 10]).unwrap();
        let p = label_probabilities(-7.3, 0.4, &table).unwrap();
        for (a, b) in p.iter().zip(t0.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn label_weights_survive_floored_residual() {
        let t = MixtureTable::log_chi2();
        let p = label_probabilities(1e-50f64.ln(), 3.0, &t).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scalar_gp_moments() {
        let tau2 = 0.62699;
        let (m, v) = g_conditional_moments(
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, 1.0),
            &[tau2],
            &DVector::from_element(1, 2.5),
        )
        .unwrap();
        assert!((m[0] - 2.5 / (1.0 + tau2)).abs() < 1e-15);
        assert!((v[(0, 0)] - tau2 / (1.0 + tau2)).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_prior_mean() {
        let spec = KernelSpec::new(1.5, 1.0).unwrap();
        let data = tiny_data();
        let k = gram_values(&spec, data.rows()).unwrap();
        let (m, _) =
            g_conditional_moments(&DVector::zeros(6), &k, &[0.5; 6], &DVector::zeros(6)).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step5_at_design_point_interpolates() {
        let spec = KernelSpec::new(2.5, 1.0).unwrap();
        let data = tiny_data();
        let policy = JitterPolicy::default();
        let g = gram(&spec, data.rows(), &policy).unwrap();
        let cross = crate::kernels::cross_cov(&spec, data.rows(), data.row(2)).unwrap();
        let star = StarPrior::from_prediction_cov(&g, &cross, &policy).unwrap();
        let var = star.interp_cov[(0, 0)];
        assert!(var <= 2.0 * g.jitter_applied + 1e-15, "var={var}");
        let gn = vec![0.3, -0.2, 1.7, 0.4, 0.0, -1.1];
        let mean = star.interpolation_mean(&gn);
        assert!((mean[0] - 1.7).abs() < 1e-6);
    }

    #[test]
    fn far_prediction_point_reverts_to_prior() {
        let spec = KernelSpec::new(0.5, 1.0).unwrap();
        let data = tiny_data();
        let policy = JitterPolicy::default();
        let g = gram(&spec, data.rows(), &policy).unwrap();
        let cross = crate::kernels::cross_cov(&spec, data.rows(), &[500.0, 500.0]).unwrap();
        let star = StarPrior::from_prediction_cov(&g, &cross, &policy).unwrap();
        let gn = vec![2.0; 6];
        assert!(star.interpolation_mean(&gn)[0].abs() < 1e-40);
        assert!((star.interp_cov[(0, 0)] - 1.0).abs() < 1e-15);
        // The conditional prior of g_n is the unconditional one.
        assert!((&star.conditional_prior.values - &g.values).abs().max() < 1e-15);
        assert!(star.conditional_prior_mean(&[3.0]).abs().max() < 1e-40);
    }

    #[test]
    fn run_chain_single_retained_draw_and_determinism() {
        let data = tiny_data();
        let spec = KernelSpec::new(1.5, 1.0).unwrap();
        let table = MixtureTable::log_chi2();
        let config = GibbsConfig {
            iterations: 21,
            burn_in: 20,
            thin: 1,
            seed: 9,
            ..GibbsConfig::default()
        };
        let a = run_chain(&data, &spec, &config, &table).unwrap();
        assert_eq!(a.retained, 1);
        assert_eq!(a.thetas.len(), 1);
        let b = run_chain(&data, &spec, &config, &table).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grouping_column_out_of_range() {
        let data = tiny_data();
        let spec = KernelSpec::new(1.5, 1.0).unwrap();
        let r = GpLayout::new(&data, &spec, &[], Some(&[5]), &JitterPolicy::default());
        assert!(r.is_err());
    }
}
