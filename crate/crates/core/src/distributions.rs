//! Random variates and normal-distribution primitives used by the sampler
//! and by the simulation design.
//!
//! Every sampler draws from an explicit [`RngStream`]; nothing touches a
//! thread-local generator, so a `(seed, stream_id)` pair fully determines
//! a run.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, lower_mul, PivotFailure};

/// Seedable, splittable random stream.
///
/// Streams with the same seed but different `stream_id` use disjoint
/// ChaCha20 stream positions and are independent by construction.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn std_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Seed for a child stream, drawn from this one.
    pub fn fork_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The two truncation sets used when drawing latent utilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationRegion {
    /// (-inf, 0)
    Negative,
    /// [0, inf)
    NonNegative,
}

impl TruncationRegion {
    pub fn for_outcome(y: bool) -> Self {
        if y {
            TruncationRegion::NonNegative
        } else {
            TruncationRegion::Negative
        }
    }

    pub fn contains(self, z: f64) -> bool {
        match self {
            TruncationRegion::Negative => z < 0.0,
            TruncationRegion::NonNegative => z >= 0.0,
        }
    }
}

/// Standard normal CDF, checked.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!(
            "normal CDF argument must be finite, got {z}"
        )));
    }
    Ok(norm_cdf(z))
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)`, accurate in both tails.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z > 5.0 {
        return (-norm_cdf(-z)).ln_1p();
    }
    if z > -30.0 {
        return norm_cdf(z).ln();
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Asymptotic expansion of the Mills ratio.
    let z2 = z * z;
    let inv = 1.0 / z2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile (Wichura, AS 241), relative accuracy ~1e-16.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        return Err(Error::domain(format!(
            "quantile probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(norm_quantile(p))
}

pub(crate) fn norm_quantile(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5226.495_278_852_546 + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((r * 1.050_750_071_644_416_8e-9 + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_100_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Lower truncation point beyond which the exponential-proposal rejection
/// sampler replaces inversion.
const TAIL_SWITCH: f64 = 5.0;

/// Standard normal conditioned on `X >= a`.
fn std_normal_above(rng: &mut RngStream, a: f64) -> f64 {
    if a <= TAIL_SWITCH {
        // Invert the upper tail: X = -Φ⁻¹(U Φ(-a)).
        let mass = norm_cdf(-a);
        loop {
            let x = -norm_quantile(rng.open01() * mass);
            // Guards the last ulp of the inversion.
            if x >= a {
                return x;
            }
        }
    }
    // Robert (1995) translated-exponential proposal with the optimal rate.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.open01().ln() / lambda;
        let d = z - lambda;
        if rng.open01().ln() <= -0.5 * d * d {
            return z;
        }
    }
}

/// Draw from `N(mean, variance)` conditioned on `region`.
pub fn sample_truncated_normal(
    rng: &mut RngStream,
    mean: f64,
    variance: f64,
    region: TruncationRegion,
) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::domain(format!(
            "truncated normal variance must be positive, got {variance}"
        )));
    }
    if !mean.is_finite() {
        return Err(Error::domain(format!(
            "truncated normal mean must be finite, got {mean}"
        )));
    }
    let sd = variance.sqrt();
    let draw = match region {
        TruncationRegion::NonNegative => {
            let x = mean + sd * std_normal_above(rng, -mean / sd);
            x.max(0.0)
        }
        TruncationRegion::Negative => {
            let x = mean - sd * std_normal_above(rng, mean / sd);
            if x < 0.0 {
                x
            } else {
                // Rounding pushed an interior draw onto the boundary.
                -f64::MIN_POSITIVE
            }
        }
    };
    Ok(draw)
}

/// CDF of `N(mean, variance)` truncated to `region`, evaluated at `z`.
pub fn truncated_normal_cdf(mean: f64, variance: f64, region: TruncationRegion, z: f64) -> f64 {
    let sd = variance.sqrt();
    let s = (z - mean) / sd;
    let b = -mean / sd;
    match region {
        TruncationRegion::NonNegative => {
            if z < 0.0 {
                0.0
            } else {
                // (Φ(s) - Φ(b)) / (1 - Φ(b)) = 1 - Φ(-s)/Φ(-b)
                1.0 - norm_cdf(-s) / norm_cdf(-b)
            }
        }
        TruncationRegion::Negative => {
            if z >= 0.0 {
                1.0
            } else {
                norm_cdf(s) / norm_cdf(b)
            }
        }
    }
}

/// Jitter escalation used when a covariance will not factor as given.
pub const MVN_JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

const PSD_TOL: f64 = 1e-12;

/// Lower factor `L` with `L L' = cov`, escalating diagonal jitter if needed.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::domain("covariance must be square"));
    }
    let asym = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
        .fold(0.0_f64, f64::max);
    let scale = cov.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::domain(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let mut last: Option<PivotFailure> = match cholesky_psd(cov, PSD_TOL) {
        Ok(l) => return Ok((l, 0.0)),
        Err(e) => Some(e),
    };
    for &jitter in &MVN_JITTER_LADDER {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        match cholesky_psd(&m, PSD_TOL) {
            Ok(l) => return Ok((l, jitter)),
            Err(e) => last = Some(e),
        }
    }
    let fail = last.expect("at least one attempt");
    let diag: Vec<f64> = (0..n).map(|i| cov[(i, i)]).collect();
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Err(Error::numerical(format!(
        "covariance factorization failed at max jitter {:e}: pivot {:e} at column {} (diagonal range [{dmin:e}, {dmax:e}])",
        MVN_JITTER_LADDER[MVN_JITTER_LADDER.len() - 1],
        fail.pivot,
        fail.column
    )))
}

/// Multivariate normal draw `mean + L ε`.
pub fn sample_mvn(
    rng: &mut RngStream,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if mean.len() != cov.nrows() {
        return Err(Error::domain(format!(
            "mean has length {} but covariance is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let (l, _) = psd_factor(cov)?;
    Ok(sample_mvn_factored(rng, mean, &l))
}

/// Draw with a precomputed lower factor.
pub fn sample_mvn_factored(
    rng: &mut RngStream,
    mean: &DVector<f64>,
    lower: &DMatrix<f64>,
) -> DVector<f64> {
    let eps = DVector::from_fn(mean.len(), |_, _| rng.std_normal());
    mean + lower_mul(lower, &eps)
}

/// Index in `0..weights.len()` with probability proportional to its weight.
pub fn sample_categorical(rng: &mut RngStream, weights: &[f64]) -> Result<usize> {
    if weights.is_empty() {
        return Err(Error::domain("categorical needs at least one weight"));
    }
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::domain(format!(
                "categorical weights must be finite and nonnegative, got {w}"
            )));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::domain("categorical weights sum to zero"));
    }
    Ok(categorical_index(rng, weights, total))
}

#[inline]
pub(crate) fn categorical_index(rng: &mut RngStream, weights: &[f64], total: f64) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = j;
            acc += w;
            if target < acc {
                return j;
            }
        }
    }
    last_positive
}

/// Scale `s` of the logistic law with the given variance: `π² s² / 3 = variance`.
pub fn logistic_scale(variance: f64) -> f64 {
    (3.0 * variance).sqrt() / PI
}

/// Logistic draw with the given median and variance.
pub fn sample_logistic(rng: &mut RngStream, median: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::domain(format!(
            "logistic variance must be positive, got {variance}"
        )));
    }
    let u = rng.open01();
    Ok(median + logistic_scale(variance) * (u / (1.0 - u)).ln())
}

/// `Φ(z)` expressed through `erf` for tests that want an independent route.
#[doc(hidden)]
pub fn norm_cdf_via_erf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        let p8 = std_normal_cdf(8.0).unwrap();
        assert!(p8 > 1.0 - 1e-14 && p8 <= 1.0);
        assert!((std_normal_cdf(1.959964).unwrap() - 0.975).abs() < 1e-6);
        // High-precision reference values.
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
        assert!((norm_cdf(-10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn quantile_round_trip() {
        let mut z = -6.0;
        while z <= 6.0 {
            let back = norm_quantile(norm_cdf(z));
            assert!((back - z).abs() <= 1e-8, "z={z} back={back}");
            z += 0.01;
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((norm_quantile(1e-300) + 37.047_096_299_361_2).abs() < 1e-9);
    }

    #[test]
    fn log_cdf_matches_direct_and_asymptotic() {
        for &z in &[-29.0, -10.0, -1.0, 0.0, 2.0, 7.0] {
            let direct = norm_cdf(z).ln();
            assert!(
                (log_norm_cdf(z) - direct).abs() < 1e-12 * direct.abs().max(1e-3),
                "z={z}"
            );
        }
        // Continuity across the switch to the expansion.
        let a = log_norm_cdf(-30.0 + 1e-9);
        let b = log_norm_cdf(-30.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        // ln Φ(-40) reference value.
        assert!((log_norm_cdf(-40.0) - (-804.608_442_013_753_8)).abs() < 1e-9);
    }

    #[test]
    fn truncated_normal_regions() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10_000 {
            let z =
                sample_truncated_normal(&mut rng, 10.0, 1.0, TruncationRegion::Negative).unwrap();
            assert!(z < 0.0);
            let z = sample_truncated_normal(&mut rng, -40.0, 1.0, TruncationRegion::NonNegative)
                .unwrap();
            assert!(z >= 0.0);
            let z =
                sample_truncated_normal(&mut rng, 0.0, 1e-6, TruncationRegion::Negative).unwrap();
            assert!(z < 0.0);
        }
    }

    #[test]
    fn truncated_normal_rejects_bad_variance() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_truncated_normal(&mut rng, 0.0, 0.0, TruncationRegion::Negative).is_err());
        assert!(sample_truncated_normal(&mut rng, 0.0, -1.0, TruncationRegion::Negative).is_err());
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = RngStream::new(7, 0);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| {
                sample_truncated_normal(&mut rng, 0.0, 1.0, TruncationRegion::NonNegative).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - (2.0 / PI).sqrt()).abs() < 0.003, "mean={mean}");
    }

    #[test]
    fn inactive_truncation_mean() {
        let mut rng = RngStream::new(8, 0);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| {
                sample_truncated_normal(&mut rng, 5.0, 1.0, TruncationRegion::NonNegative).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 5.0).abs() < 0.01, "mean={mean}");
    }

    #[test]
    fn far_tail_mean_matches_mills_ratio() {
        // E[X | X >= a] = φ(a) / (1 - Φ(a)) for the standard normal.
        let mut rng = RngStream::new(9, 0);
        let a = 8.0;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| std_normal_above(&mut rng, a)).sum::<f64>() / n as f64;
        let exact = norm_pdf(a) / norm_cdf(-a);
        assert!((mean - exact).abs() < 0.003, "mean={mean} exact={exact}");
    }

    #[test]
    fn mvn_identity_covariance() {
        let mut rng = RngStream::new(3, 0);
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn(&mut rng, &mean, &cov).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        assert!((acc - cov).abs().max() < 0.02);
    }

    #[test]
    fn mvn_mean_with_correlation() {
        let mut rng = RngStream::new(4, 0);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (l, _) = psd_factor(&cov).unwrap();
        let n = 100_000;
        let mut acc = DVector::<f64>::zeros(2);
        for _ in 0..n {
            acc += sample_mvn_factored(&mut rng, &mean, &l);
        }
        acc /= n as f64;
        assert!((acc - mean).abs().max() < 0.01);
    }

    #[test]
    fn mvn_degenerate_direction_is_exact() {
        let mut rng = RngStream::new(5, 0);
        let mean = DVector::from_vec(vec![0.5, -3.25, 1.0]);
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.3, 0.0, 1.0]);
        for _ in 0..100 {
            let x = sample_mvn(&mut rng, &mean, &cov).unwrap();
            assert_eq!(x[1], -3.25);
        }
    }

    #[test]
    fn mvn_rejects_indefinite() {
        let mut rng = RngStream::new(5, 0);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let err = sample_mvn(&mut rng, &DVector::zeros(2), &cov).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("pivot"));
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&mut rng, &[1.0, 0.0, 0.0]).unwrap(), 0);
        }
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&mut rng, &[1.0, 1.0]).unwrap() == 0)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.005);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical(&mut rng, &[1.0, 2.0, 7.0]).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.1, 0.2, 0.7]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn categorical_rejects_bad_weights() {
        let mut rng = RngStream::new(11, 0);
        assert!(sample_categorical(&mut rng, &[0.0, 0.0]).is_err());
        assert!(sample_categorical(&mut rng, &[1.0, -0.5]).is_err());
        assert!(sample_categorical(&mut rng, &[]).is_err());
    }

    #[test]
    fn logistic_moments() {
        assert!((logistic_scale(1.0) - 0.551_328_895_421_792).abs() < 1e-12);
        let mut rng = RngStream::new(12, 0);
        let n = 1_000_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_logistic(&mut rng, 0.0, 1.0).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.01, "var={var}");
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (draws[n / 2 - 1] + draws[n / 2]);
        assert!(median.abs() < 0.005, "median={median}");
        assert!(sample_logistic(&mut rng, 0.0, 0.0).is_err());
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut c = RngStream::new(42, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
