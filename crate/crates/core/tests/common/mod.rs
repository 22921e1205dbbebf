//! Independent reference computations shared by the integration tests.
//! They use dense LU inverses and generic Gaussian conditioning rather
//! than the library's Cholesky-based routines.

#![allow(dead_code)]

use hetprobit::distributions::RngStream;
use hetprobit::model::Dataset;
use nalgebra::{DMatrix, DVector};

pub fn inv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("invertible")
}

/// Weighted least squares of `target` on `x` with weights `w`:
/// `((X'WX)⁻¹ X'W t, (X'WX)⁻¹)`.
pub fn dense_wls(
    x: &DMatrix<f64>,
    w: &[f64],
    target: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let xtwx = x.transpose() * &wm * x;
    let v = inv(&xtwx);
    (&v * x.transpose() * &wm * target, v)
}

/// Design of the free coefficients and the target `Z - x_norm` for a
/// dataset in internal column order.
pub fn free_design(data: &Dataset, z: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = data.dim() - 1;
    let x = DMatrix::from_fn(data.n(), p, |i, j| data.row(i)[j]);
    let t = DVector::from_fn(data.n(), |i, _| z[i] - data.row(i)[p]);
    (x, t)
}

/// GP regression with prior `N(0, K)` and independent noise `Σ`,
/// written from the noise side: `m = y - Σ(K+Σ)⁻¹y`,
/// `V = Σ - Σ(K+Σ)⁻¹Σ`.
pub fn dense_gp(k: &DMatrix<f64>, noise: &[f64], y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(noise));
    let a = inv(&(k + &s));
    (y - &s * &a * y, &s - &s * &a * &s)
}

/// Conditional law of the first `nu` coordinates of `N(0, c)` given the
/// rest equal `obs`.
pub fn condition(c: &DMatrix<f64>, nu: usize, obs: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = c.nrows();
    let cuu = c.view((0, 0), (nu, nu)).into_owned();
    let cuo = c.view((0, nu), (nu, n - nu)).into_owned();
    let coo = c.view((nu, nu), (n - nu, n - nu)).into_owned();
    let g = &cuo * inv(&coo);
    (&g * obs, cuu - &g * cuo.transpose())
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_v(a: &DVector<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sample_mean_cov(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += x;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let e = x - &mean;
        cov += &e * e.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Standard normal CDF by direct numerical integration of the density,
/// independent of the library's erfc path.
pub fn phi_quadrature(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - phi_quadrature(-z);
    }
    let n = 2000;
    let h = z / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(z);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    2.0 * (1.0 - phi_quadrature(z.abs()))
}

/// Standard error of a mean by non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

/// Random covariate rows in `[-2, 2]^d`, at least `min_gap` apart.
pub fn spread_points(rng: &mut RngStream, n: usize, d: usize, min_gap: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec<f64> = (0..d).map(|_| 4.0 * rng.open01() - 2.0).collect();
        let ok = pts.iter().all(|q| {
            let r2: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
            r2.sqrt() >= min_gap
        });
        if ok {
            pts.push(p);
        }
    }
    pts
}

pub fn report(name: &str, ok: bool, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}
