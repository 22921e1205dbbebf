//! Small dense factorizations not covered by nalgebra's `Cholesky`.

use nalgebra::{DMatrix, DVector};

/// Failure of [`cholesky_psd`]: the column where a clearly negative pivot
/// appeared, and its value.
#[derive(Debug, Clone, Copy)]
pub struct PivotFailure {
    pub column: usize,
    pub pivot: f64,
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Pivots within `tol * max_diag` of zero are treated as exact zeros and the
/// corresponding column of the factor is zeroed, so degenerate directions
/// get zero variance instead of failing. A pivot below `-tol * max_diag`
/// is reported as a failure.
pub fn cholesky_psd(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, PivotFailure> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky_psd needs a square matrix");
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let thresh = tol * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -thresh || !d.is_finite() {
            return Err(PivotFailure {
                column: j,
                pivot: d,
            });
        }
        if d <= thresh {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `L * v` for lower-triangular `L`.
pub fn lower_mul(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        for i in j..n {
            out[i] += l[(i, j)] * vj;
        }
    }
    out
}

/// Symmetrize in place: `a <- (a + a') / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_reproduces_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 2.0, 0.5, 0.4, 0.5, 3.0]);
        let l = cholesky_psd(&a, 1e-12).unwrap();
        let back = &l * l.transpose();
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn zero_row_gives_zero_column() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        let l = cholesky_psd(&a, 1e-12).unwrap();
        assert!(l.row(1).iter().all(|&v| v == 0.0));
        assert!(l.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_reports_column() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = cholesky_psd(&a, 1e-12).unwrap_err();
        assert_eq!(err.column, 1);
        assert!(err.pivot < 0.0);
    }
}
