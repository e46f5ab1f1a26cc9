use nalgebra::{DMatrix, SymmetricEigen};

use super::MetricsError;
use crate::nncore::RealMatrix;

pub const DEFAULT_RIDGE: f64 = 1e-6;

fn to_centered_dmatrix(m: &RealMatrix) -> DMatrix<f64> {
    let c = m.center_columns();
    DMatrix::from_row_slice(c.rows(), c.cols(), c.as_slice())
}

// (Σ + ridge·I)^{-1/2} via eigendecomposition
fn inv_sqrt(
    cov: DMatrix<f64>,
    ridge: f64,
    which: &'static str,
) -> Result<DMatrix<f64>, MetricsError> {
    let p = cov.nrows();
    let reg = cov + DMatrix::identity(p, p) * ridge;
    let eig = SymmetricEigen::new(reg);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = if ridge > 0.0 { 0.0 } else { max * 1e-12 };
    if eig.eigenvalues.iter().any(|&l| !(l > floor)) {
        return Err(MetricsError::Singular(which));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Ridge-regularized canonical correlations, largest first, clamped to `[0, 1]`.
pub fn canonical_correlations(
    x: &RealMatrix,
    y: &RealMatrix,
    ridge: f64,
) -> Result<Vec<f64>, MetricsError> {
    if x.rows() != y.rows() {
        return Err(MetricsError::LengthMismatch(x.rows(), y.rows()));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(MetricsError::Config(format!(
            "ridge must be ≥ 0, got {ridge}"
        )));
    }
    let n = x.rows();
    let widest = x.cols().max(y.cols());
    if n <= widest {
        return Err(MetricsError::SampleSize {
            needed: widest + 1,
            got: n,
        });
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(MetricsError::Degenerate(
            "representation with zero columns".into(),
        ));
    }
    let xc = to_centered_dmatrix(x);
    let yc = to_centered_dmatrix(y);
    let denom = (n - 1) as f64;
    let sxx = xc.tr_mul(&xc) / denom;
    let syy = yc.tr_mul(&yc) / denom;
    let sxy = xc.tr_mul(&yc) / denom;
    let wx = inv_sqrt(sxx, ridge, "X")?;
    let wy = inv_sqrt(syy, ridge, "Y")?;
    let m = wx * sxy * wy;
    let mut sv: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Mean canonical correlation: the sum of canonical correlations divided by
/// `min(cols(x), cols(y))`.
pub fn mean_cca(x: &RealMatrix, y: &RealMatrix, ridge: f64) -> Result<f64, MetricsError> {
    let k = x.cols().min(y.cols());
    let rho = canonical_correlations(x, y, ridge)?;
    Ok(rho.iter().take(k).sum::<f64>() / k as f64)
}
