use super::MetricsError;
use crate::nncore::RealMatrix;

// H·K·H for a symmetric n×n Gram matrix.
fn double_center(k: &RealMatrix) -> RealMatrix {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    // K symmetric: column means equal row means
    RealMatrix::from_fn(n, n, |i, j| {
        k.get(i, j) - row_means[i] - row_means[j] + grand
    })
}

/// Linear centered kernel alignment between two representations of the same `n` samples.
///
/// Returns 0 when either centered Gram matrix vanishes.
pub fn linear_cka(x: &RealMatrix, y: &RealMatrix) -> Result<f64, MetricsError> {
    if x.rows() != y.rows() {
        return Err(MetricsError::LengthMismatch(x.rows(), y.rows()));
    }
    if x.rows() < 3 {
        return Err(MetricsError::SampleSize {
            needed: 3,
            got: x.rows(),
        });
    }
    let kc = double_center(&x.matmul_t(x).expect("gram shape"));
    let lc = double_center(&y.matmul_t(y).expect("gram shape"));
    let inner: f64 = kc
        .as_slice()
        .iter()
        .zip(lc.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let denom = kc.frobenius_norm() * lc.frobenius_norm();
    if denom == 0.0 || !denom.is_finite() {
        return Ok(0.0);
    }
    Ok((inner / denom).clamp(0.0, 1.0))
}
