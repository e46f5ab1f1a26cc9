use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::nncore::{dot, norm, RealMatrix};
use crate::rng::rng_from;

pub const DEFAULT_PERMUTATION_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pearson,
    Spearman,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::SampleSize {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::Degenerate("non-finite value".into()));
    }
    Ok(())
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn pearson_unchecked(dx: &[f64], dy: &[f64]) -> Result<f64, MetricsError> {
    let sxx = dot(dx, dx);
    let syy = dot(dy, dy);
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Degenerate("zero variance".into()));
    }
    Ok((dot(dx, dy) / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    pearson_unchecked(&centered(x), &centered(y))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    pearson_unchecked(&centered(&average_ranks(x)), &centered(&average_ranks(y)))
}

/// Two-sided permutation p-value `(1 + #{|stat_perm| ≥ |stat_obs|}) / (trials + 1)`,
/// permuting `y` against a fixed `x`. Deterministic per seed.
pub fn perm_pvalue(
    x: &[f64],
    y: &[f64],
    statistic: Statistic,
    trials: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if trials < 100 {
        return Err(MetricsError::Config(format!(
            "at least 100 permutation trials are required, got {trials}"
        )));
    }
    check_pair(x, y)?;
    let (dx, mut dy) = match statistic {
        Statistic::Pearson => (centered(x), centered(y)),
        Statistic::Spearman => (centered(&average_ranks(x)), centered(&average_ranks(y))),
    };
    let observed = pearson_unchecked(&dx, &dy)?.abs();
    // permuted statistics within rounding of the observed one count as ties
    let threshold = observed - 1e-12 * observed.max(1.0);
    let mut rng = rng_from(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        dy.shuffle(&mut rng);
        if pearson_unchecked(&dx, &dy)?.abs() >= threshold {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (trials + 1) as f64)
}

/// Cosine similarity of every row pair `i < j`, in row-major pair order.
pub fn pairwise_cosine_vector(e: &RealMatrix) -> Result<Vec<f64>, MetricsError> {
    let n = e.rows();
    if n < 2 {
        return Err(MetricsError::SampleSize { needed: 2, got: n });
    }
    let norms: Vec<f64> = (0..n).map(|r| norm(e.row(r))).collect();
    if let Some(r) = norms.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MetricsError::Degenerate(format!("row {r} has zero norm")));
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((dot(e.row(i), e.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        let x = [0.3, -1.2, 4.0, 2.2];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_hand_values() {
        let x = [0.1, -2.0, 3.5, 1.0, 0.7];
        let ex: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &ex).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        // ranks [1.5, 1.5, 3] vs [1, 2, 3]: r = 1.5 / sqrt(1.5 · 2) = √3/2
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricsError::Degenerate(_))
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(MetricsError::SampleSize { .. })
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(MetricsError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn perfect_correlation_is_significant() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = perm_pvalue(&x, &x, Statistic::Pearson, 1000, 3).unwrap();
        assert!(p <= 0.01);
        assert_eq!(p, 1.0 / 1001.0);
    }

    #[test]
    fn pvalue_floor_and_trial_minimum() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let p = perm_pvalue(&x, &x, Statistic::Spearman, 100, 0).unwrap();
        assert_eq!(p, 1.0 / 101.0);
        assert!(matches!(
            perm_pvalue(&x, &x, Statistic::Pearson, 99, 0),
            Err(MetricsError::Config(_))
        ));
    }

    #[test]
    fn pvalue_is_deterministic_per_seed() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 2.1).sin()).collect();
        let a = perm_pvalue(&x, &y, Statistic::Pearson, 500, 9).unwrap();
        let b = perm_pvalue(&x, &y, Statistic::Pearson, 500, 9).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn pairwise_counts_and_values() {
        let e = RealMatrix::from_fn(28, 3, |r, c| (r * 3 + c) as f64 + 1.0);
        assert_eq!(pairwise_cosine_vector(&e).unwrap().len(), 378);
        let two = RealMatrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let v = pairwise_cosine_vector(&two).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let same = RealMatrix::from_rows(&[[2.0, 1.0], [2.0, 1.0], [2.0, 1.0]]).unwrap();
        assert!(pairwise_cosine_vector(&same)
            .unwrap()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
        let zero = RealMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(pairwise_cosine_vector(&zero).is_err());
    }
}
