use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(DatasetError::Config("split fractions must be ≥ 0".into()));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Config(format!(
                "split fractions sum to {}, expected 1",
                f.iter().sum::<f64>()
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` items by largest-remainder rounding.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let f = [self.train, self.val, self.test];
        let exact: Vec<f64> = f.iter().map(|v| v * n as f64).collect();
        let mut sizes: [usize; 3] = [0; 3];
        for i in 0..3 {
            sizes[i] = (exact[i] + 1e-9).floor() as usize;
        }
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - sizes[a] as f64;
            let rb = exact[b] - sizes[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Seeded shuffle followed by a contiguous train/val/test partition.
///
/// Records sharing a template are not kept together, so near-duplicates may
/// straddle splits.
pub fn split(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(DatasetError::Config("cannot split an empty dataset".into()));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_from(spec.seed));
    let [a, b, _] = spec.sizes(dataset.len());
    let take = |range: &[usize]| {
        Dataset::new(
            range
                .iter()
                .map(|&i| dataset.records()[i].clone())
                .collect(),
        )
    };
    Ok((
        take(&idx[..a])?,
        take(&idx[a..a + b])?,
        take(&idx[a + b..])?,
    ))
}
