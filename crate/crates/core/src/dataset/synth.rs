use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, PairRecord};
use crate::nncore::RealMatrix;
use crate::rng::{derive_seed, rng_from};

/// Log-scale half-width of the per-dimension gain applied when scrambling.
pub const SCRAMBLE_LOG_GAIN: f64 = 3.0;
/// Scale of the code-only nuisance factors added when scrambling.
pub const SCRAMBLE_NUISANCE: f64 = 0.9;
/// Number of code-only nuisance factors (capped at the latent width).
pub const SCRAMBLE_NUISANCE_RANK: usize = 1;

/// Parameters of the synthetic paired-embedding generator.
///
/// Each sample draws a latent `z ~ N(0, I)`; the code side is `P_c·z + σ·ε` and
/// the audio side `tanh(P_a·z) + σ·ε′` (or `P_a·z + σ·ε′` in linear mode).
///
/// Scrambling adds a code-only nuisance term `g·Q_c·w` with its own latent
/// `w ~ N(0, I)`, then applies a random per-dimension gain and a permutation to
/// the code side. The nuisance carries variance the audio side cannot explain,
/// which is what keeps raw linear CKA low; the gain alone cannot, because a
/// single dominant random direction of `z` still aligns with the audio side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub latent_dim: usize,
    pub code_dim: usize,
    pub audio_dim: usize,
    pub noise: f64,
    /// Per-dimension gain and permutation on the code side.
    pub scramble: bool,
    /// Skip the `tanh` on the audio side.
    pub linear: bool,
    /// Use identity projections; requires all three widths to match.
    pub identity_projections: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::acceptance(0)
    }
}

impl SynthSpec {
    /// The generator configuration used by the acceptance suite.
    pub fn acceptance(seed: u64) -> Self {
        Self {
            n: 2000,
            latent_dim: 16,
            code_dim: 64,
            audio_dim: 48,
            noise: 0.1,
            scramble: true,
            linear: false,
            identity_projections: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n < 4 {
            return Err(DatasetError::Config(format!(
                "n must be ≥ 4, got {}",
                self.n
            )));
        }
        if self.latent_dim == 0 || self.latent_dim > self.code_dim.min(self.audio_dim) {
            return Err(DatasetError::Config(format!(
                "latent_dim must be in 1..=min(code_dim, audio_dim), got {}",
                self.latent_dim
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(DatasetError::Config("noise must be ≥ 0".into()));
        }
        if self.identity_projections
            && !(self.latent_dim == self.code_dim && self.code_dim == self.audio_dim)
        {
            return Err(DatasetError::Config(
                "identity projections need latent_dim == code_dim == audio_dim".into(),
            ));
        }
        Ok(())
    }
}

/// Generator internals, exposed so tests can build exact inverse maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// `n × latent_dim`
    pub latents: RealMatrix,
    /// `code_dim × latent_dim`
    pub code_projection: RealMatrix,
    /// `audio_dim × latent_dim`
    pub audio_projection: RealMatrix,
    /// `code_dim × nuisance rank`; zero-width unless scrambled.
    pub nuisance_projection: RealMatrix,
    pub code_gain: Vec<f64>,
    /// Output column `k` holds scaled input column `code_permutation[k]`.
    pub code_permutation: Vec<usize>,
}

fn gaussian_projection(rows: usize, cols: usize, seed: u64) -> RealMatrix {
    let mut rng = rng_from(seed);
    let s = 1.0 / (cols as f64).sqrt();
    RealMatrix::from_fn(rows, cols, |_, _| s * rng.sample::<f64, _>(StandardNormal))
}

pub fn synth_pairs(spec: &SynthSpec) -> Result<Dataset, DatasetError> {
    synth_pairs_with_truth(spec).map(|(d, _)| d)
}

pub fn synth_pairs_with_truth(spec: &SynthSpec) -> Result<(Dataset, SynthTruth), DatasetError> {
    spec.validate()?;
    let (code_projection, audio_projection) = if spec.identity_projections {
        (
            RealMatrix::identity(spec.latent_dim),
            RealMatrix::identity(spec.latent_dim),
        )
    } else {
        (
            gaussian_projection(spec.code_dim, spec.latent_dim, derive_seed(spec.seed, &[1])),
            gaussian_projection(
                spec.audio_dim,
                spec.latent_dim,
                derive_seed(spec.seed, &[2]),
            ),
        )
    };
    let nuisance_rank = if spec.scramble {
        SCRAMBLE_NUISANCE_RANK.min(spec.latent_dim)
    } else {
        0
    };
    let nuisance_projection =
        gaussian_projection(spec.code_dim, nuisance_rank, derive_seed(spec.seed, &[5]))
            .scale(SCRAMBLE_NUISANCE);
    let (code_gain, code_permutation) = if spec.scramble {
        let mut rng = rng_from(derive_seed(spec.seed, &[3]));
        let gain: Vec<f64> = (0..spec.code_dim)
            .map(|_| {
                rng.random_range(-SCRAMBLE_LOG_GAIN..=SCRAMBLE_LOG_GAIN)
                    .exp()
            })
            .collect();
        let mut perm: Vec<usize> = (0..spec.code_dim).collect();
        perm.shuffle(&mut rng);
        (gain, perm)
    } else {
        (vec![1.0; spec.code_dim], (0..spec.code_dim).collect())
    };

    let mut rng = rng_from(derive_seed(spec.seed, &[4]));
    let mut nuisance_rng = rng_from(derive_seed(spec.seed, &[6]));
    let mut latents = RealMatrix::zeros(spec.n, spec.latent_dim);
    let mut w = vec![0.0; nuisance_rank];
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        for v in latents.row_mut(i) {
            *v = rng.sample(StandardNormal);
        }
        let z = latents.row(i);
        w.iter_mut()
            .for_each(|v| *v = nuisance_rng.sample(StandardNormal));
        let raw_code: Vec<f64> = (0..spec.code_dim)
            .map(|k| {
                let p = crate::nncore::dot(code_projection.row(k), z)
                    + crate::nncore::dot(nuisance_projection.row(k), &w);
                code_gain[k] * (p + spec.noise * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let code_embedding: Vec<f64> = code_permutation.iter().map(|&k| raw_code[k]).collect();
        let audio_embedding: Vec<f64> = (0..spec.audio_dim)
            .map(|k| {
                let p = crate::nncore::dot(audio_projection.row(k), z);
                let p = if spec.linear { p } else { p.tanh() };
                p + spec.noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut meta = BTreeMap::new();
        meta.insert("source".to_string(), "synthetic".to_string());
        records.push(PairRecord {
            id: format!("synth-{i:05}"),
            code_text: None,
            code_embedding,
            audio_embedding,
            meta,
        });
    }
    let truth = SynthTruth {
        latents,
        code_projection,
        audio_projection,
        nuisance_projection,
        code_gain,
        code_permutation,
    };
    Ok((Dataset::new(records)?, truth))
}
