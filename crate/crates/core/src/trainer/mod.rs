//! Contrastive training of the two projection heads, evaluation, and the
//! hyperparameter sweep.

mod artifacts;
mod sweep;

pub use artifacts::{load_run, write_run, RunArtifacts, RunMetrics};
pub use sweep::{sweep, sweep_csv, sweep_table, ConfigResult, SweepGrid, SweepPoint, SweepReport};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{
    infonce_grad, infonce_loss, ContrastiveError, CosineSimilarity, Direction, InfoNceConfig,
};
use crate::dataset::{split, Dataset, DatasetError, SplitSpec};
use crate::metrics::{linear_cka, mean_cca, MetricsError, DEFAULT_RIDGE};
use crate::nncore::{
    AdamConfig, AdamState, Gradients, MlpConfig, MlpParams, Mode, NnError, RealMatrix,
};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which partition the reported metrics are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_hidden: usize,
    pub d_out: usize,
    pub layers: usize,
    pub temperature: f64,
    pub direction: Direction,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ridge: f64,
    pub eval_split: EvalSplit,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_hidden: 128,
            d_out: 64,
            layers: 3,
            temperature: 0.07,
            direction: Direction::CodeToAudio,
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            ridge: DEFAULT_RIDGE,
            eval_split: EvalSplit::Test,
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |key: &str, why: String| Err(TrainError::Config(format!("{key}: {why}")));
        if self.batch_size < 2 {
            return bad(
                "batch_size",
                format!("must be ≥ 2, got {}", self.batch_size),
            );
        }
        if self.epochs == 0 {
            return bad("epochs", "must be ≥ 1".into());
        }
        if self.layers == 0 {
            return bad("layers", "must be ≥ 1".into());
        }
        if self.d_out == 0 || (self.layers > 1 && self.d_hidden == 0) {
            return bad("d_out", "widths must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge", format!("must be ≥ 0, got {}", self.ridge));
        }
        self.infonce()
            .validate()
            .or_else(|e| bad("temperature", e.to_string()))?;
        self.split
            .validate()
            .or_else(|e| bad("split", e.to_string()))?;
        Ok(())
    }

    pub fn infonce(&self) -> InfoNceConfig {
        InfoNceConfig {
            temperature: self.temperature,
            direction: self.direction,
        }
    }

    /// Head configurations for input widths `d_code` and `d_audio`.
    pub fn head_configs(&self, d_code: usize, d_audio: usize) -> (MlpConfig, MlpConfig) {
        let head = |d_in, stream| MlpConfig {
            d_in,
            d_hidden: self.d_hidden,
            d_out: self.d_out,
            num_layers: self.layers,
            seed: derive_seed(self.seed, &[stream]),
        };
        (head(d_code, 1), head(d_audio, 2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHeads {
    pub code: MlpParams,
    pub audio: MlpParams,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

/// Raw-embedding alignment before any training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub cka: f64,
    pub cca: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub cka: f64,
    pub cca: f64,
    pub mean_diagonal_cosine: f64,
    pub retrieval_at_1: f64,
}

/// Loss and gradients of both heads for one batch.
#[derive(Debug, Clone)]
pub struct PipelineStep {
    pub loss: f64,
    pub code: Gradients,
    pub audio: Gradients,
}

/// Train-mode forward through both heads, cosine similarity and InfoNCE, then
/// backward to every parameter. Running statistics are updated as a side effect.
pub fn pipeline_step(
    code_head: &mut MlpParams,
    audio_head: &mut MlpParams,
    code: &RealMatrix,
    audio: &RealMatrix,
    loss: &InfoNceConfig,
) -> Result<PipelineStep, TrainError> {
    let (yc, cache_c) = code_head.forward(code, Mode::Train)?;
    let (ya, cache_a) = audio_head.forward(audio, Mode::Train)?;
    let sim = CosineSimilarity::compute(&yc, &ya)?;
    let value = infonce_loss(sim.matrix(), loss)?;
    let d_sim = infonce_grad(sim.matrix(), loss)?;
    let (d_code, d_audio) = sim.backward(&d_sim)?;
    Ok(PipelineStep {
        loss: value,
        code: code_head.backward(&cache_c, &d_code)?,
        audio: audio_head.backward(&cache_a, &d_audio)?,
    })
}

/// Splits the dataset per the configuration.
pub fn split_for(dataset: &Dataset, config: &TrainConfig) -> Result<[Dataset; 3], TrainError> {
    let (train, val, test) = split(dataset, &config.split)?;
    Ok([train, val, test])
}

fn eval_part<'a>(parts: &'a [Dataset; 3], which: EvalSplit) -> &'a Dataset {
    match which {
        EvalSplit::Train => &parts[0],
        EvalSplit::Val => &parts[1],
        EvalSplit::Test => &parts[2],
    }
}

/// Trains both heads on `train`. Each epoch reshuffles with a seed derived from
/// `(seed, epoch)` and drops the final ragged batch.
pub fn train_on(train: &Dataset, config: &TrainConfig) -> Result<TrainedHeads, TrainError> {
    config.validate()?;
    let n = train.len();
    if n < config.batch_size {
        return Err(TrainError::Config(format!(
            "batch_size: {} exceeds the {n} training records",
            config.batch_size
        )));
    }
    let (d_code, d_audio) = (
        train.code_dim().unwrap_or(0),
        train.audio_dim().unwrap_or(0),
    );
    let (cfg_c, cfg_a) = config.head_configs(d_code, d_audio);
    let mut code = MlpParams::init(&cfg_c)?;
    let mut audio = MlpParams::init(&cfg_a)?;
    let mut opt_c = AdamState::new(&code, AdamConfig::default());
    let mut opt_a = AdamState::new(&audio, AdamConfig::default());
    let loss_cfg = config.infonce();
    let xc = train.code_matrix();
    let xa = train.audio_matrix();

    let batches = n / config.batch_size;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from(derive_seed(config.seed, &[3, epoch as u64])));
        let mut total = 0.0;
        for b in 0..batches {
            let idx = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let step = pipeline_step(
                &mut code,
                &mut audio,
                &xc.select_rows(idx),
                &xa.select_rows(idx),
                &loss_cfg,
            )?;
            if !step.loss.is_finite() || !step.code.is_finite() || !step.audio.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss: step.loss,
                });
            }
            opt_c.step(&mut code, &step.code, config.lr)?;
            opt_a.step(&mut audio, &step.audio, config.lr)?;
            total += step.loss;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {}: mean loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    Ok(TrainedHeads {
        code,
        audio,
        history,
    })
}

/// Splits the dataset and trains on the training partition.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedHeads, TrainError> {
    config.validate()?;
    let parts = split_for(dataset, config)?;
    train_on(&parts[0], config)
}

/// CKA and mean CCA between the raw code and audio embeddings.
pub fn baseline_metrics(data: &Dataset, ridge: f64) -> Result<BaselineMetrics, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Config("evaluation split is empty".into()));
    }
    let (c, a) = (data.code_matrix(), data.audio_matrix());
    Ok(BaselineMetrics {
        cka: linear_cka(&c, &a)?,
        cca: mean_cca(&c, &a, ridge)?,
    })
}

/// Projects `data` through both heads in eval mode and scores the alignment.
pub fn evaluate(
    code_head: &MlpParams,
    audio_head: &MlpParams,
    data: &Dataset,
    ridge: f64,
) -> Result<EvalMetrics, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Config("evaluation split is empty".into()));
    }
    let yc = code_head.infer(&data.code_matrix())?;
    let ya = audio_head.infer(&data.audio_matrix())?;
    let s = CosineSimilarity::compute(&yc, &ya)?.into_matrix();
    let n = s.rows();
    let mut diag = 0.0;
    let mut hits = 0usize;
    for i in 0..n {
        let row = s.row(i);
        diag += row[i];
        let best = (0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        if best == i {
            hits += 1;
        }
    }
    Ok(EvalMetrics {
        cka: linear_cka(&yc, &ya)?,
        cca: mean_cca(&yc, &ya, ridge)?,
        mean_diagonal_cosine: diag / n as f64,
        retrieval_at_1: hits as f64 / n as f64,
    })
}

/// Everything one training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub config: TrainConfig,
    pub heads: TrainedHeads,
    pub baseline: BaselineMetrics,
    pub metrics: EvalMetrics,
    pub eval_size: usize,
}

/// Split, baseline, train and evaluate on the configured partition.
pub fn run(dataset: &Dataset, config: &TrainConfig) -> Result<RunOutcome, TrainError> {
    config.validate()?;
    let parts = split_for(dataset, config)?;
    let heads = train_on(&parts[0], config)?;
    let eval = eval_part(&parts, config.eval_split);
    let baseline = baseline_metrics(eval, config.ridge)?;
    let metrics = evaluate(&heads.code, &heads.audio, eval, config.ridge)?;
    Ok(RunOutcome {
        config: config.clone(),
        heads,
        baseline,
        metrics,
        eval_size: eval.len(),
    })
}

/// Re-evaluates saved heads on the partition the configuration selects.
pub fn evaluate_split(
    code_head: &MlpParams,
    audio_head: &MlpParams,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(BaselineMetrics, EvalMetrics, usize), TrainError> {
    config.validate()?;
    let parts = split_for(dataset, config)?;
    let eval = eval_part(&parts, config.eval_split);
    Ok((
        baseline_metrics(eval, config.ridge)?,
        evaluate(code_head, audio_head, eval, config.ridge)?,
        eval.len(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_pairs, SynthSpec};

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n: 120,
            latent_dim: 4,
            code_dim: 10,
            audio_dim: 8,
            noise: 0.1,
            scramble: true,
            linear: false,
            identity_projections: false,
            seed,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            d_hidden: 16,
            d_out: 6,
            layers: 2,
            batch_size: 32,
            epochs: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_names_the_key() {
        let check = |c: TrainConfig, key: &str| match c.validate() {
            Err(TrainError::Config(m)) => assert!(m.starts_with(key), "{m}"),
            other => panic!("unexpected {other:?}"),
        };
        check(
            TrainConfig {
                epochs: 0,
                ..small_config()
            },
            "epochs",
        );
        check(
            TrainConfig {
                batch_size: 1,
                ..small_config()
            },
            "batch_size",
        );
        check(
            TrainConfig {
                lr: 0.0,
                ..small_config()
            },
            "lr",
        );
        check(
            TrainConfig {
                temperature: -1.0,
                ..small_config()
            },
            "temperature",
        );
    }

    #[test]
    fn batch_larger_than_train_split_is_rejected() {
        let data = synth_pairs(&small_spec(0)).unwrap();
        let cfg = TrainConfig {
            batch_size: 200,
            ..small_config()
        };
        assert!(matches!(train(&data, &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn history_has_one_entry_per_epoch_and_is_deterministic() {
        let data = synth_pairs(&small_spec(1)).unwrap();
        let a = train(&data, &small_config()).unwrap();
        let b = train(&data, &small_config()).unwrap();
        assert_eq!(a.history.len(), 5);
        assert_eq!(a, b);
        assert!(a.history.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_embeddings_have_unit_baseline() {
        let spec = SynthSpec {
            n: 400,
            scramble: false,
            ..small_spec(2)
        };
        let mut records = synth_pairs(&spec).unwrap().into_records();
        for r in &mut records {
            r.audio_embedding = r.code_embedding.clone();
        }
        let b = baseline_metrics(&Dataset::new(records).unwrap(), 1e-8).unwrap();
        assert!((b.cka - 1.0).abs() < 1e-6);
        assert!((b.cca - 1.0).abs() < 1e-6, "{}", b.cca);
    }

    #[test]
    fn evaluation_is_pure() {
        let data = synth_pairs(&small_spec(3)).unwrap();
        let out = run(&data, &small_config()).unwrap();
        let parts = split_for(&data, &small_config()).unwrap();
        let e1 = evaluate(&out.heads.code, &out.heads.audio, &parts[2], DEFAULT_RIDGE).unwrap();
        let e2 = evaluate(&out.heads.code, &out.heads.audio, &parts[2], DEFAULT_RIDGE).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1, out.metrics);
        assert!((0.0..=1.0).contains(&e1.retrieval_at_1));
    }
}
