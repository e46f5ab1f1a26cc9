use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaselineMetrics, EvalMetrics, EvalSplit, RunOutcome, TrainConfig, TrainError};
use crate::nncore::{load_checkpoint, save_checkpoint, MlpParams};

pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const CODE_HEAD_FILE: &str = "code_head.ealn";
pub const AUDIO_HEAD_FILE: &str = "audio_head.ealn";
pub const METRICS_FILE: &str = "metrics.json";

/// Contents of the metrics file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub eval_split: EvalSplit,
    pub eval_size: usize,
    pub baseline: BaselineMetrics,
    pub trained: EvalMetrics,
}

impl RunMetrics {
    pub fn from_outcome(out: &RunOutcome) -> Self {
        Self {
            eval_split: out.config.eval_split,
            eval_size: out.eval_size,
            baseline: out.baseline,
            trained: out.metrics,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// A run directory read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config: TrainConfig,
    pub code: MlpParams,
    pub audio: MlpParams,
    pub metrics: Option<RunMetrics>,
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Config(format!("{}: {e}", path.display()))
}

/// Writes the config snapshot, loss history, both checkpoints and metrics.
pub fn write_run(dir: impl AsRef<Path>, out: &RunOutcome) -> Result<(), TrainError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let toml = toml::to_string(&out.config).map_err(|e| config_error(&dir.join(CONFIG_FILE), e))?;
    fs::write(dir.join(CONFIG_FILE), toml)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in out.heads.history.iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1).expect("write to string");
    }
    fs::write(dir.join(HISTORY_FILE), csv)?;
    save_checkpoint(&out.heads.code, dir.join(CODE_HEAD_FILE))?;
    save_checkpoint(&out.heads.audio, dir.join(AUDIO_HEAD_FILE))?;
    fs::write(
        dir.join(METRICS_FILE),
        RunMetrics::from_outcome(out).to_json(),
    )?;
    Ok(())
}

/// Reads a run directory; the metrics file is optional.
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunArtifacts, TrainError> {
    let dir = dir.as_ref();
    let cfg_path = dir.join(CONFIG_FILE);
    let config: TrainConfig =
        toml::from_str(&fs::read_to_string(&cfg_path)?).map_err(|e| config_error(&cfg_path, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    let metrics = if metrics_path.exists() {
        Some(
            serde_json::from_str(&fs::read_to_string(&metrics_path)?)
                .map_err(|e| config_error(&metrics_path, e))?,
        )
    } else {
        None
    };
    Ok(RunArtifacts {
        config,
        code: load_checkpoint(dir.join(CODE_HEAD_FILE))?,
        audio: load_checkpoint(dir.join(AUDIO_HEAD_FILE))?,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_pairs, SynthSpec};
    use crate::trainer::{evaluate_split, run};

    #[test]
    fn saved_run_reproduces_its_metrics() {
        let data = synth_pairs(&SynthSpec {
            n: 100,
            latent_dim: 3,
            code_dim: 6,
            audio_dim: 5,
            noise: 0.1,
            scramble: false,
            linear: false,
            identity_projections: false,
            seed: 4,
        })
        .unwrap();
        let cfg = TrainConfig {
            d_hidden: 8,
            d_out: 4,
            layers: 2,
            batch_size: 20,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = run(&data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &out).unwrap();
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.code, out.heads.code);
        let (base, m, size) = evaluate_split(&back.code, &back.audio, &data, &back.config).unwrap();
        let again = RunMetrics {
            eval_split: back.config.eval_split,
            eval_size: size,
            baseline: base,
            trained: m,
        };
        assert_eq!(Some(again), back.metrics);
        let hist = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
        assert_eq!(hist.lines().count(), 4);
        assert!(hist.starts_with("epoch,mean_loss\n1,"));
    }
}
