use std::fs;
use std::path::{Path, PathBuf};

use codealign::dataset::SynthSpec;
use codealign::soniclink::LinkConfig;
use codealign::trainer::{SweepGrid, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// `[corpus]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub per_template: usize,
    pub templates: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            per_template: 200,
            templates: None,
            params: None,
            seed: 0,
        }
    }
}

/// `[sweep]` table; the shared settings come from `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub d_hidden: Vec<usize>,
    pub d_out: Vec<usize>,
    pub layers: Vec<usize>,
    pub lr: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let g = SweepGrid::default();
        Self {
            d_hidden: g.d_hidden,
            d_out: g.d_out,
            layers: g.layers,
            lr: g.lr,
            seeds: g.seeds,
        }
    }
}

impl SweepSection {
    pub fn grid(&self, base: TrainConfig) -> SweepGrid {
        SweepGrid {
            d_hidden: self.d_hidden.clone(),
            d_out: self.d_out.clone(),
            layers: self.layers.clone(),
            lr: self.lr.clone(),
            seeds: self.seeds,
            base,
        }
    }
}

/// The whole configuration file. Every table and key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub link: LinkConfig,
    pub synthetic: SynthSpec,
    pub corpus: CorpusSection,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Reads `path` (defaults when absent) and applies the master seed to
    /// every seeded section.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.train.seed = s;
            cfg.train.split.seed = s;
            cfg.synthetic.seed = s;
            cfg.corpus.seed = s;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(FileConfig::from_toml("").unwrap(), FileConfig::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let cfg = FileConfig::from_toml(
            "[train]\nepochs = 5\n[synthetic]\nn = 300\n[corpus]\nper_template = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.synthetic.n, 300);
        assert_eq!(cfg.synthetic.latent_dim, 16);
        assert_eq!(cfg.corpus.per_template, 3);
    }

    #[test]
    fn unknown_key_is_a_usage_error_naming_the_key() {
        let err = FileConfig::from_toml("[train]\nepoch = 5\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("epoch")));
    }

    #[test]
    fn master_seed_reaches_every_section() {
        let cfg = FileConfig::load(None, Some(9)).unwrap();
        assert_eq!(
            [
                cfg.train.seed,
                cfg.train.split.seed,
                cfg.synthetic.seed,
                cfg.corpus.seed
            ],
            [9; 4]
        );
    }
}
