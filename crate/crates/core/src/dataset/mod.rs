//! Paired code/audio embedding records: file format, validation, splitting,
//! a synthetic ground-truth generator and deterministic offline embedders.

mod embed;
mod records;
mod split;
mod synth;
mod wav;

pub use embed::{mock_audio_embed, mock_code_embed, EMBED_DIM, TARGET_RATE};
pub use records::{load_records, save_records, Dataset, PairRecord};
pub use split::{split, SplitSpec};
pub use synth::{synth_pairs, synth_pairs_with_truth, SynthSpec, SynthTruth};
pub use wav::{read_wav, write_wav_f32, write_wav_i16, WavAudio};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("wav: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
