use std::path::Path;

use super::DatasetError;

/// Mono PCM samples scaled to `[-1, 1]` full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct WavAudio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WavAudio {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Reads 16/24/32-bit integer or 32-bit float PCM; keeps the first channel.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavAudio, DatasetError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| DatasetError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let bad = |e: hound::Error| DatasetError::Wav(format!("{}: {e}", path.display()));
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(bad)?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(bad)?
        }
        (fmt, bits) => {
            return Err(DatasetError::Wav(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    Ok(WavAudio {
        samples: interleaved.into_iter().step_by(channels).collect(),
        sample_rate: spec.sample_rate,
    })
}

fn spec(rate: u32, bits: u16, format: hound::SampleFormat) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: format,
    }
}

pub fn write_wav_i16(
    path: impl AsRef<Path>,
    samples: &[f64],
    rate: u32,
) -> Result<(), DatasetError> {
    let mut w = hound::WavWriter::create(path, spec(rate, 16, hound::SampleFormat::Int))
        .map_err(|e| DatasetError::Wav(e.to_string()))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v)
            .map_err(|e| DatasetError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| DatasetError::Wav(e.to_string()))
}

pub fn write_wav_f32(
    path: impl AsRef<Path>,
    samples: &[f64],
    rate: u32,
) -> Result<(), DatasetError> {
    let mut w = hound::WavWriter::create(path, spec(rate, 32, hound::SampleFormat::Float))
        .map_err(|e| DatasetError::Wav(e.to_string()))?;
    for &s in samples {
        w.write_sample(s as f32)
            .map_err(|e| DatasetError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| DatasetError::Wav(e.to_string()))
}
