//! Binary checkpoint format for a single head.
//!
//! ```text
//! "EALN"            4 bytes magic
//! version           u16 LE
//! layer count       u32 LE
//! per layer:
//!   fan_out, fan_in u32 LE each
//!   has_norm        u8 (0 or 1)
//! per layer payload, f64 LE:
//!   weight (row-major), bias, then gamma, beta, running mean, running var if has_norm
//! ```

use std::fs;
use std::path::Path;

use super::{BatchNorm, Layer, MlpParams, NnError, RealMatrix};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EALN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for layer in params.layers() {
        out.extend_from_slice(&(layer.fan_out() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.fan_in() as u32).to_le_bytes());
        out.push(layer.norm.is_some() as u8);
    }
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in params.layers() {
        put(layer.weight.as_slice());
        put(&layer.bias);
        if let Some(bn) = &layer.norm {
            put(&bn.gamma);
            put(&bn.beta);
            put(&bn.running_mean);
            put(&bn.running_var);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| NnError::Checkpoint("layer size overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpParams, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()?;
    let mut headers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let fan_out = r.u32()?;
        let fan_in = r.u32()?;
        let has_norm = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(NnError::Checkpoint(format!("bad norm flag {b}"))),
        };
        headers.push((fan_out, fan_in, has_norm));
    }
    let mut layers = Vec::with_capacity(count);
    for (fan_out, fan_in, has_norm) in headers {
        let weight = RealMatrix::from_vec(fan_out, fan_in, r.f64s(fan_out * fan_in)?)?;
        let bias = r.f64s(fan_out)?;
        let norm = if has_norm {
            Some(BatchNorm {
                gamma: r.f64s(fan_out)?,
                beta: r.f64s(fan_out)?,
                running_mean: r.f64s(fan_out)?,
                running_var: r.f64s(fan_out)?,
            })
        } else {
            None
        };
        layers.push(Layer { weight, bias, norm });
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    MlpParams::from_layers(layers)
}

pub fn save_checkpoint(params: &MlpParams, path: impl AsRef<Path>) -> Result<(), NnError> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParams, NnError> {
    decode_checkpoint(&fs::read(path)?)
}
