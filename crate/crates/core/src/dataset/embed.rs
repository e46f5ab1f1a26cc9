//! Deterministic stand-ins for pretrained code and audio embedders.
//!
//! Both produce 768-wide unit vectors so they can be swapped for real
//! precomputed embeddings without changing anything downstream.

use rustfft::{num_complex::Complex, FftPlanner};

use super::DatasetError;

pub const EMBED_DIM: usize = 768;
/// Audio is resampled to this rate before feature extraction.
pub const TARGET_RATE: u32 = 16_000;

const FRAME: usize = 1024;
const HOP: usize = 512;
const BANDS: usize = 96;
const STATS: usize = 8;
const ENERGY_FLOOR: f64 = 1e-10;

fn sentinel() -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    v[0] = 1.0;
    v
}

fn normalize_or_sentinel(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return sentinel();
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of byte trigrams into 768 buckets, L2-normalized.
///
/// Texts without a trigram (or whose counts cancel) map to the unit vector `e₀`.
pub fn mock_code_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    for tri in text.as_bytes().windows(3) {
        let h = fnv1a64(tri);
        let bucket = (h % EMBED_DIM as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    normalize_or_sentinel(v)
}

fn resample_linear(pcm: &[f64], rate: u32) -> Vec<f64> {
    if rate == TARGET_RATE || pcm.len() < 2 {
        return pcm.to_vec();
    }
    let ratio = rate as f64 / TARGET_RATE as f64;
    let out_len = (((pcm.len() - 1) as f64) / ratio).floor() as usize + 1;
    (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let k = t.floor() as usize;
            let frac = t - k as f64;
            if k + 1 < pcm.len() {
                pcm[k] * (1.0 - frac) + pcm[k + 1] * frac
            } else {
                pcm[pcm.len() - 1]
            }
        })
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Bin edges (exclusive upper) of 96 mel-spaced bands covering DC..Nyquist.
fn band_edges() -> Vec<usize> {
    let bins = FRAME / 2 + 1;
    let nyquist = TARGET_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let mut edges = vec![0usize; BANDS + 1];
    for (i, e) in edges.iter_mut().enumerate().skip(1) {
        let hz = mel_to_hz(top * i as f64 / BANDS as f64);
        *e = (hz / nyquist * (bins - 1) as f64).round() as usize;
    }
    for i in 1..=BANDS {
        edges[i] = edges[i].max(edges[i - 1] + 1);
    }
    edges[BANDS] = bins;
    edges
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

// mean, std, min, max, p25, median, p75, mean |Δ| between consecutive frames
fn summarize(series: &[f64]) -> [f64; STATS] {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let std = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let delta = if series.len() > 1 {
        series.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    [
        mean,
        std,
        sorted[0],
        sorted[sorted.len() - 1],
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75),
        delta,
    ]
}

/// Band-energy summary embedding of a mono signal.
///
/// The signal is linearly resampled to 16 kHz, cut into Hann-windowed frames
/// of 1024 samples with hop 512, and reduced to 96 mel-spaced log band
/// energies per frame. Each band's trajectory is summarized by 8 statistics
/// (96 × 8 = 768), then L2-normalized. Silence maps to the unit vector `e₀`.
pub fn mock_audio_embed(pcm: &[f64], rate: u32) -> Result<Vec<f64>, DatasetError> {
    if pcm.is_empty() {
        return Err(DatasetError::Degenerate("empty audio signal".into()));
    }
    if rate == 0 {
        return Err(DatasetError::Degenerate(
            "sample rate must be positive".into(),
        ));
    }
    if pcm.iter().any(|v| !v.is_finite()) {
        return Err(DatasetError::Degenerate("non-finite audio sample".into()));
    }
    let mut signal = resample_linear(pcm, rate);
    if signal.iter().all(|&v| v == 0.0) {
        return Ok(sentinel());
    }
    if signal.len() < FRAME {
        signal.resize(FRAME, 0.0);
    }

    let window: Vec<f64> = (0..FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FRAME as f64).cos())
        .collect();
    let wsum: f64 = window.iter().sum();
    let edges = band_edges();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME);

    let frames = (signal.len() - FRAME) / HOP + 1;
    let mut band_series: Vec<Vec<f64>> = (0..BANDS).map(|_| Vec::with_capacity(frames)).collect();
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
    for f in 0..frames {
        let start = f * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (band, series) in band_series.iter_mut().enumerate() {
            let energy: f64 = buf[edges[band]..edges[band + 1]]
                .iter()
                .map(|c| c.norm_sqr() / (wsum * wsum))
                .sum();
            series.push((1.0 + energy / ENERGY_FLOOR).ln());
        }
    }

    let mut v = Vec::with_capacity(EMBED_DIM);
    for series in &band_series {
        v.extend_from_slice(&summarize(series));
    }
    Ok(normalize_or_sentinel(v))
}
