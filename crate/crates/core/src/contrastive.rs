//! Cosine-similarity matrix between two batches and the InfoNCE objective.
//!
//! For a batch of `n` code rows `c_i` and audio rows `a_j`,
//! `S[i][j] = c_i·a_j / (‖c_i‖‖a_j‖)` and the code→audio loss is the mean
//! cross-entropy of each row's softmax over `S[i][·]/τ` against its diagonal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::{dot, norm, NnError, RealMatrix};

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("row {row} of the {side} batch has zero norm")]
    ZeroNorm { side: &'static str, row: usize },
    #[error(transparent)]
    Shape(#[from] NnError),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Softmax over audio candidates for each code anchor.
    #[default]
    CodeToAudio,
    /// Average of the code→audio and audio→code losses.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoNceConfig {
    pub temperature: f64,
    #[serde(default)]
    pub direction: Direction,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            direction: Direction::CodeToAudio,
        }
    }
}

impl InfoNceConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(ContrastiveError::Temperature(self.temperature))
        }
    }
}

/// `S` together with the unit rows needed to push gradients back to the inputs.
#[derive(Debug, Clone)]
pub struct CosineSimilarity {
    sim: RealMatrix,
    code_unit: RealMatrix,
    audio_unit: RealMatrix,
    code_norms: Vec<f64>,
    audio_norms: Vec<f64>,
}

fn unit_rows(
    m: &RealMatrix,
    side: &'static str,
) -> Result<(RealMatrix, Vec<f64>), ContrastiveError> {
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        if !(n > 0.0) || !n.is_finite() {
            return Err(ContrastiveError::ZeroNorm { side, row: r });
        }
        unit.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

impl CosineSimilarity {
    pub fn compute(code: &RealMatrix, audio: &RealMatrix) -> Result<Self, ContrastiveError> {
        if code.rows() != audio.rows() || code.cols() != audio.cols() {
            return Err(NnError::Dimension(format!(
                "code batch is {}x{}, audio batch is {}x{}",
                code.rows(),
                code.cols(),
                audio.rows(),
                audio.cols()
            ))
            .into());
        }
        let (code_unit, code_norms) = unit_rows(code, "code")?;
        let (audio_unit, audio_norms) = unit_rows(audio, "audio")?;
        let sim = code_unit.matmul_t(&audio_unit)?;
        Ok(Self {
            sim,
            code_unit,
            audio_unit,
            code_norms,
            audio_norms,
        })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.sim
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.sim
    }

    /// Pulls `∂L/∂S` back to `(∂L/∂C, ∂L/∂A)`.
    pub fn backward(
        &self,
        d_sim: &RealMatrix,
    ) -> Result<(RealMatrix, RealMatrix), ContrastiveError> {
        if d_sim.shape() != self.sim.shape() {
            return Err(NnError::Dimension("similarity gradient shape".into()).into());
        }
        let d_code_unit = d_sim.matmul(&self.audio_unit)?;
        let d_audio_unit = d_sim.t_matmul(&self.code_unit)?;
        Ok((
            project_out(&self.code_unit, &self.code_norms, d_code_unit),
            project_out(&self.audio_unit, &self.audio_norms, d_audio_unit),
        ))
    }
}

// ∂(x/‖x‖) backward: (g − u(u·g)) / ‖x‖
fn project_out(unit: &RealMatrix, norms: &[f64], mut grad: RealMatrix) -> RealMatrix {
    for (r, n) in norms.iter().enumerate() {
        let u = unit.row(r);
        let along = dot(u, grad.row(r));
        for (g, ui) in grad.row_mut(r).iter_mut().zip(u) {
            *g = (*g - ui * along) / n;
        }
    }
    grad
}

pub fn cosine_sim_matrix(
    code: &RealMatrix,
    audio: &RealMatrix,
) -> Result<RealMatrix, ContrastiveError> {
    CosineSimilarity::compute(code, audio).map(CosineSimilarity::into_matrix)
}

fn square(s: &RealMatrix) -> Result<usize, ContrastiveError> {
    if s.rows() != s.cols() || s.rows() == 0 {
        return Err(NnError::Dimension(format!(
            "InfoNCE needs a non-empty square matrix, got {}x{}",
            s.rows(),
            s.cols()
        ))
        .into());
    }
    Ok(s.rows())
}

// mean over rows of logsumexp(S[i]/τ) − S[i][i]/τ
fn row_loss(s: &RealMatrix, tau: f64) -> f64 {
    let n = s.rows();
    let mut total = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let lse = max + row.iter().map(|&v| (v / tau - max).exp()).sum::<f64>().ln();
        total += lse - row[i] / tau;
    }
    total / n as f64
}

fn row_grad(s: &RealMatrix, tau: f64) -> RealMatrix {
    let n = s.rows();
    let mut g = RealMatrix::zeros(n, n);
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let exps: Vec<f64> = row.iter().map(|&v| (v / tau - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = g.row_mut(i);
        for j in 0..n {
            let p = exps[j] / z;
            out[j] = (p - if i == j { 1.0 } else { 0.0 }) * scale;
        }
    }
    g
}

pub fn infonce_loss(s: &RealMatrix, cfg: &InfoNceConfig) -> Result<f64, ContrastiveError> {
    cfg.validate()?;
    let n = square(s)?;
    if n == 1 {
        return Ok(0.0);
    }
    let tau = cfg.temperature;
    Ok(match cfg.direction {
        Direction::CodeToAudio => row_loss(s, tau),
        Direction::Symmetric => 0.5 * (row_loss(s, tau) + row_loss(&s.transpose(), tau)),
    })
}

/// `∂L/∂S` for [`infonce_loss`].
pub fn infonce_grad(s: &RealMatrix, cfg: &InfoNceConfig) -> Result<RealMatrix, ContrastiveError> {
    cfg.validate()?;
    let n = square(s)?;
    if n == 1 {
        return Ok(RealMatrix::zeros(1, 1));
    }
    let tau = cfg.temperature;
    Ok(match cfg.direction {
        Direction::CodeToAudio => row_grad(s, tau),
        Direction::Symmetric => {
            let a = row_grad(s, tau);
            let b = row_grad(&s.transpose(), tau).transpose();
            let mut out = a;
            for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = 0.5 * (*x + y);
            }
            out
        }
    })
}
