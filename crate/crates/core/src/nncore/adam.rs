use super::{Gradients, MlpParams, NnError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.trainable().iter().map(|s| s.len()).collect();
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn step(
        &mut self,
        params: &mut MlpParams,
        grads: &Gradients,
        lr: f64,
    ) -> Result<(), NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let g = grads.trainable();
        if g.len() != self.m.len() || g.iter().zip(&self.m).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::Dimension(
                "gradients do not match optimizer state".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient".into()));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut p = params.trainable_mut();
        if p.len() != g.len() {
            return Err(NnError::Dimension(
                "parameters do not match optimizer state".into(),
            ));
        }
        for (((w, gi), m), v) in p.iter_mut().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for j in 0..w.len() {
                let gj = gi[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{Layer, Mode, RealMatrix};

    fn scalar_head(w: f64) -> MlpParams {
        MlpParams::from_layers(vec![Layer {
            weight: RealMatrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
            norm: None,
        }])
        .unwrap()
    }

    fn grads(w: f64, b: f64) -> Gradients {
        Gradients {
            layers: vec![crate::nncore::LayerGrad {
                weight: RealMatrix::from_vec(1, 1, vec![w]).unwrap(),
                bias: vec![b],
                gamma: None,
                beta: None,
            }],
            input: RealMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_head(0.3);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &grads(0.0, 0.0), 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_head(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &grads(1.0, 0.0), 0.1).unwrap();
        let w = p.layers()[0].weight.get(0, 0);
        // m̂ = 1, v̂ = 1, Δ = −0.1/(1 + 1e-8)
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!(st.second_moments().iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut p = scalar_head(0.5);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            st.step(&mut p, &grads(f64::NAN, 0.0), 0.1),
            Err(NnError::NonFinite(_))
        ));
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 0);
        assert!(st.step(&mut p, &grads(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn identical_runs_have_identical_trajectories() {
        let run = || {
            let cfg = crate::nncore::MlpConfig {
                d_in: 3,
                d_hidden: 5,
                d_out: 2,
                num_layers: 2,
                seed: 11,
            };
            let mut p = MlpParams::init(&cfg).unwrap();
            let mut st = AdamState::new(&p, AdamConfig::default());
            let x = RealMatrix::from_fn(6, 3, |r, c| ((r * 3 + c) as f64).sin());
            for _ in 0..5 {
                let (y, cache) = p.forward(&x, Mode::Train).unwrap();
                let g = p.backward(&cache, &y).unwrap();
                st.step(&mut p, &g, 1e-2).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
