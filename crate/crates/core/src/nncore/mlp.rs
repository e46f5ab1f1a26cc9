use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{NnError, RealMatrix};
use crate::rng::rng_from;

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed)
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    /// Number of linear layers. With one layer `d_hidden` is unused.
    pub num_layers: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.num_layers == 0 {
            return Err(NnError::Config("num_layers must be at least 1".into()));
        }
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_hidden", self.d_hidden),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each linear layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let fan_in = if l == 0 { self.d_in } else { self.d_hidden };
                let fan_out = if l + 1 == self.num_layers {
                    self.d_out
                } else {
                    self.d_hidden
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// One affine map `y = x·Wᵀ + b`, optionally followed by batch-norm and GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `fan_out × fan_in`.
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    pub norm: Option<BatchNorm>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of one projection head.
#[derive(Debug, Clone)]
pub struct MlpParams {
    layers: Vec<Layer>,
    // identity + update counter, used to reject stale forward caches
    id: u64,
    version: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases, identity batch-norm.
    pub fn init(config: &MlpConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = rng_from(config.seed);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(l, (fan_in, fan_out))| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    RealMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound));
                Layer {
                    weight,
                    bias: vec![0.0; fan_out],
                    norm: (l != last).then(|| BatchNorm::new(fan_out)),
                }
            })
            .collect();
        Ok(Self {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Assembles parameters from explicit layers, checking that shapes chain,
    /// that only hidden layers carry batch-norm, and that running variances are positive.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Config("at least one layer is required".into()));
        }
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let w = layer.fan_out();
            if w == 0 || layer.fan_in() == 0 {
                return Err(NnError::Config(format!("layer {l} has an empty weight")));
            }
            if layer.bias.len() != w {
                return Err(NnError::Dimension(format!(
                    "layer {l}: bias has {} entries, expected {w}",
                    layer.bias.len()
                )));
            }
            if l > 0 && layers[l - 1].fan_out() != layer.fan_in() {
                return Err(NnError::Dimension(format!(
                    "layer {l} expects {} inputs but layer {} produces {}",
                    layer.fan_in(),
                    l - 1,
                    layers[l - 1].fan_out()
                )));
            }
            match (&layer.norm, l == last) {
                (Some(_), true) => {
                    return Err(NnError::Config("the output layer has no batch-norm".into()))
                }
                (None, false) => {
                    return Err(NnError::Config(format!(
                        "hidden layer {l} lacks batch-norm"
                    )))
                }
                (Some(bn), false) => {
                    if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                        .iter()
                        .any(|v| v.len() != w)
                    {
                        return Err(NnError::Dimension(format!(
                            "layer {l}: batch-norm vectors must have {w} entries"
                        )));
                    }
                    if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                        return Err(NnError::Config(format!(
                            "layer {l}: running variance must be strictly positive"
                        )));
                    }
                }
                (None, true) => {}
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total count of trainable scalars (weights, biases, γ, β).
    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.as_slice().len()
                    + l.bias.len()
                    + l.norm.as_ref().map_or(0, |bn| 2 * bn.gamma.len())
            })
            .sum()
    }

    /// Trainable parameter buffers in a fixed order: per layer W, b, then γ, β if present.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.as_slice());
            out.push(&layer.bias);
            if let Some(bn) = &layer.norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    /// Mutable view of [`Self::trainable`]. Invalidates outstanding forward caches.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(&mut layer.bias);
            if let Some(bn) = &mut layer.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    fn check_input(&self, x: &RealMatrix) -> Result<(), NnError> {
        if x.cols() != self.d_in() {
            return Err(NnError::Dimension(format!(
                "input has {} columns, head expects {}",
                x.cols(),
                self.d_in()
            )));
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite("forward input".into()));
        }
        Ok(())
    }

    /// Runs the head over a batch.
    ///
    /// Train mode normalizes hidden activations with batch statistics and folds
    /// them into the running statistics; eval mode uses the running statistics
    /// and leaves the parameters untouched.
    pub fn forward(
        &mut self,
        x: &RealMatrix,
        mode: Mode,
    ) -> Result<(RealMatrix, ForwardCache), NnError> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.forward_train(x),
        }
    }

    /// Eval-mode forward without a cache. Safe to call concurrently.
    pub fn infer(&self, x: &RealMatrix) -> Result<RealMatrix, NnError> {
        self.forward_eval(x).map(|(y, _)| y)
    }

    fn forward_eval(&self, x: &RealMatrix) -> Result<(RealMatrix, ForwardCache), NnError> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            let pre = affine(&act, layer)?;
            let (out, norm) = match &layer.norm {
                None => (pre.clone(), None),
                Some(bn) => {
                    let inv_std: Vec<f64> = bn
                        .running_var
                        .iter()
                        .map(|v| 1.0 / (v + BN_EPS).sqrt())
                        .collect();
                    let nc = normalize(&pre, &bn.running_mean, &inv_std, bn);
                    (nc.normed.map_gelu(), Some(nc))
                }
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut act, out),
                pre,
                norm,
            });
        }
        let cache = ForwardCache {
            mode: Mode::Eval,
            params_id: self.id,
            version: self.version,
            layers: caches,
        };
        Ok((act, cache))
    }

    fn forward_train(&mut self, x: &RealMatrix) -> Result<(RealMatrix, ForwardCache), NnError> {
        self.check_input(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(NnError::BatchSize(n));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &mut self.layers {
            let pre = affine(&act, layer)?;
            let (out, norm) = match &mut layer.norm {
                None => (pre.clone(), None),
                Some(bn) => {
                    let mean = pre.column_means();
                    let mut var = vec![0.0; pre.cols()];
                    for r in 0..n {
                        for ((v, x), m) in var.iter_mut().zip(pre.row(r)).zip(&mean) {
                            *v += (x - m) * (x - m);
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n as f64);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let nc = normalize(&pre, &mean, &inv_std, bn);
                    // running variance tracks the unbiased estimate
                    let unbias = n as f64 / (n as f64 - 1.0);
                    for j in 0..mean.len() {
                        bn.running_mean[j] =
                            (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * mean[j];
                        bn.running_var[j] =
                            (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * var[j] * unbias;
                    }
                    (nc.normed.map_gelu(), Some(nc))
                }
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut act, out),
                pre,
                norm,
            });
        }
        if !act.is_finite() {
            return Err(NnError::NonFinite("forward output".into()));
        }
        let cache = ForwardCache {
            mode: Mode::Train,
            params_id: self.id,
            version: self.version,
            layers: caches,
        };
        Ok((act, cache))
    }

    /// Backpropagates `dy` through a train-mode forward pass.
    pub fn backward(&self, cache: &ForwardCache, dy: &RealMatrix) -> Result<Gradients, NnError> {
        if cache.mode != Mode::Train {
            return Err(NnError::Cache(
                "cache was produced by an eval-mode forward".into(),
            ));
        }
        if cache.params_id != self.id || cache.version != self.version {
            return Err(NnError::Cache(
                "cache was produced by different or since-updated parameters".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::Cache("layer count differs".into()));
        }
        let n = cache.layers[0].input.rows();
        if dy.shape() != (n, self.d_out()) {
            return Err(NnError::Dimension(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                dy.rows(),
                dy.cols(),
                n,
                self.d_out()
            )));
        }

        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (dpre, dgamma, dbeta) = match (&layer.norm, &lc.norm) {
                (None, None) => (upstream, None, None),
                (Some(bn), Some(nc)) => {
                    let (dpre, dg, db) = batchnorm_backward(&upstream, nc, bn);
                    (dpre, Some(dg), Some(db))
                }
                _ => return Err(NnError::Cache("batch-norm layout differs".into())),
            };
            let weight = dpre.t_matmul(&lc.input)?;
            let bias = dpre.column_sums();
            upstream = dpre.matmul(&layer.weight)?;
            grads.push(LayerGrad {
                weight,
                bias,
                gamma: dgamma,
                beta: dbeta,
            });
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: upstream,
        })
    }
}

fn affine(x: &RealMatrix, layer: &Layer) -> Result<RealMatrix, NnError> {
    let mut z = x.matmul_t(&layer.weight)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn normalize(pre: &RealMatrix, mean: &[f64], inv_std: &[f64], bn: &BatchNorm) -> NormCache {
    let mut x_hat = pre.clone();
    let mut normed = pre.clone();
    for r in 0..pre.rows() {
        let xr = x_hat.row_mut(r);
        for j in 0..xr.len() {
            xr[j] = (xr[j] - mean[j]) * inv_std[j];
        }
        let nr = normed.row_mut(r);
        for j in 0..nr.len() {
            nr[j] = bn.gamma[j] * xr[j] + bn.beta[j];
        }
    }
    NormCache {
        x_hat,
        inv_std: inv_std.to_vec(),
        normed,
    }
}

fn batchnorm_backward(
    dact: &RealMatrix,
    nc: &NormCache,
    bn: &BatchNorm,
) -> (RealMatrix, Vec<f64>, Vec<f64>) {
    let (n, w) = dact.shape();
    let nf = n as f64;
    // through GELU
    let mut du = dact.clone();
    for (g, u) in du.as_mut_slice().iter_mut().zip(nc.normed.as_slice()) {
        *g *= gelu_derivative(*u);
    }
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for r in 0..n {
        for j in 0..w {
            let g = du.get(r, j);
            dgamma[j] += g * nc.x_hat.get(r, j);
            dbeta[j] += g;
        }
    }
    // dxhat = du·γ; dpre = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
    let mut sum_dxhat = vec![0.0; w];
    let mut sum_dxhat_xhat = vec![0.0; w];
    for r in 0..n {
        for j in 0..w {
            let d = du.get(r, j) * bn.gamma[j];
            sum_dxhat[j] += d;
            sum_dxhat_xhat[j] += d * nc.x_hat.get(r, j);
        }
    }
    let mut dpre = RealMatrix::zeros(n, w);
    for r in 0..n {
        for j in 0..w {
            let d = du.get(r, j) * bn.gamma[j];
            let v = nc.inv_std[j] / nf
                * (nf * d - sum_dxhat[j] - nc.x_hat.get(r, j) * sum_dxhat_xhat[j]);
            dpre.set(r, j, v);
        }
    }
    (dpre, dgamma, dbeta)
}

trait MapGelu {
    fn map_gelu(&self) -> RealMatrix;
}

impl MapGelu for RealMatrix {
    fn map_gelu(&self) -> RealMatrix {
        let mut out = self.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        out
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    x_hat: RealMatrix,
    inv_std: Vec<f64>,
    /// γ·x̂ + β, the GELU input.
    normed: RealMatrix,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: RealMatrix,
    pre: RealMatrix,
    norm: Option<NormCache>,
}

/// Intermediates retained by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    params_id: u64,
    version: u64,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Linear-layer output of layer `l`, before any normalization.
    pub fn pre_activation(&self, l: usize) -> Option<&RealMatrix> {
        self.layers.get(l).map(|c| &c.pre)
    }

    /// Batch-normalized activations of hidden layer `l` before γ/β are applied.
    pub fn normalized(&self, l: usize) -> Option<&RealMatrix> {
        self.layers.get(l)?.norm.as_ref().map(|n| &n.x_hat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the forward input.
    pub input: RealMatrix,
}

impl Gradients {
    /// Buffers in the same order as [`MlpParams::trainable_mut`].
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.layers {
            out.push(g.weight.as_slice());
            out.push(&g.bias);
            if let (Some(gm), Some(bt)) = (&g.gamma, &g.beta) {
                out.push(gm);
                out.push(bt);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.trainable()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}
