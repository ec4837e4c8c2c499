//! Small variational feedforward networks: biasless linear layers whose
//! weights are either deterministic, Gaussian with a low-rank covariance
//! factor, or Gaussian mean-field, with a reparametrized sampling forward
//! pass and a manually derived backward pass.
//!
//! The layer family is fixed and small, so reverse accumulation is written
//! out by hand and checked against finite differences rather than going
//! through an autodiff tape.

use thiserror::Error;

use crate::numerics::Matrix;
use crate::rng::{self, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("last layer must use the identity activation")]
    LastLayerNotIdentity,
    #[error("need at least 2 noise draws, got {0}")]
    TooFewDraws(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, h: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => h.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => h.to_vec(),
        }
    }

    fn derivative(&self, h: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => h.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
            Activation::Identity => vec![1.0; h.len()],
        }
    }
}

/// How a layer's weights are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Deterministic,
    /// vec(W) = μ + S z with S of shape (fan_in · fan_out) × rank.
    LowRank {
        rank: usize,
    },
    /// Per-weight standard deviations: w_i = μ_i + s_i z_i.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: WeightKind,
    pub activation: Activation,
    /// Extra multiplier applied to the layer output in the forward pass
    /// (used by the transfer-experiment tweaks; 1.0 by default).
    pub output_scale: f64,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, weights: WeightKind, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            weights,
            activation,
            output_scale: 1.0,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.fan_in * self.fan_out
    }

    /// Length of the reparameterization noise this layer consumes per
    /// forward pass.
    pub fn noise_len(&self) -> usize {
        match self.weights {
            WeightKind::Deterministic => 0,
            WeightKind::LowRank { rank } => rank,
            WeightKind::MeanField => self.weight_count(),
        }
    }

    /// Columns of the stored factor matrix.
    pub fn factor_cols(&self) -> usize {
        match self.weights {
            WeightKind::Deterministic => 0,
            WeightKind::LowRank { rank } => rank,
            WeightKind::MeanField => 1,
        }
    }
}

/// Validates a stack of layer specs: chained shapes, identity output layer.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), VarNetError> {
    if specs.is_empty() {
        return Err(VarNetError::ShapeMismatch("no layers".to_string()));
    }
    for pair in specs.windows(2) {
        if pair[0].fan_out != pair[1].fan_in {
            return Err(VarNetError::ShapeMismatch(format!(
                "layer output {} feeds layer input {}",
                pair[0].fan_out, pair[1].fan_in
            )));
        }
    }
    if specs.last().unwrap().activation != Activation::Identity {
        return Err(VarNetError::LastLayerNotIdentity);
    }
    Ok(())
}

/// Per-layer parameters: mean weights as a (fan_out × fan_in) matrix and the
/// covariance factor over the row-major flattened weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub mu: Matrix,
    pub factor: Matrix,
}

/// Parameters for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<LayerParams>,
}

impl NetParams {
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .map(|s| LayerParams {
                mu: Matrix::zeros(s.fan_out, s.fan_in),
                factor: Matrix::zeros(s.weight_count(), s.factor_cols()),
            })
            .collect();
        Self { layers }
    }

    /// In-place self += c · other over every block.
    pub fn axpy(&mut self, c: f64, other: &NetParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.mu.axpy(c, &b.mu);
            a.factor.axpy(c, &b.factor);
        }
    }

    /// Per-layer scaled update, for layer-specific learning rates.
    pub fn axpy_scaled(&mut self, mu_rates: &[f64], factor_rates: &[f64], other: &NetParams) {
        for (l, (a, b)) in self.layers.iter_mut().zip(&other.layers).enumerate() {
            a.mu.axpy(-mu_rates[l], &b.mu);
            a.factor.axpy(-factor_rates[l], &b.factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.mu.is_finite() && l.factor.is_finite())
    }
}

/// Materializes the weights of layer `spec` for a given noise draw:
/// W = unflatten(μ + S z) (or μ + s ⊙ z for mean-field).
fn realize_weights(spec: &LayerSpec, params: &LayerParams, z: &[f64]) -> Matrix {
    let mut w = params.mu.clone();
    match spec.weights {
        WeightKind::Deterministic => {}
        WeightKind::LowRank { .. } => {
            let shift = params.factor.matvec(z);
            for i in 0..spec.fan_out {
                for j in 0..spec.fan_in {
                    w[(i, j)] += shift[i * spec.fan_in + j];
                }
            }
        }
        WeightKind::MeanField => {
            for i in 0..spec.fan_out {
                for j in 0..spec.fan_in {
                    let idx = i * spec.fan_in + j;
                    w[(i, j)] += params.factor[(idx, 0)] * z[idx];
                }
            }
        }
    }
    w
}

/// Intermediate state of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per layer: input (post-activation of the previous layer).
    inputs: Vec<Vec<f64>>,
    /// Per layer: pre-activation h.
    preacts: Vec<Vec<f64>>,
    /// Per layer: realized weights for this draw.
    weights: Vec<Matrix>,
    /// Per layer: the noise used.
    noise: Vec<Vec<f64>>,
}

/// Forward pass with explicit per-layer noise; deterministic given the noise.
pub fn forward(
    params: &NetParams,
    specs: &[LayerSpec],
    x: &[f64],
    noise: &[Vec<f64>],
) -> Result<(Vec<f64>, ForwardCache), VarNetError> {
    validate_specs(specs)?;
    if params.layers.len() != specs.len() || noise.len() != specs.len() {
        return Err(VarNetError::ShapeMismatch(format!(
            "{} layers, {} param blocks, {} noise draws",
            specs.len(),
            params.layers.len(),
            noise.len()
        )));
    }
    if x.len() != specs[0].fan_in {
        return Err(VarNetError::ShapeMismatch(format!(
            "input length {} vs fan_in {}",
            x.len(),
            specs[0].fan_in
        )));
    }
    let mut inputs = Vec::with_capacity(specs.len());
    let mut preacts = Vec::with_capacity(specs.len());
    let mut weights = Vec::with_capacity(specs.len());
    let mut g = x.to_vec();
    for (l, spec) in specs.iter().enumerate() {
        if noise[l].len() != spec.noise_len() {
            return Err(VarNetError::ShapeMismatch(format!(
                "layer {l} expects noise of length {}, got {}",
                spec.noise_len(),
                noise[l].len()
            )));
        }
        let w = realize_weights(spec, &params.layers[l], &noise[l]);
        let mut h = w.matvec(&g);
        if spec.output_scale != 1.0 {
            for v in h.iter_mut() {
                *v *= spec.output_scale;
            }
        }
        inputs.push(g);
        g = if l + 1 == specs.len() {
            h.clone()
        } else {
            spec.activation.apply(&h)
        };
        preacts.push(h);
        weights.push(w);
    }
    Ok((
        g,
        ForwardCache {
            inputs,
            preacts,
            weights,
            noise: noise.to_vec(),
        },
    ))
}

/// Pathwise gradients of the sampled loss for the draw recorded in `cache`.
///
/// `loss_grad_at_output` is ∂ℓ/∂(network output); the result has the same
/// shapes as `NetParams`. With W = unflatten(μ + S z) the chain rule gives
/// ∂ℓ/∂μ = vec(∂ℓ/∂W) and ∂ℓ/∂S = vec(∂ℓ/∂W) zᵀ.
pub fn backward(
    params: &NetParams,
    specs: &[LayerSpec],
    cache: &ForwardCache,
    loss_grad_at_output: &[f64],
) -> Result<NetParams, VarNetError> {
    if loss_grad_at_output.len() != specs.last().map_or(0, |s| s.fan_out) {
        return Err(VarNetError::ShapeMismatch(format!(
            "upstream gradient length {} vs output dim {}",
            loss_grad_at_output.len(),
            specs.last().map_or(0, |s| s.fan_out)
        )));
    }
    if params.layers.len() != specs.len() || cache.weights.len() != specs.len() {
        return Err(VarNetError::ShapeMismatch(format!(
            "{} layers with {} param blocks and a {}-layer cache",
            specs.len(),
            params.layers.len(),
            cache.weights.len()
        )));
    }
    let mut grads = NetParams::zeros(specs);
    let mut delta = loss_grad_at_output.to_vec(); // ∂ℓ/∂h at current layer
    for l in (0..specs.len()).rev() {
        let spec = &specs[l];
        let g_in = &cache.inputs[l];
        // ∂ℓ/∂W = scale · δ g_inᵀ.
        let grad_layer = &mut grads.layers[l];
        for i in 0..spec.fan_out {
            let d = delta[i] * spec.output_scale;
            if d != 0.0 {
                for j in 0..spec.fan_in {
                    grad_layer.mu[(i, j)] = d * g_in[j];
                }
            }
        }
        match spec.weights {
            WeightKind::Deterministic => {}
            WeightKind::LowRank { rank } => {
                let z = &cache.noise[l];
                for i in 0..spec.fan_out {
                    for j in 0..spec.fan_in {
                        let gw = grad_layer.mu[(i, j)];
                        if gw == 0.0 {
                            continue;
                        }
                        let row = i * spec.fan_in + j;
                        for r in 0..rank {
                            grad_layer.factor[(row, r)] = gw * z[r];
                        }
                    }
                }
            }
            WeightKind::MeanField => {
                let z = &cache.noise[l];
                for i in 0..spec.fan_out {
                    for j in 0..spec.fan_in {
                        let row = i * spec.fan_in + j;
                        grad_layer.factor[(row, 0)] = grad_layer.mu[(i, j)] * z[row];
                    }
                }
            }
        }
        if l > 0 {
            // Propagate: ∂ℓ/∂g_{l−1} = scale · Wᵀ δ, then through the
            // previous activation.
            let mut upstream = vec![0.0; spec.fan_in];
            for i in 0..spec.fan_out {
                let d = delta[i] * spec.output_scale;
                if d == 0.0 {
                    continue;
                }
                for (j, u) in upstream.iter_mut().enumerate() {
                    *u += d * cache.weights[l][(i, j)];
                }
            }
            let act_deriv = specs[l - 1].activation.derivative(&cache.preacts[l - 1]);
            delta = upstream
                .iter()
                .zip(&act_deriv)
                .map(|(u, d)| u * d)
                .collect();
        }
    }
    Ok(grads)
}

/// Fresh per-layer noise for one forward pass, drawn from a derived stream.
pub fn draw_noise(specs: &[LayerSpec], seed: u64, draw_id: u64) -> Vec<Vec<f64>> {
    specs
        .iter()
        .enumerate()
        .map(|(l, s)| {
            let mut stream = rng::stream(seed, &[Purpose::ParamNoise as u64, draw_id, l as u64]);
            rng::standard_normal(&mut stream, s.noise_len())
        })
        .collect()
}

/// First moment and second central moment of each post-activation unit over
/// the reparameterization noise, for the initial and current parameters,
/// estimated with common random numbers.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub layers: Vec<LayerMoments>,
}

#[derive(Debug, Clone)]
pub struct LayerMoments {
    /// Per-unit mean at initialization and now.
    pub m1_init: Vec<f64>,
    pub m1_now: Vec<f64>,
    /// Per-unit variance at initialization and now.
    pub m2_init: Vec<f64>,
    pub m2_now: Vec<f64>,
}

impl LayerMoments {
    /// RMSE(v) = sqrt(‖v‖² / D) over the layer's units.
    fn rmse(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    pub fn m1_init_rmse(&self) -> f64 {
        Self::rmse(&self.m1_init)
    }

    pub fn m2_init_rmse(&self) -> f64 {
        Self::rmse(&self.m2_init)
    }

    /// RMSE of the change from initialization in the chosen moment.
    pub fn delta_rmse(&self, moment: usize) -> f64 {
        let (now, init) = match moment {
            1 => (&self.m1_now, &self.m1_init),
            2 => (&self.m2_now, &self.m2_init),
            _ => panic!("moment must be 1 or 2"),
        };
        let delta: Vec<f64> = now.iter().zip(init).map(|(a, b)| a - b).collect();
        Self::rmse(&delta)
    }

    /// RMSE of the per-unit change in standard deviation, the second-moment
    /// probe of the width-stability protocol.
    pub fn delta_std_rmse(&self) -> f64 {
        let delta: Vec<f64> = self
            .m2_now
            .iter()
            .zip(&self.m2_init)
            .map(|(a, b)| a.sqrt() - b.sqrt())
            .collect();
        Self::rmse(&delta)
    }
}

/// Monte-Carlo feature moments for `net0` (initialization) and `net_t`
/// (current), on one input, with `n_noise` shared draws.
pub fn feature_stats(
    net0: &NetParams,
    net_t: &NetParams,
    specs: &[LayerSpec],
    x: &[f64],
    n_noise: usize,
    rng_seed: u64,
) -> Result<FeatureStats, VarNetError> {
    validate_specs(specs)?;
    if n_noise < 2 {
        return Err(VarNetError::TooFewDraws(n_noise));
    }
    let n_layers = specs.len();
    let dims: Vec<usize> = specs.iter().map(|s| s.fan_out).collect();
    let mut acc = vec![MomentAcc::new(&dims, n_layers); 2];
    for draw in 0..n_noise {
        let noise = draw_noise(specs, rng_seed, draw as u64);
        for (which, net) in [net0, net_t].iter().enumerate() {
            let (_, cache) = forward(net, specs, x, &noise)?;
            // Post-activations per layer; the last layer's are its outputs.
            for l in 0..n_layers {
                let g = if l + 1 == n_layers {
                    cache.preacts[l].clone()
                } else {
                    specs[l].activation.apply(&cache.preacts[l])
                };
                acc[which].add(l, &g);
            }
        }
    }
    let layers = (0..n_layers)
        .map(|l| {
            let (m1_init, m2_init) = acc[0].finish(l, n_noise);
            let (m1_now, m2_now) = acc[1].finish(l, n_noise);
            LayerMoments {
                m1_init,
                m1_now,
                m2_init,
                m2_now,
            }
        })
        .collect();
    Ok(FeatureStats { layers })
}

#[derive(Clone)]
struct MomentAcc {
    sums: Vec<Vec<f64>>,
    sums_sq: Vec<Vec<f64>>,
}

impl MomentAcc {
    fn new(dims: &[usize], n_layers: usize) -> Self {
        Self {
            sums: (0..n_layers).map(|l| vec![0.0; dims[l]]).collect(),
            sums_sq: (0..n_layers).map(|l| vec![0.0; dims[l]]).collect(),
        }
    }

    fn add(&mut self, layer: usize, g: &[f64]) {
        for (i, &v) in g.iter().enumerate() {
            self.sums[layer][i] += v;
            self.sums_sq[layer][i] += v * v;
        }
    }

    fn finish(&self, layer: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        let m1: Vec<f64> = self.sums[layer].iter().map(|s| s / nf).collect();
        let m2: Vec<f64> = self.sums_sq[layer]
            .iter()
            .zip(&m1)
            .map(|(sq, m)| (sq / nf - m * m).max(0.0))
            .collect();
        (m1, m2)
    }
}
