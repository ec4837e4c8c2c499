//! Minibatched training of variational networks on squared-error tasks,
//! with per-layer learning rates from a parametrization and optional
//! analytic regularizers.

use crate::parametrization::LayerScaling;
use crate::rng::{self, Purpose};
use crate::varnet::{self, LayerSpec, NetParams};

use super::HarnessError;

/// Supervised task with vector inputs and outputs.
#[derive(Debug, Clone)]
pub struct NetTask {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl NetTask {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NetTrainConfig {
    pub steps: usize,
    /// Parameter samples per objective evaluation.
    pub m_samples: usize,
    pub global_lr: f64,
    /// Heavy-ball momentum γ ∈ [0, 1).
    pub momentum: f64,
    pub record_every: usize,
}

#[derive(Debug)]
pub struct NetTrainResult {
    pub params: NetParams,
    /// (step, minibatch objective estimate) at the recording stride.
    pub loss_curve: Vec<(usize, f64)>,
}

/// Analytic regularizer: returns (value, gradients) at the current
/// parameters, with any strength λ already folded in.
pub type NetRegularizer<'a> = dyn Fn(&NetParams) -> Result<(f64, NetParams), HarnessError> + 'a;

/// Full-batch SGD on the sampled expected squared-error loss
/// (1/(N M)) Σ_n Σ_m ½‖y_n − f_{w_m}(x_n)‖², with fresh per-sample noise
/// each step and per-layer learning rates global_lr · mult.
pub fn train_net(
    specs: &[LayerSpec],
    params0: &NetParams,
    scalings: &[LayerScaling],
    task: &NetTask,
    cfg: &NetTrainConfig,
    regularizer: Option<&NetRegularizer<'_>>,
    seed: u64,
) -> Result<NetTrainResult, HarnessError> {
    let n = task.len();
    let m = cfg.m_samples.max(1);
    let norm = 1.0 / (n as f64 * m as f64);
    let mu_rates: Vec<f64> = scalings
        .iter()
        .map(|s| cfg.global_lr * s.mean_lr_mult)
        .collect();
    let factor_rates: Vec<f64> = scalings
        .iter()
        .map(|s| cfg.global_lr * s.factor_lr_mult)
        .collect();

    let mut params = params0.clone();
    let mut velocity = NetParams::zeros(specs);
    let mut loss_curve = Vec::new();
    for step in 0..cfg.steps {
        let mut grads = NetParams::zeros(specs);
        let mut loss = 0.0;
        for sample in 0..m {
            let draw_id = (step as u64) * (m as u64) + sample as u64;
            let noise = varnet::draw_noise(specs, seed, draw_id);
            for (x, y) in task.xs.iter().zip(&task.ys) {
                let (out, cache) = varnet::forward(&params, specs, x, &noise)?;
                let mut upstream = Vec::with_capacity(out.len());
                for (o, t) in out.iter().zip(y) {
                    loss += 0.5 * (o - t) * (o - t) * norm;
                    upstream.push((o - t) * norm);
                }
                let g = varnet::backward(&params, specs, &cache, &upstream)?;
                grads.axpy(1.0, &g);
            }
        }
        if let Some(reg) = regularizer {
            let (reg_loss, reg_grads) = reg(&params)?;
            loss += reg_loss;
            grads.axpy(1.0, &reg_grads);
        }
        if !loss.is_finite() || !grads.is_finite() {
            return Err(HarnessError::Generation(format!(
                "network training produced non-finite values at step {step}"
            )));
        }
        if step % cfg.record_every.max(1) == 0 {
            loss_curve.push((step, loss));
        }
        // Heavy ball: v ← γv − η∇, θ ← θ + v, with per-layer rates.
        let mut update = NetParams::zeros(specs);
        update.axpy(cfg.momentum, &velocity);
        update.axpy_scaled(&mu_rates, &factor_rates, &grads);
        params.axpy(1.0, &update);
        velocity = update;
    }
    Ok(NetTrainResult { params, loss_curve })
}

/// Monte-Carlo estimate of the expected squared-error loss with a dedicated
/// evaluation noise stream.
pub fn expected_net_loss(
    specs: &[LayerSpec],
    params: &NetParams,
    task: &NetTask,
    n_draws: usize,
    eval_seed: u64,
) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for draw in 0..n_draws {
        let noise: Vec<Vec<f64>> = specs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let mut stream =
                    rng::stream(eval_seed, &[Purpose::Eval as u64, draw as u64, l as u64]);
                rng::standard_normal(&mut stream, s.noise_len())
            })
            .collect();
        for (x, y) in task.xs.iter().zip(&task.ys) {
            let (out, _) = varnet::forward(params, specs, x, &noise)?;
            for (o, t) in out.iter().zip(y) {
                total += 0.5 * (o - t) * (o - t);
            }
        }
    }
    Ok(total / (n_draws as f64 * task.len() as f64))
}

/// Sampled predictive summary of the first output coordinate at one input.
#[derive(Debug, Clone, Copy)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
}

pub fn net_predictive(
    specs: &[LayerSpec],
    params: &NetParams,
    x: &[f64],
    n_draws: usize,
    eval_seed: u64,
) -> Result<PredictiveSummary, HarnessError> {
    let mut values = Vec::with_capacity(n_draws);
    for draw in 0..n_draws {
        let noise: Vec<Vec<f64>> = specs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let mut stream =
                    rng::stream(eval_seed, &[Purpose::Eval as u64, draw as u64, l as u64]);
                rng::standard_normal(&mut stream, s.noise_len())
            })
            .collect();
        let (out, _) = varnet::forward(params, specs, x, &noise)?;
        values.push(out[0]);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let quantile = |q: f64| values[((q * (n - 1.0)).round() as usize).min(values.len() - 1)];
    Ok(PredictiveSummary {
        mean,
        std: var.sqrt(),
        q05: quantile(0.05),
        q95: quantile(0.95),
    })
}
