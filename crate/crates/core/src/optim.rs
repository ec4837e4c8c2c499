//! Optimizers and integrators: SGD with heavy-ball or Nesterov momentum over
//! minibatches of data and parameter samples, the exact gradient-flow
//! solution for variational linear regression, and the rescaled iterates
//! used to extract classification limits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, DEFAULT_RANK_TOL};
use crate::rng::{self, Purpose};
use crate::varlinear::{RegressionProblem, VarLinearError};
use crate::Gaussian;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },
    #[error("loss {loss:.3e} exceeded divergence guard {guard:.3e} at step {step}")]
    Diverged { step: usize, loss: f64, guard: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trace has no usable steps: {0}")]
    EmptyTrace(String),
    #[error("gradient callback failed at step {step}: {source}")]
    Callback {
        step: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] VarLinearError),
}

/// Variational parameters θ = (μ, S); the object all optimizers update.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub factor: Matrix,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, factor: Matrix) -> Result<Self, OptimError> {
        if factor.rows() != mu.len() {
            return Err(OptimError::ShapeMismatch(format!(
                "factor has {} rows for mu of length {}",
                factor.rows(),
                mu.len()
            )));
        }
        Ok(Self { mu, factor })
    }

    pub fn zeros(p: usize, r: usize) -> Self {
        Self {
            mu: vec![0.0; p],
            factor: Matrix::zeros(p, r),
        }
    }

    pub fn from_gaussian(g: &Gaussian) -> Self {
        Self {
            mu: g.mean().to_vec(),
            factor: g.factor().clone(),
        }
    }

    pub fn to_gaussian(&self) -> Gaussian {
        Gaussian::new(self.mu.clone(), self.factor.clone()).expect("consistent shapes")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.cols()
    }

    /// self + s · other, elementwise over both blocks.
    pub fn axpy(&mut self, s: f64, other: &VariationalParams) {
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += s * b;
        }
        self.factor.axpy(s, &other.factor);
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite()) && self.factor.is_finite()
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// η_t = η / (t₀ + t), with t counting updates from zero.
    OneOverT {
        t0: f64,
    },
}

impl Schedule {
    fn rate(&self, base: f64, step: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::OneOverT { t0 } => base / (t0 + step as f64),
        }
    }
}

/// Configuration for an SGD run.
#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Momentum γ ∈ [0, 1).
    pub momentum: f64,
    /// Nesterov lookahead (γ_t = α_t); heavy ball otherwise (α_t = 0).
    pub nesterov: bool,
    pub steps: usize,
    pub batch_size: usize,
    /// Parameter samples M per objective evaluation.
    pub param_samples: usize,
    pub schedule: Schedule,
    /// Record every k-th step (plus the final one); bounds trace memory on
    /// long runs.
    pub record_every: usize,
    /// Stop once the full-data loss drops below this value; checked at the
    /// recording stride.
    pub stop_at_loss: Option<f64>,
    /// Abort when the batch loss exceeds this guard.
    pub divergence_guard: f64,
}

impl SgdConfig {
    pub fn plain(learning_rate: f64, steps: usize, batch_size: usize) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            nesterov: false,
            steps,
            batch_size,
            param_samples: 1,
            schedule: Schedule::Constant,
            record_every: 1,
            stop_at_loss: None,
            divergence_guard: 1e12,
        }
    }

    pub fn with_momentum(mut self, gamma: f64) -> Self {
        self.momentum = gamma;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }

    pub fn with_stop_at_loss(mut self, loss: f64) -> Self {
        self.stop_at_loss = Some(loss);
        self
    }
}

/// Loss and gradients of one objective evaluation.
#[derive(Debug, Clone)]
pub struct Eval {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_factor: Matrix,
}

/// Gradient callback: (θ, batch indices, per-step noise stream) → Eval.
///
/// Closed-form objectives ignore the stream; sampled objectives draw their
/// parameter noise from it, which keeps draws disjoint across steps.
pub type GradFn<'a> = dyn FnMut(
        &VariationalParams,
        &[usize],
        &mut ChaCha8Rng,
    ) -> Result<Eval, Box<dyn std::error::Error + Send + Sync>>
    + 'a;

/// One recorded optimizer state.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub theta: VariationalParams,
    /// Batch loss at this state (full-data loss for the final record).
    pub loss: f64,
    pub grad_mu_norm: f64,
    pub grad_factor_norm: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Strided record of an SGD run. The last record always holds the final
/// parameters.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub final_step: usize,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn final_params(&self) -> &VariationalParams {
        &self.records.last().expect("trace never empty").theta
    }

    /// Adds derived per-record diagnostics computed from the snapshots.
    pub fn annotate(&mut self, f: impl Fn(usize, &VariationalParams) -> Vec<(String, f64)>) {
        for rec in &mut self.records {
            for (k, v) in f(rec.step, &rec.theta) {
                rec.diagnostics.insert(k, v);
            }
        }
    }
}

/// Runs (stochastic) gradient descent with momentum:
///
///   θ_{t+1} = θ_t + γ_t Δθ_t − η_t ∇L(θ_t + α_t Δθ_t),  Δθ_0 = 0,
///
/// with α_t = γ_t for Nesterov and α_t = 0 for heavy ball. Batch order and
/// parameter noise come from counter-based per-step streams keyed by
/// `rng_seed`, so traces are replayable and identical seeds produce
/// bitwise-identical results.
pub fn sgd_run(
    n_data: usize,
    grad_fn: &mut GradFn<'_>,
    theta0: &VariationalParams,
    cfg: &SgdConfig,
    rng_seed: u64,
) -> Result<TrainTrace, OptimError> {
    let batch_size = cfg.batch_size.min(n_data).max(1);
    let record_every = cfg.record_every.max(1);
    let mut theta = theta0.clone();
    let mut delta = VariationalParams::zeros(theta0.dim(), theta0.rank());
    let mut records = Vec::new();
    let mut stopped_early = false;
    let full_batch: Vec<usize> = (0..n_data).collect();

    let mut step = 0;
    while step < cfg.steps {
        let batch = draw_batch(n_data, batch_size, rng_seed, step as u64);
        let mut noise_stream = rng::step_stream(rng_seed, step as u64, Purpose::ParamNoise);

        // Evaluation point: θ_t for heavy ball, θ_t + γΔθ_t for Nesterov.
        let eval_point = if cfg.nesterov && cfg.momentum > 0.0 {
            let mut look = theta.clone();
            look.axpy(cfg.momentum, &delta);
            look
        } else {
            theta.clone()
        };
        let eval = grad_fn(&eval_point, &batch, &mut noise_stream)
            .map_err(|source| OptimError::Callback { step, source })?;

        if !eval.loss.is_finite() {
            return Err(OptimError::NonFinite { step, what: "loss" });
        }
        if !eval.grad_mu.iter().all(|g| g.is_finite()) || !eval.grad_factor.is_finite() {
            return Err(OptimError::NonFinite {
                step,
                what: "gradient",
            });
        }
        if eval.loss > cfg.divergence_guard {
            return Err(OptimError::Diverged {
                step,
                loss: eval.loss,
                guard: cfg.divergence_guard,
            });
        }

        if step % record_every == 0 {
            records.push(TraceRecord {
                step,
                theta: theta.clone(),
                loss: eval.loss,
                grad_mu_norm: eval.grad_mu.iter().map(|g| g * g).sum::<f64>().sqrt(),
                grad_factor_norm: eval.grad_factor.frobenius_norm(),
                diagnostics: BTreeMap::new(),
            });
            if let Some(target) = cfg.stop_at_loss {
                // Convergence is judged on the full dataset, not the batch.
                let full = grad_fn(&theta, &full_batch, &mut noise_stream)
                    .map_err(|source| OptimError::Callback { step, source })?;
                if full.loss < target {
                    stopped_early = true;
                    break;
                }
            }
        }

        let eta = cfg.schedule.rate(cfg.learning_rate, step);
        let mut new_delta = VariationalParams::zeros(theta.dim(), theta.rank());
        new_delta.axpy(cfg.momentum, &delta);
        new_delta.axpy(
            -eta,
            &VariationalParams {
                mu: eval.grad_mu,
                factor: eval.grad_factor,
            },
        );
        theta.axpy(1.0, &new_delta);
        delta = new_delta;
        step += 1;
    }

    // Final record with the full-data loss.
    let mut final_stream = rng::step_stream(rng_seed, step as u64, Purpose::ParamNoise);
    let final_eval = grad_fn(&theta, &full_batch, &mut final_stream)
        .map_err(|source| OptimError::Callback { step, source })?;
    records.push(TraceRecord {
        step,
        theta,
        loss: final_eval.loss,
        grad_mu_norm: final_eval.grad_mu.iter().map(|g| g * g).sum::<f64>().sqrt(),
        grad_factor_norm: final_eval.grad_factor.frobenius_norm(),
        diagnostics: BTreeMap::new(),
    });

    Ok(TrainTrace {
        records,
        final_step: step,
        stopped_early,
    })
}

/// Deterministic batch of `batch_size` distinct indices for a step.
fn draw_batch(n_data: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch_size >= n_data {
        return (0..n_data).collect();
    }
    let mut stream = rng::step_stream(seed, step, Purpose::BatchOrder);
    let mut indices: Vec<usize> = (0..n_data).collect();
    indices.shuffle(&mut stream);
    indices.truncate(batch_size);
    indices.sort_unstable();
    indices
}

/// Minibatched estimator of the expected loss,
/// (1 / (N_b M)) Σ_n Σ_m ℓ(n, w_m) with w_m = μ + S z_m.
///
/// `point_loss(n, w)` evaluates the data-point loss at weights w. With S = 0
/// the estimate equals the closed-form loss for any M.
pub fn expected_loss_estimate(
    point_loss: &dyn Fn(usize, &[f64]) -> f64,
    theta: &VariationalParams,
    batch: &[usize],
    noise_draws: &[Vec<f64>],
) -> Result<f64, OptimError> {
    if noise_draws.is_empty() {
        return Err(OptimError::ShapeMismatch(
            "at least one parameter sample required".to_string(),
        ));
    }
    let mut total = 0.0;
    for z in noise_draws {
        if z.len() != theta.rank() {
            return Err(OptimError::ShapeMismatch(format!(
                "noise draw of length {} for factor rank {}",
                z.len(),
                theta.rank()
            )));
        }
        let mut w = theta.mu.clone();
        for (wi, s) in w.iter_mut().zip(theta.factor.matvec(z)) {
            *wi += s;
        }
        for &n in batch {
            total += point_loss(n, &w);
        }
    }
    Ok(total / (batch.len() as f64 * noise_draws.len() as f64))
}

/// Exact gradient-flow solution of the expected regression loss (σ² = 1
/// time units), evaluated at the requested times:
///
///   μ(t) = X†y + e^{−XᵀX t}(μ₀ − X†y),   S(t) = e^{−XᵀX t} S₀.
///
/// t = 0 returns θ₀ exactly.
pub fn gradient_flow_regression(
    prob: &RegressionProblem,
    theta0: &VariationalParams,
    times: &[f64],
) -> Result<Vec<VariationalParams>, OptimError> {
    if theta0.dim() != prob.dim() {
        return Err(OptimError::ShapeMismatch(format!(
            "theta dimension {} vs problem dimension {}",
            theta0.dim(),
            prob.dim()
        )));
    }
    let gram = prob.x().transpose_matmul(prob.x());
    let eig = numerics::sym_eigen(&gram)?;
    let pinv_y = numerics::pseudo_inverse_apply(prob.x(), prob.y(), DEFAULT_RANK_TOL)?;
    let mu_gap: Vec<f64> = theta0.mu.iter().zip(&pinv_y).map(|(m, w)| m - w).collect();

    let p = prob.dim();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t == 0.0 {
            out.push(theta0.clone());
            continue;
        }
        // E(t) = Q e^{−Λt} Qᵀ applied to the gap and the factor.
        let decay: Vec<f64> = eig
            .values
            .iter()
            .map(|&l| (-l.max(0.0) * t).exp())
            .collect();
        let apply_vec = |v: &[f64]| -> Vec<f64> {
            let coords = eig.vectors.transpose_matvec(v);
            let scaled: Vec<f64> = coords.iter().zip(&decay).map(|(c, d)| c * d).collect();
            eig.vectors.matvec(&scaled)
        };
        let mu: Vec<f64> = apply_vec(&mu_gap)
            .iter()
            .zip(&pinv_y)
            .map(|(g, w)| g + w)
            .collect();
        let mut factor = Matrix::zeros(p, theta0.rank());
        for j in 0..theta0.rank() {
            let col = apply_vec(&theta0.factor.col_vec(j));
            for i in 0..p {
                factor[(i, j)] = col[i];
            }
        }
        out.push(VariationalParams { mu, factor });
    }
    Ok(out)
}

/// Rescaled gradient-descent iterates for classification:
/// μ_t ↦ μ_t / log t + P_null(X) μ₀, S_t unchanged. Only records with t ≥ 2
/// are rescaled (log t must be positive).
pub fn rescaled_iterates(
    trace: &TrainTrace,
    x: &Matrix,
    prior: &Gaussian,
) -> Result<Vec<(usize, VariationalParams)>, OptimError> {
    let (_, null) = numerics::row_space_bases(x, DEFAULT_RANK_TOL)?;
    let null_prior = null.project(prior.mean());
    let mut out = Vec::new();
    for rec in &trace.records {
        if rec.step < 2 {
            continue;
        }
        let log_t = (rec.step as f64).ln();
        let mu: Vec<f64> = rec
            .theta
            .mu
            .iter()
            .zip(&null_prior)
            .map(|(m, p0)| m / log_t + p0)
            .collect();
        out.push((
            rec.step,
            VariationalParams {
                mu,
                factor: rec.theta.factor.clone(),
            },
        ));
    }
    if out.is_empty() {
        return Err(OptimError::EmptyTrace(
            "no recorded steps with t >= 2".to_string(),
        ));
    }
    Ok(out)
}
