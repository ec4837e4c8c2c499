//! Objective-comparison experiments: the GVI λ-sweep on the linear problem
//! against the closed-form limit, and the 1-D toy demo contrasting expected-
//! loss training with a mean-field KL-regularized objective.

use rand_chacha::ChaCha8Rng;

use crate::gaussian;
use crate::harness::data;
use crate::harness::nets::{self, NetTask, NetTrainConfig};
use crate::harness::table::ResultTable;
use crate::harness::{CheckOutcome, ExperimentConfig, HarnessError};
use crate::numerics;
use crate::objectives::{self, ObjectiveSpec};
use crate::optim::{self, Eval, SgdConfig, VariationalParams};
use crate::oracles;
use crate::parametrization::{self, ParametrizationSpec};
use crate::rng;
use crate::varlinear;
use crate::varnet::{Activation, LayerSpec, NetParams, WeightKind};

use super::par_replicas;

pub struct GviCompareSettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub lambdas: Vec<f64>,
    pub steps: usize,
    pub sigma0: f64,
    pub threads: usize,
}

impl GviCompareSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 4),
            p: config.get_usize("dims.p", 10),
            lambdas: config.get_f64_list("gvi.lambdas", &[10.0, 1.0, 0.1, 0.01, 0.0]),
            steps: config.get_usize("optimizer.steps", 24_000),
            sigma0: config.get_f64("prior.sigma0", 1.0),
            threads: config.threads(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GviCompareRow {
    pub lambda: f64,
    pub w2_gap_to_oracle: f64,
    pub final_expected_loss: f64,
}

/// Trains the linear variational model under the W2-regularized objective
/// for each λ and measures the distance of the solution to the λ → 0 limit.
pub fn gvi_compare(settings: &GviCompareSettings) -> Result<Vec<GviCompareRow>, HarnessError> {
    let prior = data::isotropic_prior(settings.seed, settings.p, 1.0, settings.sigma0);
    let (prob, _) = data::generate_regression(settings.seed, settings.n, settings.p, &prior)?;
    let oracle = oracles::regression_implicit_bias_solution(&prob, &prior)?;
    let gram = prob.x().transpose_matmul(prob.x());
    let lmax = numerics::sym_eigen(&gram)?.values[0];
    let theta0 = VariationalParams::from_gaussian(&prior);

    let rows = par_replicas(settings.threads, settings.lambdas.len(), |i| {
        let lambda = settings.lambdas[i];
        let spec = ObjectiveSpec::gvi_w2(lambda, prior.clone());
        let mut grad_fn = |theta: &VariationalParams,
                           batch: &[usize],
                           _rng: &mut ChaCha8Rng|
         -> Result<Eval, Box<dyn std::error::Error + Send + Sync>> {
            let sub = prob.restrict_rows(batch);
            let model_loss = varlinear::expected_regression_loss(&sub, theta)?;
            let (gm, gf) = varlinear::expected_regression_grad(&sub, theta)?;
            let full = objectives::objective_grad(&spec, &gm, &gf, theta)?;
            let value = objectives::objective_value(&spec, model_loss, theta)?;
            Ok(Eval {
                loss: value,
                grad_mu: full.grad_mu,
                grad_factor: full.grad_factor,
            })
        };
        // The regularizer adds curvature ~2λ on top of the data term; the
        // λ-scaled modes are slow, so heavy ball shortens the runs.
        let eta = 0.3 / (lmax + 4.0 * lambda);
        let steps = if lambda > 0.0 {
            // Relaxation time of the slowest (regularizer-only) modes.
            let tau = 1.0 / (2.0 * eta * lambda * (1.0 - 0.9));
            settings.steps.min((8.0 * tau).ceil() as usize).max(2_000)
        } else {
            settings.steps.min(4_000)
        };
        let cfg = SgdConfig {
            learning_rate: eta,
            momentum: 0.9,
            nesterov: false,
            steps,
            batch_size: settings.n,
            param_samples: 1,
            schedule: optim::Schedule::Constant,
            record_every: settings.steps,
            stop_at_loss: None,
            divergence_guard: 1e12,
        };
        let trace = optim::sgd_run(settings.n, &mut grad_fn, &theta0, &cfg, settings.seed)?;
        let final_params = trace.final_params();
        let w2_gap = gaussian::w2_squared(&final_params.to_gaussian(), &oracle)?;
        let final_expected_loss = varlinear::expected_regression_loss(&prob, final_params)?;
        Ok::<_, HarnessError>(GviCompareRow {
            lambda,
            w2_gap_to_oracle: w2_gap,
            final_expected_loss,
        })
    });
    rows.into_iter().collect()
}

pub fn run_compare(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = GviCompareSettings::from_config(config);
    let rows = gvi_compare(&settings)?;
    let mut table = ResultTable::new(&["lambda", "w2_gap_to_oracle", "final_expected_loss"]);
    for row in &rows {
        table.push_row(vec![
            row.lambda.into(),
            row.w2_gap_to_oracle.into(),
            row.final_expected_loss.into(),
        ]);
    }

    // Monotone approach to the implicit-bias limit as λ decreases over
    // {1, 0.1, 0.01}.
    let gap_at = |lambda: f64| -> Option<f64> {
        rows.iter()
            .find(|r| (r.lambda - lambda).abs() < 1e-12)
            .map(|r| r.w2_gap_to_oracle)
    };
    let chain: Vec<Option<f64>> = [1.0, 0.1, 0.01].iter().map(|&l| gap_at(l)).collect();
    let monotone = match (&chain[0], &chain[1], &chain[2]) {
        (Some(a), Some(b), Some(c)) => a > b && b > c,
        _ => false,
    };
    let checks = vec![CheckOutcome::new(
        "w2_gap_decreases_as_lambda_shrinks",
        monotone,
        format!("gaps at 1, 0.1, 0.01: {chain:?}"),
    )];
    Ok((vec![("gvi_compare".to_string(), table)], checks))
}

pub struct ToyDemoSettings {
    pub seed: u64,
    pub width: usize,
    pub hidden_rank: usize,
    pub out_rank: usize,
    pub steps: usize,
    pub m_samples: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Scale of the covariance factor at initialization relative to the
    /// mean initialization (the prior's noise level).
    pub factor_init_frac: f64,
    pub elbo_lambda: f64,
    pub elbo_lr: f64,
    pub elbo_steps: usize,
    /// Prior scale of the hidden mean-field layer relative to its Kaiming
    /// std; the prior mean is the initialization.
    pub elbo_hidden_prior_frac: f64,
    /// Prior scale of the output mean-field layer relative to its Kaiming
    /// std; zero-centered.
    pub elbo_out_prior_frac: f64,
    pub eval_draws: usize,
    pub grid_points: usize,
}

impl ToyDemoSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            width: config.get_usize("dims.width", 32),
            hidden_rank: config.get_usize("dims.hidden_rank", 16),
            out_rank: config.get_usize("dims.out_rank", 8),
            steps: config.get_usize("optimizer.steps", 8_000),
            m_samples: config.get_usize("optimizer.param_samples", 8),
            lr: config.get_f64("optimizer.learning_rate", 0.004),
            momentum: config.get_f64("optimizer.momentum", 0.9),
            factor_init_frac: config.get_f64("prior.factor_init_frac", 0.2),
            elbo_lambda: config.get_f64("elbo.lambda", 1.0),
            elbo_lr: config.get_f64("elbo.learning_rate", 0.05),
            elbo_steps: config.get_usize("elbo.steps", 6_000),
            elbo_hidden_prior_frac: config.get_f64("elbo.hidden_prior_frac", 0.5),
            elbo_out_prior_frac: config.get_f64("elbo.out_prior_frac", 0.5),
            eval_draws: config.get_usize("experiment.eval_draws", 512),
            grid_points: config.get_usize("experiment.grid_points", 61),
        }
    }
}

/// Train points with a gap in the middle, for visible in-between uncertainty.
pub fn toy_task() -> NetTask {
    let xs: Vec<Vec<f64>> = [-2.0, -1.6, -1.2, -0.8, 0.8, 1.2, 1.6, 2.0]
        .iter()
        .map(|&x| vec![x, 1.0])
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(1.5 * x[0]).sin()]).collect();
    NetTask { xs, ys }
}

#[derive(Debug)]
pub struct ToyDemoResult {
    /// Per train point: predictive std ratio final/initial for the
    /// expected-loss run.
    pub ibvi_std_ratios: Vec<f64>,
    /// Same for the KL-regularized mean-field run.
    pub elbo_std_ratios: Vec<f64>,
    /// Worst absolute error of the predictive mean over the train points,
    /// per method.
    pub ibvi_fit_error: f64,
    pub elbo_fit_error: f64,
    pub grid_rows: Vec<(f64, &'static str, f64, f64, f64, f64)>,
}

pub fn toy_demo(settings: &ToyDemoSettings) -> Result<ToyDemoResult, HarnessError> {
    let task = toy_task();

    // Expected-loss (implicit-bias) run: low-rank Gaussian last two layers,
    // initialized at a prior whose noise level keeps the signal visible.
    let ibvi_specs = vec![
        LayerSpec::new(
            2,
            settings.width,
            WeightKind::Deterministic,
            Activation::Relu,
        ),
        LayerSpec::new(
            settings.width,
            settings.width,
            WeightKind::LowRank {
                rank: settings.hidden_rank,
            },
            Activation::Relu,
        ),
        LayerSpec::new(
            settings.width,
            1,
            WeightKind::LowRank {
                rank: settings.out_rank,
            },
            Activation::Identity,
        ),
    ];
    let sp = ParametrizationSpec::standard(1.0);
    let ibvi_scalings = parametrization::derive_scaling_for_specs(&sp, &ibvi_specs)?;
    let mut ibvi_init = parametrization::init_net(
        &sp,
        &ibvi_specs,
        rng::derive_seed(settings.seed, &[980]),
        None,
    )?;
    for layer in &mut ibvi_init.layers {
        layer.factor = layer.factor.scale(settings.factor_init_frac);
    }
    let ibvi_cfg = NetTrainConfig {
        steps: settings.steps,
        m_samples: settings.m_samples,
        global_lr: settings.lr,
        momentum: settings.momentum,
        record_every: 200,
    };
    let ibvi = nets::train_net(
        &ibvi_specs,
        &ibvi_init,
        &ibvi_scalings,
        &task,
        &ibvi_cfg,
        None,
        rng::derive_seed(settings.seed, &[981]),
    )?;

    // Mean-field KL-regularized run: same architecture with diagonal
    // Gaussian last two layers. The hidden prior is centered at the
    // initialization (the function-space prior is the initial network); the
    // output prior is zero-centered and carries the retained uncertainty.
    let elbo_specs = vec![
        LayerSpec::new(
            2,
            settings.width,
            WeightKind::Deterministic,
            Activation::Relu,
        ),
        LayerSpec::new(
            settings.width,
            settings.width,
            WeightKind::MeanField,
            Activation::Relu,
        ),
        LayerSpec::new(
            settings.width,
            1,
            WeightKind::MeanField,
            Activation::Identity,
        ),
    ];
    let elbo_scalings = parametrization::derive_scaling_for_specs(&sp, &elbo_specs)?;
    let mut elbo_init = parametrization::init_net(
        &sp,
        &elbo_specs,
        rng::derive_seed(settings.seed, &[982]),
        None,
    )?;
    let mut prior_sigmas: Vec<f64> = elbo_scalings.iter().map(|s| s.mean_init_std).collect();
    prior_sigmas[1] *= settings.elbo_hidden_prior_frac;
    prior_sigmas[2] *= settings.elbo_out_prior_frac;
    for (l, layer) in elbo_init.layers.iter_mut().enumerate() {
        if elbo_specs[l].weights == WeightKind::MeanField {
            for i in 0..layer.factor.rows() {
                layer.factor[(i, 0)] = prior_sigmas[l];
            }
        }
    }
    let hidden_prior_mu: Vec<f64> = {
        let spec = &elbo_specs[1];
        (0..spec.weight_count())
            .map(|i| elbo_init.layers[1].mu[(i / spec.fan_in, i % spec.fan_in)])
            .collect()
    };
    let n_data = task.len() as f64;
    let lambda = settings.elbo_lambda;
    let elbo_specs_ref = &elbo_specs;
    let prior_sigmas_ref = &prior_sigmas;
    let hidden_prior_mu_ref = &hidden_prior_mu;
    let regularizer = move |params: &NetParams| -> Result<(f64, NetParams), HarnessError> {
        // Per-datum weighting keeps the stationary points of the summed
        // objective while the trainer averages the data term.
        let weight = lambda / n_data;
        let mut value = 0.0;
        let mut grads = NetParams::zeros(elbo_specs_ref);
        for (l, spec) in elbo_specs_ref.iter().enumerate() {
            if spec.weights != WeightKind::MeanField {
                continue;
            }
            let p_layer = spec.weight_count();
            let mu_flat: Vec<f64> = (0..p_layer)
                .map(|i| params.layers[l].mu[(i / spec.fan_in, i % spec.fan_in)])
                .collect();
            let prior_mu: Vec<f64> = if l == 1 {
                hidden_prior_mu_ref.clone()
            } else {
                vec![0.0; p_layer]
            };
            let prior_sigma = vec![prior_sigmas_ref[l]; p_layer];
            value += weight
                * objectives::meanfield_kl(
                    &mu_flat,
                    &params.layers[l].factor,
                    &prior_mu,
                    &prior_sigma,
                )?;
            let (gm, mut gf) = objectives::meanfield_kl_grad(
                &mu_flat,
                &params.layers[l].factor,
                &prior_mu,
                &prior_sigma,
            )?;
            // Trust region against the 1/s spike when a scale is kicked
            // toward zero between steps.
            let cap = 20.0 / prior_sigmas_ref[l];
            for i in 0..gf.rows() {
                gf[(i, 0)] = gf[(i, 0)].clamp(-cap, cap);
            }
            for (i, g) in gm.iter().enumerate() {
                grads.layers[l].mu[(i / spec.fan_in, i % spec.fan_in)] = weight * g;
            }
            grads.layers[l].factor.axpy(weight, &gf);
        }
        Ok((value, grads))
    };
    let elbo_cfg = NetTrainConfig {
        steps: settings.elbo_steps,
        m_samples: settings.m_samples,
        global_lr: settings.elbo_lr,
        momentum: 0.0,
        record_every: 200,
    };
    let elbo = nets::train_net(
        &elbo_specs,
        &elbo_init,
        &elbo_scalings,
        &task,
        &elbo_cfg,
        Some(&regularizer),
        rng::derive_seed(settings.seed, &[983]),
    )?;

    // Per-train-point predictive std ratios against each method's own
    // initialization, plus fit quality.
    let eval_seed = rng::derive_seed(settings.seed, &[984]);
    let summarize = |specs: &[LayerSpec],
                     init: &NetParams,
                     trained: &NetParams|
     -> Result<(Vec<f64>, f64), HarnessError> {
        let mut ratios = Vec::with_capacity(task.len());
        let mut fit: f64 = 0.0;
        for (x, y) in task.xs.iter().zip(&task.ys) {
            let before = nets::net_predictive(specs, init, x, settings.eval_draws, eval_seed)?;
            let after = nets::net_predictive(specs, trained, x, settings.eval_draws, eval_seed)?;
            ratios.push(after.std / before.std);
            fit = fit.max((after.mean - y[0]).abs());
        }
        Ok((ratios, fit))
    };
    let (ibvi_std_ratios, ibvi_fit_error) = summarize(&ibvi_specs, &ibvi_init, &ibvi.params)?;
    let (elbo_std_ratios, elbo_fit_error) = summarize(&elbo_specs, &elbo_init, &elbo.params)?;

    // Predictive summaries over an input grid for external plotting.
    let mut grid_rows = Vec::new();
    let half = (settings.grid_points - 1) as f64 / 2.0;
    for i in 0..settings.grid_points {
        let x = 3.0 * (i as f64 - half) / half;
        for (name, specs, params) in [
            ("prior", &ibvi_specs, &ibvi_init),
            ("ibvi", &ibvi_specs, &ibvi.params),
            ("elbo", &elbo_specs, &elbo.params),
        ] {
            let s = nets::net_predictive(specs, params, &[x, 1.0], settings.eval_draws, eval_seed)?;
            grid_rows.push((x, name, s.mean, s.std, s.q05, s.q95));
        }
    }

    Ok(ToyDemoResult {
        ibvi_std_ratios,
        elbo_std_ratios,
        ibvi_fit_error,
        elbo_fit_error,
        grid_rows,
    })
}

pub fn run_toy_demo(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = ToyDemoSettings::from_config(config);
    let result = toy_demo(&settings)?;

    let task = toy_task();
    let mut ratios = ResultTable::new(&["point", "x", "ibvi_std_ratio", "elbo_std_ratio"]);
    for (i, x) in task.xs.iter().enumerate() {
        ratios.push_row(vec![
            i.into(),
            x[0].into(),
            result.ibvi_std_ratios[i].into(),
            result.elbo_std_ratios[i].into(),
        ]);
    }

    let mut grid = ResultTable::new(&["x", "method", "mean", "std", "q05", "q95"]);
    for (x, method, mean, std, q05, q95) in &result.grid_rows {
        grid.push_row(vec![
            (*x).into(),
            (*method).into(),
            (*mean).into(),
            (*std).into(),
            (*q05).into(),
            (*q95).into(),
        ]);
    }

    let ibvi_max = result.ibvi_std_ratios.iter().cloned().fold(0.0, f64::max);
    let elbo_min = result
        .elbo_std_ratios
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let checks = vec![
        CheckOutcome::new(
            "expected_loss_collapses_train_uncertainty",
            ibvi_max < 0.05,
            format!(
                "max train-point std ratio {ibvi_max:.4} (fit error {:.3})",
                result.ibvi_fit_error
            ),
        ),
        CheckOutcome::new(
            "kl_regularizer_preserves_train_uncertainty",
            elbo_min > 0.2,
            format!(
                "min train-point std ratio {elbo_min:.4} (fit error {:.3})",
                result.elbo_fit_error
            ),
        ),
    ];
    Ok((
        vec![
            ("toy_demo_train_ratios".to_string(), ratios),
            ("toy_demo_grid".to_string(), grid),
        ],
        checks,
    ))
}
