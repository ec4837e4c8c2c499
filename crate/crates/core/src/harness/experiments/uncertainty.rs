//! Non-asymptotic error identity and monotone-uncertainty experiments.

use std::cell::RefCell;

use crate::harness::data;
use crate::harness::table::ResultTable;
use crate::harness::{CheckOutcome, ExperimentConfig, HarnessError};
use crate::numerics::{self, Matrix};
use crate::optim::{self, OptimError, SgdConfig, VariationalParams};
use crate::rng;
use crate::varlinear::RegressionProblem;

use super::par_replicas;
use super::regression::regression_grad_fn;

pub struct ErrorIdentitySettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub draws: usize,
    pub n_test: usize,
    pub batch_size: usize,
    pub sgd_probes: Vec<usize>,
    pub flow_probes: Vec<f64>,
    pub threads: usize,
}

impl ErrorIdentitySettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 8),
            p: config.get_usize("dims.p", 24),
            draws: config.get_usize("experiment.draws", 2_000),
            n_test: config.get_usize("experiment.n_test", 5),
            batch_size: config.get_usize("optimizer.batch_size", 4),
            sgd_probes: config.get_usize_list("experiment.sgd_probes", &[0, 10, 100, 1000]),
            flow_probes: config.get_f64_list("experiment.flow_probes", &[0.0, 0.1, 1.0, 10.0]),
            threads: config.threads(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorIdentityRow {
    pub dynamics: &'static str,
    pub probe: f64,
    pub test_point: usize,
    pub mc_error: f64,
    pub predictive_variance: f64,
    pub z: f64,
}

/// Mean prediction error over prior draws versus the predictive variance of
/// the shared covariance trajectory, for both SGD steps and gradient flow.
pub fn error_identity(
    settings: &ErrorIdentitySettings,
) -> Result<Vec<ErrorIdentityRow>, HarnessError> {
    let seed = settings.seed;
    let (n, p) = (settings.n, settings.p);
    let prior = data::default_prior(seed, p, p, 1.0, 1.0);
    // Fixed design matrix; targets vary per prior draw.
    let (base_prob, _) = data::generate_regression(seed, n, p, &prior)?;
    let x = base_prob.x().clone();

    let gram = x.transpose_matmul(&x);
    let lmax = numerics::sym_eigen(&gram)?.values[0];
    let eta = 0.3 / lmax;
    let batch_seed = rng::derive_seed(seed, &[930]);
    let max_step = settings.sgd_probes.iter().copied().max().unwrap_or(0);

    // Covariance trajectory: independent of the targets, computed once from
    // the full variational run.
    let theta0_full = VariationalParams::from_gaussian(&prior);
    let cfg_full = SgdConfig {
        learning_rate: eta,
        momentum: 0.0,
        nesterov: false,
        steps: max_step,
        batch_size: settings.batch_size,
        param_samples: 1,
        schedule: optim::Schedule::Constant,
        record_every: 1,
        stop_at_loss: None,
        divergence_guard: 1e12,
    };
    let mut grad_fn = regression_grad_fn(&base_prob);
    let full_trace = optim::sgd_run(n, &mut grad_fn, &theta0_full, &cfg_full, batch_seed)?;
    let factor_at = |step: usize| -> &Matrix {
        &full_trace
            .records
            .iter()
            .find(|r| r.step == step)
            .expect("stride 1 records every step")
            .theta
            .factor
    };

    let test_points: Vec<Vec<f64>> = (0..settings.n_test)
        .map(|k| rng::standard_normal(&mut rng::stream(seed, &[931, k as u64]), p))
        .collect();

    // Per-draw squared errors at each (dynamics, probe, test point).
    let n_sgd = settings.sgd_probes.len();
    let n_flow = settings.flow_probes.len();
    let per_draw = par_replicas(settings.threads, settings.draws, |draw| {
        let z = rng::standard_normal(
            &mut rng::stream(seed, &[932, draw as u64]),
            prior.factor_rank(),
        );
        let w = prior.sample(&z).expect("prior draw");
        let y = x.matvec(&w);
        let prob = RegressionProblem::with_unit_variance(x.clone(), y).expect("shapes");
        let theta0 = VariationalParams {
            mu: prior.mean().to_vec(),
            factor: Matrix::zeros(p, 0),
        };
        // Same batch schedule as the covariance run (same seed and data size).
        let cfg = SgdConfig {
            record_every: 1,
            ..cfg_full.clone()
        };
        let mut grad_fn = regression_grad_fn(&prob);
        let trace =
            optim::sgd_run(n, &mut grad_fn, &theta0, &cfg, batch_seed).expect("mean-only training");

        let mut errors = Vec::with_capacity((n_sgd + n_flow) * settings.n_test);
        for &t in &settings.sgd_probes {
            let mu = &trace
                .records
                .iter()
                .find(|r| r.step == t)
                .expect("probe recorded")
                .theta
                .mu;
            for xt in &test_points {
                let y_test: f64 = xt.iter().zip(&w).map(|(a, b)| a * b).sum();
                let pred: f64 = xt.iter().zip(mu).map(|(a, b)| a * b).sum();
                errors.push((y_test - pred) * (y_test - pred));
            }
        }
        let flow = optim::gradient_flow_regression(&prob, &theta0, &settings.flow_probes)
            .expect("flow solution");
        for params in &flow {
            for xt in &test_points {
                let y_test: f64 = xt.iter().zip(&w).map(|(a, b)| a * b).sum();
                let pred: f64 = xt.iter().zip(&params.mu).map(|(a, b)| a * b).sum();
                errors.push((y_test - pred) * (y_test - pred));
            }
        }
        errors
    });

    // Exact covariance trajectory for the gradient flow.
    let flow_factors =
        optim::gradient_flow_regression(&base_prob, &theta0_full, &settings.flow_probes)?;

    let mut rows = Vec::new();
    let mut idx = 0;
    let push_rows = |dynamics: &'static str,
                     probe: f64,
                     factor: &Matrix,
                     idx: &mut usize,
                     rows: &mut Vec<ErrorIdentityRow>| {
        for (k, xt) in test_points.iter().enumerate() {
            let samples: Vec<f64> = per_draw.iter().map(|errs| errs[*idx]).collect();
            let count = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / count;
            let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
            let se = (var / count).sqrt();
            let pv: f64 = factor.transpose_matvec(xt).iter().map(|v| v * v).sum();
            let z = if se > 0.0 { (mean - pv) / se } else { 0.0 };
            rows.push(ErrorIdentityRow {
                dynamics,
                probe,
                test_point: k,
                mc_error: mean,
                predictive_variance: pv,
                z,
            });
            *idx += 1;
        }
    };
    for &t in &settings.sgd_probes {
        push_rows("sgd", t as f64, factor_at(t), &mut idx, &mut rows);
    }
    for (probe, params) in settings.flow_probes.iter().zip(&flow_factors) {
        push_rows("flow", *probe, &params.factor, &mut idx, &mut rows);
    }
    Ok(rows)
}

pub fn run_error_identity(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = ErrorIdentitySettings::from_config(config);
    let rows = error_identity(&settings)?;
    let mut table = ResultTable::new(&[
        "dynamics",
        "probe",
        "test_point",
        "mc_error",
        "predictive_variance",
        "z",
    ]);
    for row in &rows {
        table.push_row(vec![
            row.dynamics.into(),
            row.probe.into(),
            row.test_point.into(),
            row.mc_error.into(),
            row.predictive_variance.into(),
            row.z.into(),
        ]);
    }
    table.sort_rows();
    let max_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let checks = vec![CheckOutcome::new(
        "error_identity_within_4_se",
        max_z <= 4.0,
        format!("max |z| = {max_z:.2}"),
    )];
    Ok((vec![("error_identity".to_string(), table)], checks))
}

pub struct MonotoneSettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub replicas: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub threads: usize,
}

impl MonotoneSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 8),
            p: config.get_usize("dims.p", 24),
            replicas: config.get_usize("experiment.replicas", 10),
            steps: config.get_usize("optimizer.steps", 10_000),
            batch_size: config.get_usize("optimizer.batch_size", 4),
            threads: config.threads(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonotoneRow {
    pub replica: usize,
    pub violations: usize,
    pub initial_trace: f64,
    pub final_trace: f64,
}

/// Runs SGD and collects tr(S_t S_tᵀ) every step through the gradient
/// callback; counts increases beyond the tolerance.
fn run_trace_monotonicity(
    prob: &RegressionProblem,
    theta0: &VariationalParams,
    eta: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(usize, f64, f64), HarnessError> {
    let traces: RefCell<Vec<f64>> = RefCell::new(Vec::with_capacity(steps + 1));
    let mut inner = regression_grad_fn(prob);
    let mut grad_fn = |theta: &VariationalParams,
                       batch: &[usize],
                       stream: &mut rand_chacha::ChaCha8Rng|
     -> Result<optim::Eval, Box<dyn std::error::Error + Send + Sync>> {
        // Full-data evaluations (the final record) are not optimizer steps.
        if batch.len() < prob.n_data() || batch_size >= prob.n_data() {
            traces
                .borrow_mut()
                .push(theta.factor.frobenius_norm().powi(2));
        }
        inner(theta, batch, stream)
    };
    let cfg = SgdConfig {
        learning_rate: eta,
        momentum: 0.0,
        nesterov: false,
        steps,
        batch_size,
        param_samples: 1,
        schedule: optim::Schedule::Constant,
        record_every: steps.max(1),
        stop_at_loss: None,
        divergence_guard: 1e12,
    };
    let result = optim::sgd_run(prob.n_data(), &mut grad_fn, theta0, &cfg, seed);
    match result {
        Ok(_) => {}
        // The deliberately unstable configuration blows up; the per-step
        // trace values gathered so far are exactly what we need.
        Err(OptimError::Diverged { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    let values = traces.into_inner();
    let mut violations = 0;
    for pair in values.windows(2) {
        if pair[1] > pair[0] + 1e-12 {
            violations += 1;
        }
    }
    Ok((
        violations,
        values.first().copied().unwrap_or(f64::NAN),
        values.last().copied().unwrap_or(f64::NAN),
    ))
}

/// Monotone-uncertainty experiment: compliant learning rate on `replicas`
/// instances plus one deliberately violating run.
pub fn monotone_uncertainty(
    settings: &MonotoneSettings,
) -> Result<(Vec<MonotoneRow>, MonotoneRow), HarnessError> {
    let rows_res = par_replicas(settings.threads, settings.replicas, |replica| {
        let instance_seed = rng::derive_seed(settings.seed, &[940, replica as u64]);
        let prior = data::default_prior(instance_seed, settings.p, settings.p, 1.0, 1.0);
        let (prob, _) = data::generate_regression(instance_seed, settings.n, settings.p, &prior)?;
        let gram = prob.x().transpose_matmul(prob.x());
        let lmax = numerics::sym_eigen(&gram)?.values[0];
        let theta0 = VariationalParams::from_gaussian(&prior);
        // η = 1/λ_max(XᵀX) lower-bounds 1/λ_max(X_bᵀX_b) for every batch.
        let (violations, initial_trace, final_trace) = run_trace_monotonicity(
            &prob,
            &theta0,
            1.0 / lmax,
            settings.steps,
            settings.batch_size,
            instance_seed,
        )?;
        Ok::<_, HarnessError>(MonotoneRow {
            replica,
            violations,
            initial_trace,
            final_trace,
        })
    });
    let mut rows = Vec::new();
    for r in rows_res {
        rows.push(r?);
    }

    // Counterexample: η = 3/λ_max on the first instance, full batch.
    let instance_seed = rng::derive_seed(settings.seed, &[940, 0]);
    let prior = data::default_prior(instance_seed, settings.p, settings.p, 1.0, 1.0);
    let (prob, _) = data::generate_regression(instance_seed, settings.n, settings.p, &prior)?;
    let gram = prob.x().transpose_matmul(prob.x());
    let lmax = numerics::sym_eigen(&gram)?.values[0];
    let theta0 = VariationalParams::from_gaussian(&prior);
    let (violations, initial_trace, final_trace) = run_trace_monotonicity(
        &prob,
        &theta0,
        3.0 / lmax,
        settings.steps.min(2_000),
        settings.n,
        instance_seed,
    )?;
    let counterexample = MonotoneRow {
        replica: usize::MAX,
        violations,
        initial_trace,
        final_trace,
    };
    Ok((rows, counterexample))
}

pub fn run_monotone(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = MonotoneSettings::from_config(config);
    let (rows, counterexample) = monotone_uncertainty(&settings)?;
    let mut table = ResultTable::new(&[
        "run",
        "replica",
        "violations",
        "initial_trace",
        "final_trace",
    ]);
    for row in &rows {
        table.push_row(vec![
            "compliant".into(),
            row.replica.into(),
            row.violations.into(),
            row.initial_trace.into(),
            row.final_trace.into(),
        ]);
    }
    table.push_row(vec![
        "counterexample".into(),
        0usize.into(),
        counterexample.violations.into(),
        counterexample.initial_trace.into(),
        counterexample.final_trace.into(),
    ]);
    table.sort_rows();

    let max_violations = rows.iter().map(|r| r.violations).max().unwrap_or(0);
    let checks = vec![
        CheckOutcome::new(
            "trace_monotone_under_safe_rate",
            max_violations == 0,
            format!("max violations {max_violations}"),
        ),
        CheckOutcome::new(
            "counterexample_violates",
            counterexample.violations >= 1,
            format!("violations {}", counterexample.violations),
        ),
    ];
    Ok((vec![("monotone_uncertainty".to_string(), table)], checks))
}
