//! Regression implicit-bias and ensemble-equivalence experiments.

use rand_chacha::ChaCha8Rng;

use crate::gaussian;
use crate::harness::data;
use crate::harness::table::{Cell, ResultTable};
use crate::harness::{CheckOutcome, ExperimentConfig, HarnessError};
use crate::numerics::{self, Matrix, DEFAULT_RANK_TOL};
use crate::optim::{self, Eval, SgdConfig, VariationalParams};
use crate::oracles;
use crate::rng;
use crate::varlinear::{self, RegressionProblem};

use super::par_replicas;

/// One optimizer variant of the implicit-bias experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    FullBatchGd,
    MinibatchSgd,
    HeavyBall,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::FullBatchGd,
        Variant::MinibatchSgd,
        Variant::HeavyBall,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::FullBatchGd => "gd",
            Variant::MinibatchSgd => "sgd",
            Variant::HeavyBall => "momentum",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionBiasRow {
    pub replica: usize,
    pub variant: Variant,
    pub steps_run: usize,
    pub final_loss: f64,
    pub w2_gap: f64,
    pub max_null_dev: f64,
}

pub struct RegressionBiasSettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub replicas: usize,
    pub max_steps: usize,
    pub record_every: usize,
    pub stop_at_loss: f64,
    pub threads: usize,
}

impl RegressionBiasSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 8),
            p: config.get_usize("dims.p", 24),
            r: config.get_usize("dims.r", 4),
            replicas: config.get_usize("experiment.replicas", 10),
            max_steps: config.get_usize("optimizer.steps", 50_000),
            record_every: config.get_usize("optimizer.record_every", 100),
            stop_at_loss: config.get_f64("optimizer.stop_at_loss", 1e-13),
            threads: config.threads(),
        }
    }
}

/// Closed-form gradient callback for a regression problem.
pub fn regression_grad_fn(
    prob: &RegressionProblem,
) -> impl FnMut(
    &VariationalParams,
    &[usize],
    &mut ChaCha8Rng,
) -> Result<Eval, Box<dyn std::error::Error + Send + Sync>>
       + '_ {
    move |theta, batch, _| {
        let sub = prob.restrict_rows(batch);
        let loss = varlinear::expected_regression_loss(&sub, theta)?;
        let (grad_mu, grad_factor) = varlinear::expected_regression_grad(&sub, theta)?;
        Ok(Eval {
            loss,
            grad_mu,
            grad_factor,
        })
    }
}

/// Trains one replica under one optimizer variant and measures the limit
/// against the closed-form oracle.
fn run_one(
    settings: &RegressionBiasSettings,
    replica: usize,
    variant: Variant,
) -> Result<RegressionBiasRow, HarnessError> {
    let instance_seed = rng::derive_seed(settings.seed, &[900, replica as u64]);
    let prior = data::default_prior(instance_seed, settings.p, settings.r, 1.0, 1.0);
    let (prob, _) = data::generate_regression(instance_seed, settings.n, settings.p, &prior)?;
    let theta0 = VariationalParams::from_gaussian(&prior);

    let gram = prob.x().transpose_matmul(prob.x());
    let lmax = numerics::sym_eigen(&gram)?.values[0];
    let (batch_size, momentum) = match variant {
        Variant::FullBatchGd => (settings.n, 0.0),
        Variant::MinibatchSgd => (2, 0.0),
        Variant::HeavyBall => (settings.n, 0.9),
    };
    let cfg = SgdConfig {
        learning_rate: 0.9 / lmax,
        momentum,
        nesterov: false,
        steps: settings.max_steps,
        batch_size,
        param_samples: 1,
        schedule: optim::Schedule::Constant,
        record_every: settings.record_every,
        stop_at_loss: Some(settings.stop_at_loss),
        divergence_guard: 1e12,
    };
    let mut grad_fn = regression_grad_fn(&prob);
    let trace = optim::sgd_run(
        settings.n,
        &mut grad_fn,
        &theta0,
        &cfg,
        instance_seed ^ variant as u64,
    )?;

    let final_loss = varlinear::expected_regression_loss(&prob, trace.final_params())?;
    let oracle = oracles::regression_implicit_bias_solution(&prob, &prior)?;
    let w2_gap = gaussian::w2_squared(&trace.final_params().to_gaussian(), &oracle)?;

    // Null-space conservation over every recorded step.
    let (_, null) = numerics::row_space_bases(prob.x(), DEFAULT_RANK_TOL)?;
    let ref_mu = null.project_coords(&theta0.mu);
    let ref_factor = null.basis().transpose_matmul(&theta0.factor);
    let mut max_null_dev = 0.0f64;
    for rec in &trace.records {
        let mu_dev: f64 = null
            .project_coords(&rec.theta.mu)
            .iter()
            .zip(&ref_mu)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let factor_dev = null
            .basis()
            .transpose_matmul(&rec.theta.factor)
            .sub(&ref_factor)
            .frobenius_norm();
        max_null_dev = max_null_dev.max(mu_dev).max(factor_dev);
    }

    Ok(RegressionBiasRow {
        replica,
        variant,
        steps_run: trace.final_step,
        final_loss,
        w2_gap,
        max_null_dev,
    })
}

/// All replicas × optimizer variants.
pub fn regression_bias(
    settings: &RegressionBiasSettings,
) -> Result<Vec<RegressionBiasRow>, HarnessError> {
    let results = par_replicas(settings.threads, settings.replicas, |replica| {
        Variant::ALL
            .iter()
            .map(|&variant| run_one(settings, replica, variant))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn run(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = RegressionBiasSettings::from_config(config);
    let rows = regression_bias(&settings)?;

    let mut table = ResultTable::new(&[
        "variant",
        "replica",
        "steps_run",
        "final_loss",
        "w2_gap",
        "max_null_dev",
    ]);
    for row in &rows {
        table.push_row(vec![
            row.variant.name().into(),
            row.replica.into(),
            row.steps_run.into(),
            row.final_loss.into(),
            row.w2_gap.into(),
            row.max_null_dev.into(),
        ]);
    }
    table.sort_rows();

    let worst_loss = rows.iter().map(|r| r.final_loss).fold(0.0, f64::max);
    let worst_gap = rows.iter().map(|r| r.w2_gap).fold(0.0, f64::max);
    let worst_dev = rows.iter().map(|r| r.max_null_dev).fold(0.0, f64::max);
    let checks = vec![
        CheckOutcome::new(
            "final_loss_below_1e-12",
            worst_loss < 1e-12,
            format!("worst {worst_loss:.3e}"),
        ),
        CheckOutcome::new(
            "w2_gap_below_1e-6",
            worst_gap < 1e-6,
            format!("worst {worst_gap:.3e}"),
        ),
        CheckOutcome::new(
            "null_conservation_below_1e-8",
            worst_dev < 1e-8,
            format!("worst {worst_dev:.3e}"),
        ),
    ];
    Ok((vec![("regression_bias".to_string(), table)], checks))
}

#[derive(Debug, Clone)]
pub struct EnsembleRow {
    pub draw: usize,
    pub dist_to_oracle: f64,
}

#[derive(Debug)]
pub struct EnsembleResult {
    pub rows: Vec<EnsembleRow>,
    /// (i, j, sample moment, oracle moment, z score); mean rows carry j = -1.
    pub moment_rows: Vec<(i64, i64, f64, f64, f64)>,
    pub max_abs_z: f64,
}

pub struct EnsembleSettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub draws: usize,
    pub max_steps: usize,
    pub threads: usize,
}

impl EnsembleSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 8),
            p: config.get_usize("dims.p", 24),
            draws: config.get_usize("experiment.draws", 100),
            max_steps: config.get_usize("optimizer.steps", 30_000),
            threads: config.threads(),
        }
    }
}

/// Trains an ensemble of deterministic linear models from prior draws and
/// compares each limit, and the ensemble's empirical moments, with the
/// closed-form law.
pub fn ensemble_equivalence(settings: &EnsembleSettings) -> Result<EnsembleResult, HarnessError> {
    let prior = data::default_prior(settings.seed, settings.p, settings.p, 1.0, 1.0);
    let (prob, _) = data::generate_regression(settings.seed, settings.n, settings.p, &prior)?;
    let gram = prob.x().transpose_matmul(prob.x());
    let lmax = numerics::sym_eigen(&gram)?.values[0];

    let limits = par_replicas(settings.threads, settings.draws, |draw| {
        let z = rng::standard_normal(
            &mut rng::stream(settings.seed, &[910, draw as u64]),
            prior.factor_rank(),
        );
        let w0 = prior.sample(&z).expect("prior sample");
        let theta0 = VariationalParams {
            mu: w0.clone(),
            factor: Matrix::zeros(settings.p, 0),
        };
        let cfg = SgdConfig {
            learning_rate: 0.9 / lmax,
            momentum: 0.0,
            nesterov: false,
            steps: settings.max_steps,
            batch_size: settings.n,
            param_samples: 1,
            schedule: optim::Schedule::Constant,
            record_every: 200,
            stop_at_loss: Some(1e-17),
            divergence_guard: 1e12,
        };
        let mut grad_fn = regression_grad_fn(&prob);
        let trace = optim::sgd_run(settings.n, &mut grad_fn, &theta0, &cfg, draw as u64)
            .expect("deterministic training");
        let limit = trace.final_params().mu.clone();
        let oracle_limit = oracles::ensemble_member_limit(&prob, &w0).expect("oracle");
        let dist: f64 = limit
            .iter()
            .zip(&oracle_limit)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        (limit, dist)
    });

    let rows: Vec<EnsembleRow> = limits
        .iter()
        .enumerate()
        .map(|(draw, (_, dist))| EnsembleRow {
            draw,
            dist_to_oracle: *dist,
        })
        .collect();

    // Empirical moments of the trained ensemble vs the oracle Gaussian.
    let oracle = oracles::regression_implicit_bias_solution(&prob, &prior)?;
    let sigma_star = oracle.covariance();
    let k = settings.draws as f64;
    let p = settings.p;
    let mut mean = vec![0.0; p];
    for (limit, _) in &limits {
        for (m, v) in mean.iter_mut().zip(limit) {
            *m += v / k;
        }
    }
    let mut moment_rows = Vec::new();
    let mut max_abs_z = 0.0f64;
    for i in 0..p {
        let se = (sigma_star[(i, i)] / k).sqrt();
        let z = if se > 0.0 {
            (mean[i] - oracle.mean()[i]) / se
        } else {
            // A direction with zero oracle variance must match exactly.
            (mean[i] - oracle.mean()[i]) / 1e-9
        };
        max_abs_z = max_abs_z.max(z.abs());
        moment_rows.push((i as i64, -1, mean[i], oracle.mean()[i], z));
    }
    for i in 0..p {
        for j in i..p {
            let mut cov = 0.0;
            for (limit, _) in &limits {
                cov += (limit[i] - mean[i]) * (limit[j] - mean[j]);
            }
            cov /= k - 1.0;
            let var_est =
                (sigma_star[(i, i)] * sigma_star[(j, j)] + sigma_star[(i, j)].powi(2)) / k;
            let se = var_est.sqrt();
            let z = if se > 0.0 {
                (cov - sigma_star[(i, j)]) / se
            } else {
                (cov - sigma_star[(i, j)]) / 1e-9
            };
            max_abs_z = max_abs_z.max(z.abs());
            moment_rows.push((i as i64, j as i64, cov, sigma_star[(i, j)], z));
        }
    }

    Ok(EnsembleResult {
        rows,
        moment_rows,
        max_abs_z,
    })
}

pub fn run_ensemble(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = EnsembleSettings::from_config(config);
    let result = ensemble_equivalence(&settings)?;

    let mut per_draw = ResultTable::new(&["draw", "dist_to_oracle"]);
    for row in &result.rows {
        per_draw.push_row(vec![row.draw.into(), row.dist_to_oracle.into()]);
    }
    per_draw.sort_rows();

    let mut moments = ResultTable::new(&["i", "j", "sample", "oracle", "z"]);
    for (i, j, sample, oracle, z) in &result.moment_rows {
        moments.push_row(vec![
            Cell::Int(*i),
            Cell::Int(*j),
            (*sample).into(),
            (*oracle).into(),
            (*z).into(),
        ]);
    }
    moments.sort_rows();

    let worst_dist = result
        .rows
        .iter()
        .map(|r| r.dist_to_oracle)
        .fold(0.0, f64::max);
    let checks = vec![
        CheckOutcome::new(
            "per_draw_limit_within_1e-6",
            worst_dist < 1e-6,
            format!("worst {worst_dist:.3e}"),
        ),
        CheckOutcome::new(
            "moments_within_4_se",
            result.max_abs_z <= 4.0,
            format!("max |z| = {:.2}", result.max_abs_z),
        ),
    ];
    Ok((
        vec![
            ("ensemble_draws".to_string(), per_draw),
            ("ensemble_moments".to_string(), moments),
        ],
        checks,
    ))
}
