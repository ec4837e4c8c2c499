//! Classification implicit-bias experiment: long full-batch runs on the
//! expected exponential loss, compared against the max-margin feasible-set
//! minimizer through the rescaled iterates.

use rand_chacha::ChaCha8Rng;

use crate::gaussian::{self, Gaussian};
use crate::harness::data;
use crate::harness::table::ResultTable;
use crate::harness::{CheckOutcome, ExperimentConfig, HarnessError};
use crate::optim::{self, Eval, SgdConfig, VariationalParams};
use crate::oracles;
use crate::rng;
use crate::varlinear::{self, ClassificationProblem};

use super::par_replicas;

pub struct ClassificationSettings {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub replicas: usize,
    pub steps: usize,
    pub record_every: usize,
    pub gen: data::ClassificationGen,
    pub prior_mu_scale: f64,
    pub prior_sigma0: f64,
    /// Learning-rate fraction of the curvature bound 1/λ_max(A₀).
    pub lr_fraction: f64,
    pub threads: usize,
}

impl ClassificationSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let p = config.get_usize("dims.p", 18);
        Self {
            seed: config.seed(),
            n: config.get_usize("dims.n", 6),
            p,
            replicas: config.get_usize("experiment.replicas", 10),
            steps: config.get_usize("optimizer.steps", 200_000),
            record_every: config.get_usize("optimizer.record_every", 2_000),
            gen: {
                let mut gen = data::ClassificationGen::desk_scale(p);
                if let Some(v) = config.get_f64_auto("data.x_scale") {
                    gen.x_scale = v;
                }
                gen.margin_gap_min = config.get_f64("data.margin_gap_min", gen.margin_gap_min);
                gen.min_support_curvature =
                    config.get_f64("data.min_support_curvature", gen.min_support_curvature);
                gen.w_tilde_max = config.get_f64("data.w_tilde_max", gen.w_tilde_max);
                gen
            },
            prior_mu_scale: config.get_f64("prior.mu_scale", 0.05),
            prior_sigma0: config.get_f64("prior.sigma0", 0.1),
            lr_fraction: config.get_f64("optimizer.lr_fraction", 0.5),
            threads: config.threads(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationRow {
    pub replica: usize,
    pub learning_rate: f64,
    pub cosine_to_margin: f64,
    /// max_{n ∈ support} Var[f(x_n)] at the end relative to its initial value.
    pub support_var_ratio: f64,
    /// W2² between the rescaled limit and the feasible-set minimizer.
    pub rescaled_w2_gap: f64,
    /// Residual ‖μ_T − ŵ log T − w̃‖ at the final step.
    pub final_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ClassificationStepRow {
    pub replica: usize,
    pub step: usize,
    pub loss: f64,
    pub cosine: f64,
    pub min_margin: f64,
    pub max_support_var: f64,
    pub residual: f64,
    pub cov_trace: f64,
}

fn exponential_grad_fn(
    prob: &ClassificationProblem,
) -> impl FnMut(
    &VariationalParams,
    &[usize],
    &mut ChaCha8Rng,
) -> Result<Eval, Box<dyn std::error::Error + Send + Sync>>
       + '_ {
    move |theta, batch, _| {
        let sub = prob.restrict_rows(batch);
        let loss = varlinear::expected_exponential_loss(&sub, theta)?;
        let (grad_mu, grad_factor) = varlinear::expected_exponential_grad(&sub, theta)?;
        Ok(Eval {
            loss,
            grad_mu,
            grad_factor,
        })
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn classification_bias_one(
    settings: &ClassificationSettings,
    replica: usize,
) -> Result<(ClassificationRow, Vec<ClassificationStepRow>), HarnessError> {
    let instance_seed = rng::derive_seed(settings.seed, &[920, replica as u64]);
    let prob = data::generate_classification(instance_seed, settings.n, settings.p, &settings.gen)?;
    let prior_mu: Vec<f64> =
        rng::standard_normal(&mut rng::stream(instance_seed, &[921]), settings.p)
            .iter()
            .map(|v| v * settings.prior_mu_scale)
            .collect();
    let prior = Gaussian::isotropic(prior_mu, settings.prior_sigma0);
    let theta0 = VariationalParams::from_gaussian(&prior);

    let curvature = varlinear::loss_curvature_bound(&prob, &theta0)?;
    let eta = settings.lr_fraction / curvature;
    let cfg = SgdConfig {
        learning_rate: eta,
        momentum: 0.0,
        nesterov: false,
        steps: settings.steps,
        batch_size: settings.n,
        param_samples: 1,
        schedule: optim::Schedule::Constant,
        record_every: settings.record_every,
        stop_at_loss: None,
        divergence_guard: 1e12,
    };
    let mut grad_fn = exponential_grad_fn(&prob);
    let trace = optim::sgd_run(settings.n, &mut grad_fn, &theta0, &cfg, instance_seed)?;

    let svm = oracles::hard_margin_svm(prob.x())?;
    let w_tilde = oracles::w_tilde(prob.x(), &svm, eta)?;
    let star = oracles::classification_feasible_minimizer(&prob, &prior)?;
    let support_rows: Vec<Vec<f64>> = svm
        .support_set
        .iter()
        .map(|&i| prob.x().row(i).to_vec())
        .collect();

    let support_var = |theta: &VariationalParams| -> f64 {
        support_rows
            .iter()
            .map(|x| {
                theta
                    .factor
                    .transpose_matvec(x)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let residual = |step: usize, mu: &[f64]| -> f64 {
        if step < 2 {
            return f64::NAN;
        }
        let log_t = (step as f64).ln();
        mu.iter()
            .zip(&svm.w_hat)
            .zip(&w_tilde.w_tilde)
            .map(|((m, w), wt)| {
                let r = m - w * log_t - wt;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    };

    let initial_support_var = support_var(&theta0);
    let step_rows: Vec<ClassificationStepRow> = trace
        .records
        .iter()
        .map(|rec| ClassificationStepRow {
            replica,
            step: rec.step,
            loss: rec.loss,
            cosine: cosine(&rec.theta.mu, &svm.w_hat),
            min_margin: prob
                .x()
                .matvec(&rec.theta.mu)
                .into_iter()
                .fold(f64::INFINITY, f64::min),
            max_support_var: support_var(&rec.theta),
            residual: residual(rec.step, &rec.theta.mu),
            cov_trace: rec.theta.factor.frobenius_norm().powi(2),
        })
        .collect();

    let final_params = trace.final_params();
    let rescaled = optim::rescaled_iterates(&trace, prob.x(), &prior)?;
    let (_, rescaled_final) = rescaled.last().expect("final step is at least 2");
    let rescaled_w2_gap = gaussian::w2_squared(&rescaled_final.to_gaussian(), &star)?;

    Ok((
        ClassificationRow {
            replica,
            learning_rate: eta,
            cosine_to_margin: cosine(&final_params.mu, &svm.w_hat),
            support_var_ratio: support_var(final_params) / initial_support_var,
            rescaled_w2_gap,
            final_residual: residual(trace.final_step, &final_params.mu),
        },
        step_rows,
    ))
}

pub fn classification_bias(
    settings: &ClassificationSettings,
) -> Result<(Vec<ClassificationRow>, Vec<ClassificationStepRow>), HarnessError> {
    let results = par_replicas(settings.threads, settings.replicas, |replica| {
        classification_bias_one(settings, replica)
    });
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    for r in results {
        let (row, step_rows) = r?;
        rows.push(row);
        steps.extend(step_rows);
    }
    Ok((rows, steps))
}

pub fn run(
    config: &ExperimentConfig,
) -> Result<(Vec<(String, ResultTable)>, Vec<CheckOutcome>), HarnessError> {
    let settings = ClassificationSettings::from_config(config);
    let (rows, step_rows) = classification_bias(&settings)?;

    let mut summary = ResultTable::new(&[
        "replica",
        "learning_rate",
        "cosine_to_margin",
        "support_var_ratio",
        "rescaled_w2_gap",
        "final_residual",
    ]);
    for row in &rows {
        summary.push_row(vec![
            row.replica.into(),
            row.learning_rate.into(),
            row.cosine_to_margin.into(),
            row.support_var_ratio.into(),
            row.rescaled_w2_gap.into(),
            row.final_residual.into(),
        ]);
    }
    summary.sort_rows();

    let mut per_step = ResultTable::new(&[
        "replica",
        "step",
        "loss",
        "cosine",
        "min_margin",
        "max_support_var",
        "residual",
        "cov_trace",
    ]);
    for row in &step_rows {
        per_step.push_row(vec![
            row.replica.into(),
            row.step.into(),
            row.loss.into(),
            row.cosine.into(),
            row.min_margin.into(),
            row.max_support_var.into(),
            row.residual.into(),
            row.cov_trace.into(),
        ]);
    }
    per_step.sort_rows();

    let worst_cos = rows
        .iter()
        .map(|r| r.cosine_to_margin)
        .fold(f64::INFINITY, f64::min);
    let worst_ratio = rows.iter().map(|r| r.support_var_ratio).fold(0.0, f64::max);
    let worst_gap = rows.iter().map(|r| r.rescaled_w2_gap).fold(0.0, f64::max);
    let checks = vec![
        CheckOutcome::new(
            "cosine_above_0.995",
            worst_cos > 0.995,
            format!("worst {worst_cos:.5}"),
        ),
        CheckOutcome::new(
            "support_variance_ratio_below_1e-3",
            worst_ratio < 1e-3,
            format!("worst {worst_ratio:.3e}"),
        ),
        CheckOutcome::new(
            "rescaled_w2_gap_below_5e-2",
            worst_gap < 5e-2,
            format!("worst {worst_gap:.3e}"),
        ),
    ];
    Ok((
        vec![
            ("classification_bias".to_string(), summary),
            ("classification_bias_steps".to_string(), per_step),
        ],
        checks,
    ))
}
