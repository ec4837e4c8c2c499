//! Composable training objectives: the plain expected loss, the
//! KL-regularized evidence bound, and generalized variational inference with
//! a squared 2-Wasserstein regularizer.
//!
//! Gradients of the W2 term are provided for isotropic priors only, where
//! the Bures coupling reduces to the nuclear norm of the factor:
//! W2² = ‖μ − μ₀‖² + tr(S Sᵀ) − 2σ₀‖S‖_* + P σ₀².

use thiserror::Error;

use crate::gaussian::{self, Gaussian, GaussianError};
use crate::numerics::{self, Matrix, NumericsError};
use crate::optim::VariationalParams;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("W2 gradients require an isotropic prior covariance σ₀²I")]
    PriorNotIsotropic,
    #[error("mean-field KL requires a diagonal square factor, got {rows}x{cols}")]
    NotMeanField { rows: usize, cols: usize },
    #[error("mean-field KL diverges: factor entry {index} is {value:.3e}")]
    VanishingVariance { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Expected loss only; λ is ignored.
    ExpectedLoss,
    /// Expected loss + λ · KL(q ‖ prior).
    ElboKl,
    /// Expected loss + λ · W2²(q, prior).
    GviW2,
}

#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    pub prior: Gaussian,
}

impl ObjectiveSpec {
    pub fn expected_loss(prior: Gaussian) -> Self {
        Self {
            kind: ObjectiveKind::ExpectedLoss,
            lambda: 0.0,
            prior,
        }
    }

    pub fn elbo_kl(lambda: f64, prior: Gaussian) -> Self {
        Self {
            kind: ObjectiveKind::ElboKl,
            lambda,
            prior,
        }
    }

    pub fn gvi_w2(lambda: f64, prior: Gaussian) -> Self {
        Self {
            kind: ObjectiveKind::GviW2,
            lambda,
            prior,
        }
    }
}

/// Gradients of the full objective, with a flag marking subgradient
/// selections at (near-)repeated singular values of the factor.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub grad_mu: Vec<f64>,
    pub grad_factor: Matrix,
    pub degenerate_singular_values: bool,
}

/// Expected loss plus λ times the regularizer of the chosen kind.
pub fn objective_value(
    spec: &ObjectiveSpec,
    model_loss: f64,
    theta: &VariationalParams,
) -> Result<f64, ObjectiveError> {
    let reg = match spec.kind {
        ObjectiveKind::ExpectedLoss => 0.0,
        ObjectiveKind::ElboKl => gaussian::kl_divergence(&theta.to_gaussian(), &spec.prior)?,
        ObjectiveKind::GviW2 => gaussian::w2_squared(&theta.to_gaussian(), &spec.prior)?,
    };
    Ok(model_loss + spec.lambda * reg)
}

/// Extracts σ₀ if the prior covariance is σ₀²I within 1e-10.
fn isotropic_sigma(prior: &Gaussian) -> Option<f64> {
    let sigma = prior.covariance();
    let p = prior.dim();
    let s0 = sigma[(0, 0)];
    if s0 < 0.0 {
        return None;
    }
    for i in 0..p {
        for j in 0..p {
            let expected = if i == j { s0 } else { 0.0 };
            if (sigma[(i, j)] - expected).abs() > 1e-10 * s0.max(1.0) {
                return None;
            }
        }
    }
    Some(s0.sqrt())
}

/// Adds λ times the regularizer gradients to the model gradients.
///
/// For the W2 kind (isotropic prior σ₀²I) the factor gradient is
/// 2S − 2σ₀ U Vᵀ with U, V from the thin SVD of S; repeated singular values
/// within 1e-10 keep the U Vᵀ subgradient but set the degeneracy flag.
pub fn objective_grad(
    spec: &ObjectiveSpec,
    model_grad_mu: &[f64],
    model_grad_factor: &Matrix,
    theta: &VariationalParams,
) -> Result<ObjectiveGrad, ObjectiveError> {
    if model_grad_mu.len() != theta.mu.len() {
        return Err(ObjectiveError::DimensionMismatch(format!(
            "model grad length {} vs mu length {}",
            model_grad_mu.len(),
            theta.mu.len()
        )));
    }
    let mut grad_mu = model_grad_mu.to_vec();
    let mut grad_factor = model_grad_factor.clone();
    let mut degenerate = false;
    if spec.lambda == 0.0 {
        return Ok(ObjectiveGrad {
            grad_mu,
            grad_factor,
            degenerate_singular_values: false,
        });
    }
    match spec.kind {
        ObjectiveKind::ExpectedLoss => {}
        ObjectiveKind::ElboKl => {
            let (kl_mu, kl_factor) = meanfield_kl_grad(
                &theta.mu,
                &theta.factor,
                spec.prior.mean(),
                &prior_sigma_for_meanfield(&spec.prior)?,
            )?;
            for (g, k) in grad_mu.iter_mut().zip(&kl_mu) {
                *g += spec.lambda * k;
            }
            grad_factor.axpy(spec.lambda, &kl_factor);
        }
        ObjectiveKind::GviW2 => {
            let sigma0 = isotropic_sigma(&spec.prior).ok_or(ObjectiveError::PriorNotIsotropic)?;
            for ((g, t), p0) in grad_mu.iter_mut().zip(&theta.mu).zip(spec.prior.mean()) {
                *g += spec.lambda * 2.0 * (t - p0);
            }
            // d/dS [tr(SSᵀ) − 2σ₀ ‖S‖_*] = 2S − 2σ₀ U Vᵀ.
            let svd = numerics::svd(&theta.factor)?;
            let top = svd.singular_values.first().copied().unwrap_or(0.0);
            for pair in svd.singular_values.windows(2) {
                if (pair[0] - pair[1]).abs() < 1e-10 * top.max(1.0) {
                    degenerate = true;
                }
            }
            if svd
                .singular_values
                .iter()
                .any(|&s| s < 1e-10 * top.max(1.0))
            {
                degenerate = true;
            }
            let uvt = svd.u.matmul(&svd.v.transpose());
            grad_factor.axpy(spec.lambda * 2.0, &theta.factor);
            grad_factor.axpy(-spec.lambda * 2.0 * sigma0, &uvt);
        }
    }
    Ok(ObjectiveGrad {
        grad_mu,
        grad_factor,
        degenerate_singular_values: degenerate,
    })
}

/// Per-coordinate prior standard deviations for the mean-field KL; the prior
/// covariance must be diagonal.
fn prior_sigma_for_meanfield(prior: &Gaussian) -> Result<Vec<f64>, ObjectiveError> {
    let sigma = prior.covariance();
    let p = prior.dim();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        for j in 0..p {
            if i != j && sigma[(i, j)].abs() > 1e-10 {
                return Err(ObjectiveError::PriorNotIsotropic);
            }
        }
        let v = sigma[(i, i)];
        if v <= 0.0 {
            return Err(ObjectiveError::VanishingVariance { index: i, value: v });
        }
        out.push(v.sqrt());
    }
    Ok(out)
}

/// KL(N(μ, diag(s²)) ‖ N(μ₀, diag(σ₀²))) for a mean-field factor stored as a
/// diagonal square matrix or a single column of per-coordinate scales.
pub fn meanfield_kl(
    mu: &[f64],
    factor: &Matrix,
    prior_mu: &[f64],
    prior_sigma: &[f64],
) -> Result<f64, ObjectiveError> {
    let s = meanfield_scales(factor)?;
    let mut total = 0.0;
    for i in 0..mu.len() {
        let s2 = s[i] * s[i];
        if s2 < 1e-24 {
            return Err(ObjectiveError::VanishingVariance {
                index: i,
                value: s[i],
            });
        }
        let p2 = prior_sigma[i] * prior_sigma[i];
        let dm = mu[i] - prior_mu[i];
        total += 0.5 * ((s2 + dm * dm) / p2 - 1.0 + (p2 / s2).ln());
    }
    Ok(total)
}

/// Gradients of [`meanfield_kl`] in (μ, factor) with the factor layout
/// preserved.
pub fn meanfield_kl_grad(
    mu: &[f64],
    factor: &Matrix,
    prior_mu: &[f64],
    prior_sigma: &[f64],
) -> Result<(Vec<f64>, Matrix), ObjectiveError> {
    let s = meanfield_scales(factor)?;
    let mut grad_mu = Vec::with_capacity(mu.len());
    let mut grad_s = Vec::with_capacity(mu.len());
    for i in 0..mu.len() {
        let p2 = prior_sigma[i] * prior_sigma[i];
        grad_mu.push((mu[i] - prior_mu[i]) / p2);
        if s[i].abs() < 1e-12 {
            return Err(ObjectiveError::VanishingVariance {
                index: i,
                value: s[i],
            });
        }
        grad_s.push(s[i] / p2 - 1.0 / s[i]);
    }
    let mut grad_factor = Matrix::zeros(factor.rows(), factor.cols());
    if factor.cols() == 1 {
        for (i, g) in grad_s.iter().enumerate() {
            grad_factor[(i, 0)] = *g;
        }
    } else {
        for (i, g) in grad_s.iter().enumerate() {
            grad_factor[(i, i)] = *g;
        }
    }
    Ok((grad_mu, grad_factor))
}

/// Per-coordinate scales from a mean-field factor: either a P×1 column or a
/// diagonal P×P matrix.
fn meanfield_scales(factor: &Matrix) -> Result<Vec<f64>, ObjectiveError> {
    if factor.cols() == 1 {
        return Ok(factor.col_vec(0));
    }
    if factor.rows() != factor.cols() {
        return Err(ObjectiveError::NotMeanField {
            rows: factor.rows(),
            cols: factor.cols(),
        });
    }
    for i in 0..factor.rows() {
        for j in 0..factor.cols() {
            if i != j && factor[(i, j)] != 0.0 {
                return Err(ObjectiveError::NotMeanField {
                    rows: factor.rows(),
                    cols: factor.cols(),
                });
            }
        }
    }
    Ok((0..factor.rows()).map(|i| factor[(i, i)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_theta(seed: u64, p: usize, r: usize) -> VariationalParams {
        VariationalParams {
            mu: rng::standard_normal(&mut rng::stream(seed, &[140]), p),
            factor: Matrix::new(
                p,
                r,
                rng::standard_normal(&mut rng::stream(seed, &[141]), p * r),
            )
            .unwrap(),
        }
    }

    #[test]
    fn lambda_zero_reduces_to_expected_loss() {
        let prior = Gaussian::isotropic(vec![0.0; 4], 1.0);
        let theta = random_theta(1, 4, 4);
        let loss = 1.37;
        for kind in [ObjectiveKind::ExpectedLoss, ObjectiveKind::GviW2] {
            let spec = ObjectiveSpec {
                kind,
                lambda: 0.0,
                prior: prior.clone(),
            };
            assert_eq!(objective_value(&spec, loss, &theta).unwrap(), loss);
            let g = objective_grad(&spec, &[0.1; 4], &Matrix::zeros(4, 4), &theta).unwrap();
            assert_eq!(g.grad_mu, vec![0.1; 4]);
            assert_eq!(g.grad_factor.max_abs(), 0.0);
        }
    }

    #[test]
    fn expected_loss_kind_ignores_lambda() {
        let prior = Gaussian::isotropic(vec![0.0; 3], 1.0);
        let spec = ObjectiveSpec {
            kind: ObjectiveKind::ExpectedLoss,
            lambda: 100.0,
            prior,
        };
        let theta = random_theta(2, 3, 3);
        assert_eq!(objective_value(&spec, 2.5, &theta).unwrap(), 2.5);
    }

    #[test]
    fn gvi_regularizer_vanishes_at_prior() {
        let prior = Gaussian::isotropic(vec![0.3, -0.2], 0.7);
        let spec = ObjectiveSpec::gvi_w2(5.0, prior.clone());
        let theta = VariationalParams::from_gaussian(&prior);
        let v = objective_value(&spec, 1.0, &theta).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        // μ-gradient of the W2 term is zero at μ = μ₀.
        let g = objective_grad(&spec, &[0.0, 0.0], &Matrix::zeros(2, 2), &theta).unwrap();
        assert!(g.grad_mu.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gvi_w2_value_matches_nuclear_norm_form() {
        // For an isotropic prior the general Bures value must reduce to
        // ‖Δμ‖² + Σ(s_i − σ₀)² + (P − R)σ₀².
        let p = 5;
        let r = 3;
        let sigma0 = 0.8;
        let prior = Gaussian::isotropic(vec![0.1; p], sigma0);
        let theta = random_theta(3, p, r);
        let spec = ObjectiveSpec::gvi_w2(1.0, prior.clone());
        let general = objective_value(&spec, 0.0, &theta).unwrap();

        let svd = numerics::svd(&theta.factor).unwrap();
        let mean_term: f64 = theta
            .mu
            .iter()
            .zip(prior.mean())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let sv_term: f64 = svd
            .singular_values
            .iter()
            .map(|s| (s - sigma0) * (s - sigma0))
            .sum();
        let rest = (p - r) as f64 * sigma0 * sigma0;
        let closed = mean_term + sv_term + rest;
        assert!(
            (general - closed).abs() < 1e-8,
            "{general} vs nuclear-norm form {closed}"
        );
    }

    #[test]
    fn gvi_gradients_match_finite_differences() {
        let p = 4;
        let r = 3;
        let prior = Gaussian::isotropic(vec![0.2; p], 0.6);
        let spec = ObjectiveSpec::gvi_w2(0.7, prior.clone());
        let theta = random_theta(4, p, r);
        let zero_mu = vec![0.0; p];
        let zero_factor = Matrix::zeros(p, r);
        let g = objective_grad(&spec, &zero_mu, &zero_factor, &theta).unwrap();
        assert!(!g.degenerate_singular_values);

        let f = |t: &VariationalParams| objective_value(&spec, 0.0, t).unwrap();
        let step = 1e-6;
        for i in 0..p {
            let mut plus = theta.clone();
            plus.mu[i] += step;
            let mut minus = theta.clone();
            minus.mu[i] -= step;
            let fd = (f(&plus) - f(&minus)) / (2.0 * step);
            assert!(
                (fd - g.grad_mu[i]).abs() < 1e-4 * fd.abs().max(1.0),
                "mu[{i}]: fd {fd} vs {}",
                g.grad_mu[i]
            );
        }
        for i in 0..p {
            for j in 0..r {
                let mut plus = theta.clone();
                plus.factor[(i, j)] += step;
                let mut minus = theta.clone();
                minus.factor[(i, j)] -= step;
                let fd = (f(&plus) - f(&minus)) / (2.0 * step);
                let got = g.grad_factor[(i, j)];
                assert!(
                    (fd - got).abs() < 1e-4 * fd.abs().max(1.0),
                    "factor[({i},{j})]: fd {fd} vs {got}"
                );
            }
        }
    }

    #[test]
    fn repeated_singular_values_flagged() {
        let prior = Gaussian::isotropic(vec![0.0; 3], 1.0);
        let spec = ObjectiveSpec::gvi_w2(1.0, prior);
        // Identity factor: all singular values equal.
        let theta = VariationalParams {
            mu: vec![0.0; 3],
            factor: Matrix::identity(3),
        };
        let g = objective_grad(&spec, &[0.0; 3], &Matrix::zeros(3, 3), &theta).unwrap();
        assert!(g.degenerate_singular_values);
        // Subgradient U Vᵀ = I is still returned: grad = 2S − 2σ₀I = 0 here.
        assert!(g.grad_factor.max_abs() < 1e-12);
    }

    #[test]
    fn gvi_grad_rejects_anisotropic_prior() {
        let prior = Gaussian::new(vec![0.0, 0.0], Matrix::from_diag(&[1.0, 2.0])).unwrap();
        let spec = ObjectiveSpec::gvi_w2(1.0, prior);
        let theta = random_theta(5, 2, 2);
        assert!(matches!(
            objective_grad(&spec, &[0.0; 2], &Matrix::zeros(2, 2), &theta),
            Err(ObjectiveError::PriorNotIsotropic)
        ));
    }

    #[test]
    fn elbo_value_rejects_rank_deficient_q() {
        let prior = Gaussian::isotropic(vec![0.0; 2], 1.0);
        let spec = ObjectiveSpec::elbo_kl(1.0, prior);
        let theta = VariationalParams {
            mu: vec![0.0, 0.0],
            factor: Matrix::new(2, 1, vec![1.0, 0.0]).unwrap(),
        };
        assert!(objective_value(&spec, 0.0, &theta).is_err());
    }

    #[test]
    fn meanfield_kl_matches_full_kl() {
        let p = 3;
        let mu = vec![0.4, -0.1, 0.9];
        let scales = vec![0.5, 1.2, 0.8];
        let factor = Matrix::from_diag(&scales);
        let prior_mu = vec![0.0; p];
        let prior_sigma = vec![1.0; p];
        let mf = meanfield_kl(&mu, &factor, &prior_mu, &prior_sigma).unwrap();
        let q = Gaussian::new(mu, factor).unwrap();
        let prior = Gaussian::isotropic(prior_mu, 1.0);
        let full = gaussian::kl_divergence(&q, &prior).unwrap();
        assert!((mf - full).abs() < 1e-10, "{mf} vs {full}");
    }

    #[test]
    fn meanfield_kl_grads_match_finite_differences() {
        let mu = vec![0.3, -0.7];
        let scales = vec![0.9, 0.4];
        let factor = Matrix::from_diag(&scales);
        let prior_mu = vec![0.1, 0.0];
        let prior_sigma = vec![0.8, 1.1];
        let (gm, gf) = meanfield_kl_grad(&mu, &factor, &prior_mu, &prior_sigma).unwrap();
        let step = 1e-7;
        for i in 0..2 {
            let mut plus = mu.clone();
            plus[i] += step;
            let mut minus = mu.clone();
            minus[i] -= step;
            let fd = (meanfield_kl(&plus, &factor, &prior_mu, &prior_sigma).unwrap()
                - meanfield_kl(&minus, &factor, &prior_mu, &prior_sigma).unwrap())
                / (2.0 * step);
            assert!((fd - gm[i]).abs() < 1e-5);
        }
        for i in 0..2 {
            let mut plus = factor.clone();
            plus[(i, i)] += step;
            let mut minus = factor.clone();
            minus[(i, i)] -= step;
            let fd = (meanfield_kl(&mu, &plus, &prior_mu, &prior_sigma).unwrap()
                - meanfield_kl(&mu, &minus, &prior_mu, &prior_sigma).unwrap())
                / (2.0 * step);
            assert!((fd - gf[(i, i)]).abs() < 1e-5);
        }
    }
}
