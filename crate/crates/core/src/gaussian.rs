//! Gaussians with factored covariance Σ = S Sᵀ and the divergences used as
//! regularizers and oracles: squared 2-Wasserstein (Bures) distance, its
//! subspace decomposition, and the Gaussian KL.

use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, SubspaceBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is singular; KL divergence is infinite")]
    SingularCovariance,
    #[error(
        "covariance not supported on the complement: range-block norm {block_norm:.3e} exceeds 1e-8"
    )]
    RangeBlockNotZero { block_norm: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Gaussian distribution N(mean, factor · factorᵀ).
///
/// The covariance is stored only through its P × R factor; R = 0 is a point
/// mass. Σ is materialized on demand by the few operations that need it.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    factor: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, factor: Matrix) -> Result<Self, GaussianError> {
        if factor.rows() != mean.len() {
            return Err(GaussianError::DimensionMismatch {
                context: "factor rows vs mean length",
                expected: mean.len(),
                got: factor.rows(),
            });
        }
        Ok(Self { mean, factor })
    }

    /// Point mass at `mean`.
    pub fn point_mass(mean: Vec<f64>) -> Self {
        let p = mean.len();
        Self {
            mean,
            factor: Matrix::zeros(p, 0),
        }
    }

    /// Isotropic Gaussian N(mean, sigma² I).
    pub fn isotropic(mean: Vec<f64>, sigma: f64) -> Self {
        let p = mean.len();
        Self {
            mean,
            factor: Matrix::from_diag(&vec![sigma; p]),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn factor_rank(&self) -> usize {
        self.factor.cols()
    }

    /// Materializes Σ = S Sᵀ.
    pub fn covariance(&self) -> Matrix {
        self.factor.matmul(&self.factor.transpose())
    }

    /// μ + S z for a caller-supplied standard-normal draw z of length R.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>, GaussianError> {
        if noise.len() != self.factor.cols() {
            return Err(GaussianError::DimensionMismatch {
                context: "noise length vs factor rank",
                expected: self.factor.cols(),
                got: noise.len(),
            });
        }
        let mut out = self.mean.clone();
        for (o, s) in out.iter_mut().zip(self.factor.matvec(noise)) {
            *o += s;
        }
        Ok(out)
    }

    /// Variance of xᵀw under w ~ self, i.e. ‖Sᵀx‖².
    pub fn predictive_variance(&self, x: &[f64]) -> Result<f64, GaussianError> {
        if x.len() != self.dim() {
            return Err(GaussianError::DimensionMismatch {
                context: "input length vs dimension",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.factor.transpose_matvec(x).iter().map(|v| v * v).sum())
    }
}

/// Squared 2-Wasserstein distance between Gaussians,
/// ‖Δμ‖² + tr(Σ_q + Σ_p − 2 (Σ_q^{1/2} Σ_p Σ_q^{1/2})^{1/2}).
pub fn w2_squared(q: &Gaussian, p: &Gaussian) -> Result<f64, GaussianError> {
    if q.dim() != p.dim() {
        return Err(GaussianError::DimensionMismatch {
            context: "distribution dimensions",
            expected: q.dim(),
            got: p.dim(),
        });
    }
    let mean_term: f64 = q
        .mean
        .iter()
        .zip(&p.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let sigma_q = q.covariance();
    let sigma_p = p.covariance();
    let root_q = numerics::psd_sqrt(&sigma_q, 1e-14)?;
    let inner = root_q.matmul(&sigma_p).matmul(&root_q);
    let cross = numerics::psd_sqrt(&inner, 1e-14)?;
    let bures = sigma_q.trace() + sigma_p.trace() - 2.0 * cross.trace();
    // The exact value is non-negative; clamp the floating-point residue.
    Ok((mean_term + bures).max(0.0))
}

/// The two q-dependent terms of the Wasserstein subspace decomposition:
/// the squared mean gap on `range` and the W2² of the Gaussians projected
/// onto `null`.
///
/// Requires the covariance of `q` to vanish on `range` (block norm below
/// 1e-8 relative to the factor scale). The sum of the two terms equals
/// w2_squared(q, p) up to an additive constant independent of q.
pub fn w2_squared_decomposed(
    q: &Gaussian,
    p: &Gaussian,
    range: &SubspaceBasis,
    null: &SubspaceBasis,
) -> Result<(f64, f64), GaussianError> {
    let dim = q.dim();
    if p.dim() != dim || range.ambient_dim() != dim || null.ambient_dim() != dim {
        return Err(GaussianError::DimensionMismatch {
            context: "decomposition dimensions",
            expected: dim,
            got: p.dim().min(range.ambient_dim()).min(null.ambient_dim()),
        });
    }
    // Precondition: V_rangeᵀ Σ V_range = 0, checked through the factor as
    // ‖V_rangeᵀ S‖ (the block is that matrix times its transpose).
    let range_factor = range.basis().transpose_matmul(q.factor());
    let block_norm = range_factor.matmul(&range_factor.transpose()).max_abs();
    let scale = q.factor().max_abs().powi(2).max(1.0);
    if block_norm > 1e-8 * scale {
        return Err(GaussianError::RangeBlockNotZero { block_norm });
    }

    let mean_range_term: f64 = range
        .project_coords(q.mean())
        .iter()
        .zip(range.project_coords(p.mean()))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let q_null = Gaussian::new(
        null.project_coords(q.mean()),
        null.basis().transpose_matmul(q.factor()),
    )?;
    let p_null = Gaussian::new(
        null.project_coords(p.mean()),
        null.basis().transpose_matmul(p.factor()),
    )?;
    let null_block = w2_squared(&q_null, &p_null)?;
    Ok((mean_range_term, null_block))
}

/// Closed-form KL divergence D(q ‖ p) between full-rank Gaussians.
///
/// Errors with `SingularCovariance` when either covariance is rank
/// deficient (the KL diverges for a Gaussian with vanishing variance).
pub fn kl_divergence(q: &Gaussian, p: &Gaussian) -> Result<f64, GaussianError> {
    let dim = q.dim();
    if p.dim() != dim {
        return Err(GaussianError::DimensionMismatch {
            context: "distribution dimensions",
            expected: dim,
            got: p.dim(),
        });
    }
    let sigma_q = q.covariance();
    let sigma_p = p.covariance();
    let eig_q = numerics::sym_eigen(&sigma_q)?;
    let eig_p = numerics::sym_eigen(&sigma_p)?;
    let rank_ok = |vals: &[f64]| {
        let top = vals.first().copied().unwrap_or(0.0);
        top > 0.0 && vals.iter().all(|&l| l > 1e-12 * top)
    };
    if !rank_ok(&eig_q.values) || !rank_ok(&eig_p.values) {
        return Err(GaussianError::SingularCovariance);
    }

    // Σ_p⁻¹ from the eigendecomposition.
    let n = dim;
    let mut p_inv = Matrix::zeros(n, n);
    for k in 0..n {
        let inv_l = 1.0 / eig_p.values[k];
        for i in 0..n {
            let qik = eig_p.vectors[(i, k)] * inv_l;
            for j in 0..n {
                p_inv[(i, j)] += qik * eig_p.vectors[(j, k)];
            }
        }
    }

    let trace_term = p_inv.matmul(&sigma_q).trace();
    let delta: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let solved = p_inv.matvec(&delta);
    let maha: f64 = delta.iter().zip(&solved).map(|(a, b)| a * b).sum();
    let logdet_p: f64 = eig_p.values.iter().map(|l| l.ln()).sum();
    let logdet_q: f64 = eig_q.values.iter().map(|l| l.ln()).sum();
    Ok(0.5 * (trace_term + maha - dim as f64 + logdet_p - logdet_q))
}
