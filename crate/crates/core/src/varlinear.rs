//! Exact expected losses and gradients for variational linear models with a
//! Gaussian weight distribution q(w) = N(μ, S Sᵀ).
//!
//! Regression uses the Gaussian likelihood, classification the exponential
//! loss whose expectation is available through the Gaussian moment
//! generating function.

use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, DEFAULT_RANK_TOL};
use crate::optim::VariationalParams;

/// Exponent threshold beyond which exp() would overflow into meaningless
/// territory; hitting it signals the mean parameters were scaled too far.
pub const EXP_OVERFLOW_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarLinearError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("sigma2 must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("exponent {exponent:.1} at data point {index} exceeds overflow guard; expected loss diverged")]
    ExpOverflow { index: usize, exponent: f64 },
    #[error("dataset is not linearly separable")]
    NotSeparable,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Overparametrized regression data with Gaussian likelihood variance σ².
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    x: Matrix,
    y: Vec<f64>,
    sigma2: f64,
}

impl RegressionProblem {
    pub fn new(x: Matrix, y: Vec<f64>, sigma2: f64) -> Result<Self, VarLinearError> {
        if y.len() != x.rows() {
            return Err(VarLinearError::ShapeMismatch {
                context: format!("{} targets for {} rows", y.len(), x.rows()),
            });
        }
        if sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(VarLinearError::NonPositiveVariance(sigma2));
        }
        Ok(Self { x, y, sigma2 })
    }

    /// σ² = 1; it only rescales gradients and is absorbed in the learning rate.
    pub fn with_unit_variance(x: Matrix, y: Vec<f64>) -> Result<Self, VarLinearError> {
        Self::new(x, y, 1.0)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n_data(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// P > N with full row rank.
    pub fn is_overparametrized(&self) -> Result<bool, VarLinearError> {
        if self.dim() <= self.n_data() {
            return Ok(false);
        }
        Ok(numerics::rank(&self.x, DEFAULT_RANK_TOL)? == self.n_data())
    }

    /// The problem restricted to a subset of rows (used by minibatching).
    pub fn restrict_rows(&self, rows: &[usize]) -> RegressionProblem {
        let x_rows: Vec<Vec<f64>> = rows.iter().map(|&i| self.x.row(i).to_vec()).collect();
        RegressionProblem {
            x: Matrix::from_rows(&x_rows).expect("rows of a valid matrix"),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            sigma2: self.sigma2,
        }
    }
}

/// Linearly separable classification data with labels absorbed into the
/// inputs (x_n ← y_n x_n), trained with the exponential loss.
#[derive(Debug, Clone)]
pub struct ClassificationProblem {
    x: Matrix,
    loss_kind: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Exponential,
}

impl ClassificationProblem {
    /// Builds the problem. For overparametrized full-row-rank data the
    /// separability check runs automatically via the interpolating
    /// construction w = Xᵀ(XXᵀ)⁻¹1; other inputs must be certified
    /// separable by the caller through [`ClassificationProblem::new_certified`].
    pub fn new(x: Matrix) -> Result<Self, VarLinearError> {
        let overparam = x.cols() > x.rows() && numerics::rank(&x, DEFAULT_RANK_TOL)? == x.rows();
        if overparam && !separable_by_interpolation(&x)? {
            return Err(VarLinearError::NotSeparable);
        }
        Ok(Self {
            x,
            loss_kind: LossKind::Exponential,
        })
    }

    /// Skips the separability check; the caller certifies Assumption 1.
    pub fn new_certified(x: Matrix) -> Self {
        Self {
            x,
            loss_kind: LossKind::Exponential,
        }
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn n_data(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn restrict_rows(&self, rows: &[usize]) -> ClassificationProblem {
        let x_rows: Vec<Vec<f64>> = rows.iter().map(|&i| self.x.row(i).to_vec()).collect();
        ClassificationProblem {
            x: Matrix::from_rows(&x_rows).expect("rows of a valid matrix"),
            loss_kind: self.loss_kind,
        }
    }
}

/// Separability witness for sign-absorbed data: the minimum-norm
/// interpolator of the all-ones target must classify every row positively.
pub fn separable_by_interpolation(x: &Matrix) -> Result<bool, VarLinearError> {
    let ones = vec![1.0; x.rows()];
    let w = numerics::pseudo_inverse_apply(x, &ones, DEFAULT_RANK_TOL)?;
    Ok(x.matvec(&w).iter().all(|&m| m > 0.0))
}

fn check_shapes(
    x: &Matrix,
    theta: &VariationalParams,
    what: &'static str,
) -> Result<(), VarLinearError> {
    if theta.mu.len() != x.cols() || theta.factor.rows() != x.cols() {
        return Err(VarLinearError::ShapeMismatch {
            context: format!(
                "{what}: P = {} but mu has {} entries and factor {} rows",
                x.cols(),
                theta.mu.len(),
                theta.factor.rows()
            ),
        });
    }
    Ok(())
}

/// E_q[‖y − Xw‖²] / (2σ²) = (‖y − Xμ‖² + tr(X Σ Xᵀ)) / (2σ²).
pub fn expected_regression_loss(
    prob: &RegressionProblem,
    theta: &VariationalParams,
) -> Result<f64, VarLinearError> {
    check_shapes(&prob.x, theta, "regression loss")?;
    let residual: f64 = prob
        .x
        .matvec(&theta.mu)
        .iter()
        .zip(&prob.y)
        .map(|(f, t)| (f - t) * (f - t))
        .sum();
    // tr(X S Sᵀ Xᵀ) = ‖X S‖_F².
    let xs = prob.x.matmul(&theta.factor);
    let trace_term = xs.frobenius_norm().powi(2);
    Ok((residual + trace_term) / (2.0 * prob.sigma2))
}

/// Gradients of the expected regression loss:
/// ∇μ = Xᵀ(Xμ − y)/σ², ∇S = XᵀX S/σ². Both lie in range(Xᵀ).
pub fn expected_regression_grad(
    prob: &RegressionProblem,
    theta: &VariationalParams,
) -> Result<(Vec<f64>, Matrix), VarLinearError> {
    check_shapes(&prob.x, theta, "regression grad")?;
    let mut residual = prob.x.matvec(&theta.mu);
    for (r, t) in residual.iter_mut().zip(&prob.y) {
        *r -= t;
    }
    let inv_s2 = 1.0 / prob.sigma2;
    let grad_mu: Vec<f64> = prob
        .x
        .transpose_matvec(&residual)
        .into_iter()
        .map(|g| g * inv_s2)
        .collect();
    let xs = prob.x.matmul(&theta.factor);
    let grad_factor = prob.x.transpose_matmul(&xs).scale(inv_s2);
    Ok((grad_mu, grad_factor))
}

/// Per-point weights e_n = exp(−x_nᵀμ + ½ x_nᵀ S Sᵀ x_n) of the expected
/// exponential loss; shared by the loss, its gradients, and the curvature
/// matrix.
fn exponential_weights(
    prob: &ClassificationProblem,
    theta: &VariationalParams,
) -> Result<Vec<f64>, VarLinearError> {
    check_shapes(&prob.x, theta, "exponential loss")?;
    let margins = prob.x.matvec(&theta.mu);
    let xs = prob.x.matmul(&theta.factor); // N × R, row n = Sᵀx_n
    let mut weights = Vec::with_capacity(prob.n_data());
    for n in 0..prob.n_data() {
        let quad: f64 = xs.row(n).iter().map(|v| v * v).sum();
        let exponent = -margins[n] + 0.5 * quad;
        if exponent > EXP_OVERFLOW_LIMIT {
            return Err(VarLinearError::ExpOverflow { index: n, exponent });
        }
        weights.push(exponent.exp());
    }
    Ok(weights)
}

/// E_q[Σ_n exp(−x_nᵀw)] = Σ_n exp(−x_nᵀμ + ½ x_nᵀ S Sᵀ x_n).
pub fn expected_exponential_loss(
    prob: &ClassificationProblem,
    theta: &VariationalParams,
) -> Result<f64, VarLinearError> {
    Ok(exponential_weights(prob, theta)?.iter().sum())
}

/// Gradients of the expected exponential loss:
/// ∇μ = −Σ_n e_n x_n, ∇S = Σ_n e_n x_n x_nᵀ S.
pub fn expected_exponential_grad(
    prob: &ClassificationProblem,
    theta: &VariationalParams,
) -> Result<(Vec<f64>, Matrix), VarLinearError> {
    let weights = exponential_weights(prob, theta)?;
    let p = prob.dim();
    let mut grad_mu = vec![0.0; p];
    for (n, &w) in weights.iter().enumerate() {
        for (g, &xv) in grad_mu.iter_mut().zip(prob.x.row(n)) {
            *g -= w * xv;
        }
    }
    // Σ e_n x_n (x_nᵀ S): accumulate the outer products applied to S.
    let xs = prob.x.matmul(&theta.factor); // row n = Sᵀx_n
    let r = theta.factor.cols();
    let mut grad_factor = Matrix::zeros(p, r);
    for (n, &w) in weights.iter().enumerate() {
        let srow = xs.row(n);
        for (i, &xv) in prob.x.row(n).iter().enumerate() {
            let c = w * xv;
            if c == 0.0 {
                continue;
            }
            for (j, &sv) in srow.iter().enumerate() {
                grad_factor[(i, j)] += c * sv;
            }
        }
    }
    Ok((grad_mu, grad_factor))
}

/// λ_max(A) for A = Σ_n e_n x_n x_nᵀ, the local curvature bound used to pick
/// safe learning rates for the exponential loss.
pub fn loss_curvature_bound(
    prob: &ClassificationProblem,
    theta: &VariationalParams,
) -> Result<f64, VarLinearError> {
    let a = curvature_matrix(prob, theta)?;
    let eig = numerics::sym_eigen(&a)?;
    Ok(eig.values.first().copied().unwrap_or(0.0))
}

/// The matrix A_t = Σ_n e_n x_n x_nᵀ itself.
pub fn curvature_matrix(
    prob: &ClassificationProblem,
    theta: &VariationalParams,
) -> Result<Matrix, VarLinearError> {
    let weights = exponential_weights(prob, theta)?;
    let p = prob.dim();
    let mut a = Matrix::zeros(p, p);
    for (n, &w) in weights.iter().enumerate() {
        let row = prob.x.row(n);
        for i in 0..p {
            let c = w * row[i];
            if c == 0.0 {
                continue;
            }
            for j in 0..p {
                a[(i, j)] += c * row[j];
            }
        }
    }
    Ok(a)
}
