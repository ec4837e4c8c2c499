//! Closed-form ground truth the training dynamics are checked against: the
//! minimum-W2 interpolating Gaussian for regression, the trained-ensemble
//! law, the hard-margin SVM with its KKT data, the classification
//! feasible-set minimizer, and the assumption checkers.

use thiserror::Error;

use crate::gaussian::{Gaussian, GaussianError};
use crate::numerics::{self, Matrix, NumericsError, DEFAULT_RANK_TOL};
use crate::varlinear::{self, ClassificationProblem, RegressionProblem, VarLinearError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("X must be overparametrized with full row rank (rank {rank} of {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("dataset is not linearly separable")]
    NotSeparable,
    #[error("support-vector identification degenerate: {0}")]
    DegenerateSupport(String),
    #[error(
        "assumption check failed: separable={separable}, support_spans_data={support_spans_data}"
    )]
    AssumptionViolated {
        separable: bool,
        support_spans_data: bool,
    },
    #[error("log-linear system for w_tilde inconsistent: residual {residual:.3e}")]
    InconsistentSystem { residual: f64 },
    #[error("dual coefficients must be positive on the support; got {0:.3e}")]
    NonPositiveDual(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Model(#[from] VarLinearError),
}

/// Hard-margin SVM solution with its KKT certificate.
#[derive(Debug, Clone)]
pub struct SvmSolution {
    /// L2 max-margin vector ŵ.
    pub w_hat: Vec<f64>,
    /// Indices of points on the margin.
    pub support_set: Vec<usize>,
    /// Dual coefficients, zero off the support.
    pub dual_coeffs: Vec<f64>,
    /// Minimum margin over non-support points (κ > 1); infinite when every
    /// point is a support vector.
    pub margin_gap: f64,
}

/// Solution w̃ of the support-margin system η exp(−x_nᵀ w̃) = α_n.
#[derive(Debug, Clone)]
pub struct WtildeSolution {
    pub w_tilde: Vec<f64>,
}

/// Report of the two classification assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionReport {
    pub separable: bool,
    pub support_spans_data: bool,
}

/// The unique zero-loss Gaussian closest to the prior in 2-Wasserstein
/// distance: μ* = X†y + P_null μ₀, S* = P_null S₀.
pub fn regression_implicit_bias_solution(
    prob: &RegressionProblem,
    prior: &Gaussian,
) -> Result<Gaussian, OracleError> {
    let x = prob.x();
    let rank = numerics::rank(x, DEFAULT_RANK_TOL)?;
    if rank < x.rows() || x.cols() <= x.rows() {
        return Err(OracleError::RankDeficient {
            rank,
            rows: x.rows(),
        });
    }
    let (_, null) = numerics::row_space_bases(x, DEFAULT_RANK_TOL)?;
    let null_proj = numerics::projector(&null);
    let pinv_y = numerics::pseudo_inverse_apply(x, prob.y(), DEFAULT_RANK_TOL)?;
    let mu: Vec<f64> = pinv_y
        .iter()
        .zip(null_proj.matvec(prior.mean()))
        .map(|(a, b)| a + b)
        .collect();
    let factor = null_proj.matmul(prior.factor());
    Ok(Gaussian::new(mu, factor)?)
}

/// Limit of (S)GD on a deterministic linear model initialized at w₀:
/// X†y + P_null w₀.
pub fn ensemble_member_limit(
    prob: &RegressionProblem,
    w0: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let x = prob.x();
    let (_, null) = numerics::row_space_bases(x, DEFAULT_RANK_TOL)?;
    let pinv_y = numerics::pseudo_inverse_apply(x, prob.y(), DEFAULT_RANK_TOL)?;
    Ok(pinv_y
        .iter()
        .zip(null.project(w0))
        .map(|(a, b)| a + b)
        .collect())
}

/// Hard-margin SVM: min ‖w‖² s.t. X w ≥ 1, for sign-absorbed data.
///
/// Solved by projected gradient ascent on the dual (nonnegativity is the
/// only constraint, so the projection is a clamp), followed by an active-set
/// refinement that solves the equality-constrained least-norm problem on the
/// identified support and recovers the dual coefficients exactly.
pub fn hard_margin_svm(x: &Matrix) -> Result<SvmSolution, OracleError> {
    let n = x.rows();
    if n == 0 {
        return Err(OracleError::DegenerateSupport("empty dataset".to_string()));
    }
    if !varlinear::separable_by_interpolation(x).map_err(OracleError::Model)?
        && !separable_by_dual_probe(x)
    {
        return Err(OracleError::NotSeparable);
    }

    // Dual projected gradient: max Σα − ½ αᵀ XXᵀ α s.t. α ≥ 0.
    let gram = x.matmul(&x.transpose());
    let lmax = numerics::sym_eigen(&gram)?.values[0].max(1e-300);
    let step = 1.0 / lmax;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; x.cols()];
    for iter in 0..200_000 {
        // gradient of the dual: 1 − XXᵀα = 1 − X w.
        w = x.transpose_matvec(&alpha);
        let margins = x.matvec(&w);
        let mut max_change = 0.0f64;
        for i in 0..n {
            let next = (alpha[i] + step * (1.0 - margins[i])).max(0.0);
            max_change = max_change.max((next - alpha[i]).abs());
            alpha[i] = next;
        }
        if max_change < 1e-14 && iter > 10 {
            break;
        }
        if alpha.iter().any(|a| !a.is_finite()) || alpha.iter().sum::<f64>() > 1e12 {
            return Err(OracleError::NotSeparable);
        }
    }

    // Support identification on the PGD iterate, then exact refinement.
    let margins = x.matvec(&w);
    let loose: Vec<usize> = (0..n).filter(|&i| margins[i] < 1.0 + 1e-4).collect();
    if loose.is_empty() {
        return Err(OracleError::DegenerateSupport(
            "no margin-active points found".to_string(),
        ));
    }
    let refined = refine_support(x, &loose)?;
    let margins = x.matvec(&refined.w_hat);

    // KKT verification at tolerance 1e-6 relative to margin 1.
    for (i, &m) in margins.iter().enumerate() {
        if m < 1.0 - 1e-6 {
            return Err(OracleError::DegenerateSupport(format!(
                "primal infeasible after refinement: margin {m} at point {i}"
            )));
        }
    }
    let support_set: Vec<usize> = (0..n)
        .filter(|&i| (margins[i] - 1.0).abs() < 1e-6)
        .collect();
    if support_set != refined.support {
        // Re-refine on the margin-identified set; one pass suffices for the
        // unambiguous datasets this targets.
        let second = refine_support(x, &support_set)?;
        return finish_svm(x, second);
    }
    finish_svm(x, refined)
}

struct RefinedSvm {
    w_hat: Vec<f64>,
    support: Vec<usize>,
    alpha_support: Vec<f64>,
}

/// Least-norm solution with exact margins on the candidate support,
/// discarding candidates whose dual coefficient comes out non-positive.
fn refine_support(x: &Matrix, candidates: &[usize]) -> Result<RefinedSvm, OracleError> {
    let mut active: Vec<usize> = candidates.to_vec();
    for _ in 0..x.rows() + 1 {
        if active.is_empty() {
            return Err(OracleError::DegenerateSupport(
                "active set emptied during refinement".to_string(),
            ));
        }
        let rows: Vec<Vec<f64>> = active.iter().map(|&i| x.row(i).to_vec()).collect();
        let xs = Matrix::from_rows(&rows)?;
        let ones = vec![1.0; active.len()];
        // w = X_S†1 has exact unit margins on the support and minimum norm.
        let w_hat = numerics::pseudo_inverse_apply(&xs, &ones, DEFAULT_RANK_TOL)?;
        // α on the support solves X_S X_Sᵀ α = 1 (nonnegative least squares
        // collapses to this linear solve for linearly independent supports).
        let gram = xs.matmul(&xs.transpose());
        let alpha = solve_spd(&gram, &ones)?;
        if let Some(worst) = alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a <= 1e-10)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            active.remove(worst.0);
            continue;
        }
        return Ok(RefinedSvm {
            w_hat,
            support: active,
            alpha_support: alpha,
        });
    }
    Err(OracleError::DegenerateSupport(
        "active-set refinement did not settle".to_string(),
    ))
}

fn finish_svm(x: &Matrix, refined: RefinedSvm) -> Result<SvmSolution, OracleError> {
    let n = x.rows();
    let margins = x.matvec(&refined.w_hat);
    for (i, &m) in margins.iter().enumerate() {
        if m < 1.0 - 1e-6 {
            return Err(OracleError::DegenerateSupport(format!(
                "margin {m} below 1 at point {i}"
            )));
        }
    }
    let mut dual = vec![0.0; n];
    for (&i, &a) in refined.support.iter().zip(&refined.alpha_support) {
        if a <= 0.0 {
            return Err(OracleError::NonPositiveDual(a));
        }
        dual[i] = a;
    }
    // Stationarity: ŵ = Σ α_n x_n.
    let recon = x.transpose_matvec(&dual);
    let station_err = recon
        .iter()
        .zip(&refined.w_hat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if station_err > 1e-7 {
        return Err(OracleError::DegenerateSupport(format!(
            "stationarity violated by {station_err:.3e}"
        )));
    }
    let margin_gap = (0..n)
        .filter(|i| !refined.support.contains(i))
        .map(|i| margins[i])
        .fold(f64::INFINITY, f64::min);
    Ok(SvmSolution {
        w_hat: refined.w_hat,
        support_set: refined.support,
        dual_coeffs: dual,
        margin_gap,
    })
}

/// Cholesky-free SPD solve via the symmetric eigendecomposition; fine at
/// desk scale.
fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, OracleError> {
    let eig = numerics::sym_eigen(a)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let coords = eig.vectors.transpose_matvec(b);
    let scaled: Vec<f64> = coords
        .iter()
        .zip(&eig.values)
        .map(|(c, &l)| if l > 1e-12 * top.max(1.0) { c / l } else { 0.0 })
        .collect();
    Ok(eig.vectors.matvec(&scaled))
}

/// Fallback separability probe for non-overparametrized inputs: short dual
/// ascent with divergence detection.
fn separable_by_dual_probe(x: &Matrix) -> bool {
    let n = x.rows();
    let gram = x.matmul(&x.transpose());
    let lmax = match numerics::sym_eigen(&gram) {
        Ok(e) => e.values[0].max(1e-300),
        Err(_) => return false,
    };
    let step = 1.0 / lmax;
    let mut alpha = vec![0.0; n];
    for _ in 0..50_000 {
        let w = x.transpose_matvec(&alpha);
        let margins = x.matvec(&w);
        for i in 0..n {
            alpha[i] = (alpha[i] + step * (1.0 - margins[i])).max(0.0);
        }
    }
    let w = x.transpose_matvec(&alpha);
    x.matvec(&w).iter().all(|&m| m > 0.5)
}

/// Checks Assumptions 1 (linear separability, via the interpolating
/// construction w = X†1) and 2 (support vectors span the data).
pub fn check_assumptions(prob: &ClassificationProblem) -> Result<AssumptionReport, OracleError> {
    let x = prob.x();
    let separable = varlinear::separable_by_interpolation(x).map_err(OracleError::Model)?
        || separable_by_dual_probe(x);
    if !separable {
        return Ok(AssumptionReport {
            separable: false,
            support_spans_data: false,
        });
    }
    let svm = match hard_margin_svm(x) {
        Ok(s) => s,
        Err(OracleError::NotSeparable) => {
            return Ok(AssumptionReport {
                separable: false,
                support_spans_data: false,
            })
        }
        Err(e) => return Err(e),
    };
    let rows: Vec<Vec<f64>> = svm.support_set.iter().map(|&i| x.row(i).to_vec()).collect();
    let xs = Matrix::from_rows(&rows)?;
    let support_rank = numerics::rank(&xs, DEFAULT_RANK_TOL)?;
    let data_rank = numerics::rank(x, DEFAULT_RANK_TOL)?;
    Ok(AssumptionReport {
        separable: true,
        support_spans_data: support_rank == data_rank,
    })
}

/// The W2-closest member of the classification feasible set
/// { P_range μ = ŵ, Var[f(x_n)] = 0 }: μ* = ŵ + P_null μ₀, S* = P_null S₀.
pub fn classification_feasible_minimizer(
    prob: &ClassificationProblem,
    prior: &Gaussian,
) -> Result<Gaussian, OracleError> {
    let report = check_assumptions(prob)?;
    if !report.separable || !report.support_spans_data {
        return Err(OracleError::AssumptionViolated {
            separable: report.separable,
            support_spans_data: report.support_spans_data,
        });
    }
    let svm = hard_margin_svm(prob.x())?;
    let (_, null) = numerics::row_space_bases(prob.x(), DEFAULT_RANK_TOL)?;
    let null_proj = numerics::projector(&null);
    let mu: Vec<f64> = svm
        .w_hat
        .iter()
        .zip(null_proj.matvec(prior.mean()))
        .map(|(a, b)| a + b)
        .collect();
    let factor = null_proj.matmul(prior.factor());
    Ok(Gaussian::new(mu, factor)?)
}

/// Solves η exp(−x_nᵀ w̃) = α_n over the support by least squares restricted
/// to span(X_Sᵀ): X_S w̃ = log(η / α).
pub fn w_tilde(x: &Matrix, svm: &SvmSolution, eta: f64) -> Result<WtildeSolution, OracleError> {
    let rows: Vec<Vec<f64>> = svm.support_set.iter().map(|&i| x.row(i).to_vec()).collect();
    let xs = Matrix::from_rows(&rows)?;
    let mut rhs = Vec::with_capacity(svm.support_set.len());
    for &i in &svm.support_set {
        let a = svm.dual_coeffs[i];
        if a <= 0.0 {
            return Err(OracleError::NonPositiveDual(a));
        }
        rhs.push((eta / a).ln());
    }
    let w = numerics::pseudo_inverse_apply(&xs, &rhs, DEFAULT_RANK_TOL)?;
    let fit = xs.matvec(&w);
    let residual = fit
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > 1e-6 {
        return Err(OracleError::InconsistentSystem { residual });
    }
    Ok(WtildeSolution { w_tilde: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::w2_squared;
    use crate::numerics::row_space_bases;
    use crate::rng;
    use crate::varlinear::expected_regression_loss;
    use crate::VariationalParams;

    fn random_regression(seed: u64, n: usize, p: usize) -> RegressionProblem {
        let x = Matrix::new(
            n,
            p,
            rng::standard_normal(&mut rng::stream(seed, &[80]), n * p),
        )
        .unwrap();
        let y = rng::standard_normal(&mut rng::stream(seed, &[81]), n);
        RegressionProblem::with_unit_variance(x, y).unwrap()
    }

    fn random_prior(seed: u64, p: usize, r: usize) -> Gaussian {
        Gaussian::new(
            rng::standard_normal(&mut rng::stream(seed, &[82]), p),
            Matrix::new(
                p,
                r,
                rng::standard_normal(&mut rng::stream(seed, &[83]), p * r),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn regression_oracle_axis_aligned_case() {
        // X = [[1,0,0]], y = [2], μ₀ = 0, S₀ = I → μ* = (2,0,0), Σ* = diag(0,1,1).
        let prob = RegressionProblem::with_unit_variance(
            Matrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap(),
            vec![2.0],
        )
        .unwrap();
        let prior = Gaussian::isotropic(vec![0.0; 3], 1.0);
        let oracle = regression_implicit_bias_solution(&prob, &prior).unwrap();
        assert!((oracle.mean()[0] - 2.0).abs() < 1e-12);
        assert!(oracle.mean()[1].abs() < 1e-12 && oracle.mean()[2].abs() < 1e-12);
        let sigma = oracle.covariance();
        assert!(sigma[(0, 0)].abs() < 1e-12);
        assert!((sigma[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((sigma[(2, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_oracle_keeps_interpolating_prior_mean() {
        let prob0 = random_regression(300, 2, 6);
        let prior = random_prior(301, 6, 6);
        // Rebuild targets so the prior mean interpolates.
        let y = prob0.x().matvec(prior.mean());
        let prob = RegressionProblem::with_unit_variance(prob0.x().clone(), y).unwrap();
        let oracle = regression_implicit_bias_solution(&prob, &prior).unwrap();
        for (a, b) in oracle.mean().iter().zip(prior.mean()) {
            assert!((a - b).abs() < 1e-9, "mean changed: {a} vs {b}");
        }
    }

    #[test]
    fn regression_oracle_is_feasible_and_w2_minimal() {
        let prob = random_regression(310, 3, 9);
        let prior = random_prior(311, 9, 9);
        let oracle = regression_implicit_bias_solution(&prob, &prior).unwrap();

        // Feasibility: zero expected loss (relative to the data scale).
        let theta = VariationalParams::from_gaussian(&oracle);
        let loss = expected_regression_loss(&prob, &theta).unwrap();
        assert!(loss < 1e-16 * prob.y().iter().map(|v| v * v).sum::<f64>().max(1.0));

        // Randomized optimality certificate over the affine feasible set:
        // μ = X†y + V_null a, S = V_null B.
        let oracle_w2 = w2_squared(&oracle, &prior).unwrap();
        let (_, null) = row_space_bases(prob.x(), DEFAULT_RANK_TOL).unwrap();
        let pinv_y = numerics::pseudo_inverse_apply(prob.x(), prob.y(), DEFAULT_RANK_TOL).unwrap();
        let k = null.dim();
        let mut stream = rng::stream(312, &[84]);
        for _ in 0..10_000 {
            let a = rng::standard_normal(&mut stream, k);
            let b = Matrix::new(k, 9, rng::standard_normal(&mut stream, k * 9)).unwrap();
            let mu: Vec<f64> = null
                .basis()
                .matvec(&a)
                .iter()
                .zip(&pinv_y)
                .map(|(x, y)| x + y)
                .collect();
            let factor = null.basis().matmul(&b);
            let candidate = Gaussian::new(mu, factor).unwrap();
            let w2 = w2_squared(&candidate, &prior).unwrap();
            assert!(
                w2 >= oracle_w2 - 1e-9,
                "candidate beat the oracle: {w2} < {oracle_w2}"
            );
        }
    }

    #[test]
    fn regression_oracle_rejects_rank_deficient_data() {
        let x = Matrix::new(2, 4, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let prob = RegressionProblem::with_unit_variance(x, vec![1.0, 2.0]).unwrap();
        let prior = Gaussian::isotropic(vec![0.0; 4], 1.0);
        assert!(matches!(
            regression_implicit_bias_solution(&prob, &prior),
            Err(OracleError::RankDeficient { .. })
        ));
    }

    #[test]
    fn ensemble_limit_special_cases() {
        let prob = random_regression(320, 2, 5);
        // w₀ = 0 → X†y.
        let limit = ensemble_member_limit(&prob, &[0.0; 5]).unwrap();
        let pinv_y = numerics::pseudo_inverse_apply(prob.x(), prob.y(), DEFAULT_RANK_TOL).unwrap();
        for (a, b) in limit.iter().zip(&pinv_y) {
            assert!((a - b).abs() < 1e-12);
        }

        // w₀ in null(X), y = 0 → w₀ unchanged.
        let prob0 =
            RegressionProblem::with_unit_variance(prob.x().clone(), vec![0.0, 0.0]).unwrap();
        let (_, null) = row_space_bases(prob.x(), DEFAULT_RANK_TOL).unwrap();
        let w0 = null.project(&rng::standard_normal(&mut rng::stream(321, &[85]), 5));
        let limit = ensemble_member_limit(&prob0, &w0).unwrap();
        for (a, b) in limit.iter().zip(&w0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ensemble_limit_matches_direct_training() {
        let prob = random_regression(330, 3, 7);
        let w0 = rng::standard_normal(&mut rng::stream(331, &[86]), 7);
        let expected = ensemble_member_limit(&prob, &w0).unwrap();
        // Plain GD on ½‖y − Xw‖².
        let gram = prob.x().transpose_matmul(prob.x());
        let lmax = numerics::sym_eigen(&gram).unwrap().values[0];
        let eta = 0.5 / lmax;
        let mut w = w0;
        for _ in 0..100_000 {
            let mut residual = prob.x().matvec(&w);
            for (r, t) in residual.iter_mut().zip(prob.y()) {
                *r -= t;
            }
            let grad = prob.x().transpose_matvec(&residual);
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= eta * g;
            }
        }
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn ensemble_limit_deviation_lies_in_null_space() {
        let prob = random_regression(340, 3, 8);
        let w0 = rng::standard_normal(&mut rng::stream(341, &[87]), 8);
        let limit = ensemble_member_limit(&prob, &w0).unwrap();
        let pinv_y = numerics::pseudo_inverse_apply(prob.x(), prob.y(), DEFAULT_RANK_TOL).unwrap();
        let dev: Vec<f64> = limit.iter().zip(&pinv_y).map(|(a, b)| a - b).collect();
        let fit = prob.x().matvec(&dev);
        assert!(fit.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn svm_single_point() {
        // One point x = 2 in 1-D → ŵ = 0.5, support {0}.
        let x = Matrix::new(1, 1, vec![2.0]).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        assert!((svm.w_hat[0] - 0.5).abs() < 1e-9);
        assert_eq!(svm.support_set, vec![0]);
        assert!(svm.margin_gap.is_infinite());
    }

    #[test]
    fn svm_two_orthonormal_points() {
        let x = Matrix::identity(2);
        let svm = hard_margin_svm(&x).unwrap();
        assert!((svm.w_hat[0] - 1.0).abs() < 1e-9);
        assert!((svm.w_hat[1] - 1.0).abs() < 1e-9);
        assert_eq!(svm.support_set, vec![0, 1]);
        let norm_sq: f64 = svm.w_hat.iter().map(|v| v * v).sum();
        assert!((norm_sq - 2.0).abs() < 1e-9);
    }

    #[test]
    fn svm_rejects_non_separable_data() {
        let x = Matrix::new(2, 1, vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            hard_margin_svm(&x),
            Err(OracleError::NotSeparable)
        ));
    }

    #[test]
    fn svm_kkt_conditions_hold_on_random_instances() {
        for seed in 0..10u64 {
            let x = Matrix::new(
                4,
                6,
                rng::standard_normal(&mut rng::stream(seed + 350, &[88]), 24),
            )
            .unwrap();
            let svm = hard_margin_svm(&x).unwrap();
            let margins = x.matvec(&svm.w_hat);
            // Primal feasibility and complementary slackness.
            for (i, &m) in margins.iter().enumerate() {
                assert!(m >= 1.0 - 1e-8, "margin {m} at {i}");
                assert!(svm.dual_coeffs[i] * (m - 1.0) < 1e-6);
            }
            for &i in &svm.support_set {
                assert!((margins[i] - 1.0).abs() < 1e-6);
                assert!(svm.dual_coeffs[i] > 0.0);
            }
            // Stationarity.
            let recon = x.transpose_matvec(&svm.dual_coeffs);
            for (a, b) in recon.iter().zip(&svm.w_hat) {
                assert!((a - b).abs() < 1e-7);
            }
            if svm.support_set.len() < 4 {
                assert!(svm.margin_gap > 1.0);
            }
        }
    }

    #[test]
    fn svm_objective_matches_long_projected_gradient_oracle() {
        // Oracle: plain projected gradient on the dual run for 10⁶
        // iterations, no support identification and no KKT solve; the
        // production value instead comes from the active-set refinement.
        let x = Matrix::new(4, 6, rng::standard_normal(&mut rng::stream(360, &[89]), 24)).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        let objective: f64 = svm.w_hat.iter().map(|v| v * v).sum();

        let gram = x.matmul(&x.transpose());
        let lmax = numerics::sym_eigen(&gram).unwrap().values[0];
        let step = 1.0 / lmax;
        let mut alpha = vec![0.0; 4];
        for _ in 0..1_000_000usize {
            let w = x.transpose_matvec(&alpha);
            let margins = x.matvec(&w);
            for i in 0..4 {
                alpha[i] = (alpha[i] + step * (1.0 - margins[i])).max(0.0);
            }
        }
        let w = x.transpose_matvec(&alpha);
        assert!(x.matvec(&w).iter().all(|&m| m > 1.0 - 1e-7));
        let oracle_obj: f64 = w.iter().map(|v| v * v).sum();
        assert!(
            (objective - oracle_obj).abs() < 1e-6,
            "{objective} vs oracle {oracle_obj}"
        );
    }

    #[test]
    fn assumptions_orthonormal_rows() {
        let prob = ClassificationProblem::new_certified(Matrix::identity(3));
        let report = check_assumptions(&prob).unwrap();
        assert!(report.separable);
        assert!(report.support_spans_data);
    }

    #[test]
    fn assumptions_non_separable_pair() {
        let prob =
            ClassificationProblem::new_certified(Matrix::new(2, 1, vec![1.0, -1.0]).unwrap());
        let report = check_assumptions(&prob).unwrap();
        assert!(!report.separable);
        assert!(!report.support_spans_data);
    }

    #[test]
    fn assumptions_detect_support_not_spanning() {
        // Three points in R²: two tight margin points and one interior point
        // carrying the only mass in the second coordinate.
        let x = Matrix::new(3, 2, vec![1.0, 0.0, 1.0, 0.0, 3.0, 1.0]).unwrap();
        let prob = ClassificationProblem::new_certified(x.clone());
        let report = check_assumptions(&prob).unwrap();
        assert!(report.separable);
        let svm = hard_margin_svm(&x).unwrap();
        // Point 2 has margin 3 > 1: not a support vector, yet it alone spans e₂.
        assert!(!svm.support_set.contains(&2));
        assert!(!report.support_spans_data);
    }

    #[test]
    fn feasible_minimizer_zero_prior_mean_gives_w_hat() {
        let x = Matrix::new(2, 5, rng::standard_normal(&mut rng::stream(370, &[90]), 10)).unwrap();
        let prob = ClassificationProblem::new(x.clone()).unwrap();
        let prior = Gaussian::isotropic(vec![0.0; 5], 1.0);
        let star = classification_feasible_minimizer(&prob, &prior).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        for (a, b) in star.mean().iter().zip(&svm.w_hat) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn feasible_minimizer_keeps_null_space_prior_factor() {
        let x = Matrix::new(2, 6, rng::standard_normal(&mut rng::stream(380, &[91]), 12)).unwrap();
        let prob = ClassificationProblem::new(x.clone()).unwrap();
        let (_, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
        // Prior factor already in null(X): the minimizer keeps it exactly.
        let raw =
            Matrix::new(6, 3, rng::standard_normal(&mut rng::stream(381, &[92]), 18)).unwrap();
        let factor = numerics::projector(&null).matmul(&raw);
        let prior = Gaussian::new(vec![0.0; 6], factor.clone()).unwrap();
        let star = classification_feasible_minimizer(&prob, &prior).unwrap();
        assert!(star.factor().sub(&factor).max_abs() < 1e-10);
    }

    #[test]
    fn feasible_minimizer_beats_random_feasible_candidates() {
        // Assumption 2 can fail for arbitrary draws; scan seeds for an
        // instance where both assumptions hold, as the dataset generator
        // does.
        let x = (0..50u64)
            .map(|s| {
                Matrix::new(
                    3,
                    7,
                    rng::standard_normal(&mut rng::stream(390 + s, &[93]), 21),
                )
                .unwrap()
            })
            .find(|x| {
                let prob = ClassificationProblem::new_certified(x.clone());
                check_assumptions(&prob)
                    .map(|r| r.separable && r.support_spans_data)
                    .unwrap_or(false)
            })
            .expect("some seed satisfies both assumptions");
        let prob = ClassificationProblem::new(x.clone()).unwrap();
        let prior = random_prior(391, 7, 7);
        let star = classification_feasible_minimizer(&prob, &prior).unwrap();
        let star_w2 = w2_squared(&star, &prior).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        let (_, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
        let k = null.dim();
        let mut stream = rng::stream(392, &[94]);
        for _ in 0..10_000 {
            let a = rng::standard_normal(&mut stream, k);
            let b = Matrix::new(k, 7, rng::standard_normal(&mut stream, k * 7)).unwrap();
            let mu: Vec<f64> = null
                .basis()
                .matvec(&a)
                .iter()
                .zip(&svm.w_hat)
                .map(|(x, y)| x + y)
                .collect();
            let candidate = Gaussian::new(mu, null.basis().matmul(&b)).unwrap();
            let w2 = w2_squared(&candidate, &prior).unwrap();
            assert!(
                w2 >= star_w2 - 1e-9,
                "candidate beat oracle: {w2} < {star_w2}"
            );
        }
    }

    #[test]
    fn w_tilde_single_support_cases() {
        // x = 1, α = η → w̃ = 0.
        let x = Matrix::new(1, 1, vec![1.0]).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        let eta = svm.dual_coeffs[0];
        let sol = w_tilde(&x, &svm, eta).unwrap();
        assert!(sol.w_tilde[0].abs() < 1e-9);

        // x = 2, α = η e⁻² → w̃ = 1. Construct the dual data directly.
        let x = Matrix::new(1, 1, vec![2.0]).unwrap();
        let svm = SvmSolution {
            w_hat: vec![0.5],
            support_set: vec![0],
            dual_coeffs: vec![(-2.0f64).exp()],
            margin_gap: f64::INFINITY,
        };
        let sol = w_tilde(&x, &svm, 1.0).unwrap();
        assert!((sol.w_tilde[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn w_tilde_reproduces_duals_on_random_instances() {
        let x = Matrix::new(4, 6, rng::standard_normal(&mut rng::stream(400, &[95]), 24)).unwrap();
        let svm = hard_margin_svm(&x).unwrap();
        let eta = 0.37;
        let sol = w_tilde(&x, &svm, eta).unwrap();
        for &i in &svm.support_set {
            let margin: f64 = x.row(i).iter().zip(&sol.w_tilde).map(|(a, b)| a * b).sum();
            let reproduced = eta * (-margin).exp();
            assert!(
                (reproduced - svm.dual_coeffs[i]).abs() < 1e-6,
                "{reproduced} vs {}",
                svm.dual_coeffs[i]
            );
        }
    }
}
