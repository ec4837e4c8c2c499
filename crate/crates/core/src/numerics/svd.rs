use super::matrix::vec_norm;
use super::{Matrix, NumericsError};

const MAX_SWEEPS: usize = 100;

/// Thin singular value decomposition A = U diag(σ) Vᵀ with σ descending.
///
/// For an m × n input, U is m × k and V is n × k with k = min(m, n); both
/// have orthonormal columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// U diag(σ) Vᵀ, for reconstruction checks.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut scaled = self.u.clone();
        for j in 0..k {
            for i in 0..scaled.rows() {
                scaled[(i, j)] *= self.singular_values[j];
            }
        }
        scaled.matmul(&self.v.transpose())
    }
}

/// One-sided Jacobi SVD.
///
/// Deterministic cyclic sweeps with a cap of 100; explicit failure on
/// non-convergence. Inputs with more columns than rows are handled by
/// decomposing the transpose.
pub fn svd(a: &Matrix) -> Result<Svd, NumericsError> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite { row: 0, col: 0 });
    }
    if a.rows() < a.cols() {
        let flipped = svd(&a.transpose())?;
        return Ok(Svd {
            u: flipped.v,
            singular_values: flipped.singular_values,
            v: flipped.u,
        });
    }

    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone(); // columns are rotated in place
    let mut v = Matrix::identity(n);

    let tol = 1e-15;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumericsError::NonConvergence { sweeps: MAX_SWEEPS });
    }

    let mut norms: Vec<f64> = (0..n).map(|j| vec_norm(&b.col_vec(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    norms = order.iter().map(|&j| norms[j]).collect();

    let sigma_max = norms.first().copied().unwrap_or(0.0);
    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut degenerate = Vec::new();
    for (new_col, &old_col) in order.iter().enumerate() {
        let sigma = norms[new_col];
        if sigma > sigma_max * 1e-300 && sigma > 0.0 {
            for i in 0..m {
                u[(i, new_col)] = b[(i, old_col)] / sigma;
            }
        } else {
            degenerate.push(new_col);
        }
        for i in 0..n {
            v_sorted[(i, new_col)] = v[(i, old_col)];
        }
    }
    // Columns with vanishing singular value carry no direction information;
    // fill them with an orthonormal completion so U stays orthonormal.
    fill_orthonormal(&mut u, &degenerate);

    Ok(Svd {
        u,
        singular_values: norms,
        v: v_sorted,
    })
}

/// Replaces the listed columns of `u` with vectors orthonormal to all other
/// columns, via Gram-Schmidt against the standard basis.
fn fill_orthonormal(u: &mut Matrix, empty_cols: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    let mut next_candidate = 0;
    for &col in empty_cols {
        loop {
            assert!(next_candidate < m, "ran out of basis candidates");
            let mut cand = vec![0.0; m];
            cand[next_candidate] = 1.0;
            next_candidate += 1;
            // Two Gram-Schmidt passes for numerical reliability.
            for _ in 0..2 {
                for j in 0..n {
                    if j == col {
                        continue;
                    }
                    let dot: f64 = (0..m).map(|i| cand[i] * u[(i, j)]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= dot * u[(i, j)];
                    }
                }
            }
            let norm = vec_norm(&cand);
            if norm > 1e-6 {
                for (i, c) in cand.iter().enumerate() {
                    u[(i, col)] = c / norm;
                }
                break;
            }
        }
    }
}
