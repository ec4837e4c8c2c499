use super::{Matrix, NumericsError};

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-8;

/// Eigendecomposition A = Q diag(λ) Qᵀ of a symmetric matrix, eigenvalues in
/// descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered to match `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition for symmetric matrices.
///
/// Rejects inputs whose asymmetry exceeds 1e-8 relative to the largest entry
/// and fails explicitly after 100 sweeps instead of returning a partial
/// result.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::ShapeMismatch {
            expected: "square matrix".to_string(),
            got: format!("{} x {}", a.rows(), a.cols()),
        });
    }
    if !a.is_finite() {
        return Err(NumericsError::NonFinite { row: 0, col: 0 });
    }
    let scale = a.max_abs().max(1.0);
    let asym = if n > 0 { a.asymmetry() } else { 0.0 };
    if asym > SYMMETRY_TOL * scale {
        return Err(NumericsError::NotSymmetric {
            asymmetry: asym,
            tol: SYMMETRY_TOL * scale,
        });
    }

    // Work on the symmetrized copy so tiny asymmetries cannot bias rotations.
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut q = Matrix::identity(n);

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let tol = 1e-15 * m.max_abs().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&m) <= tol * (n as f64) {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = m[(p, r)];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(r, r)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and r of M.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, r)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, r)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(r, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(r, k)] = s * mpk + c * mqk;
                }
                // Accumulate rotation into Q.
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkq = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkq;
                    q[(k, r)] = s * qkp + c * qkq;
                }
            }
        }
    }
    if !converged && off_norm(&m) > tol * (n as f64) {
        return Err(NumericsError::NonConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new_col)] = q[(i, old_col)];
        }
    }
    Ok(SymEigen { values, vectors })
}
