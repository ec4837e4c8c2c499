//! Dense linear-algebra kernels: SVD, symmetric eigendecomposition, subspace
//! bases, projectors, PSD square roots and pseudo-inverse solves.
//!
//! All decompositions use deterministic Jacobi sweeps with a hard iteration
//! cap, so results are bit-stable per platform. Target sizes are desk scale
//! (up to a few thousand entries); there is no attempt at cache blocking or
//! sparsity.

mod eigen;
mod matrix;
mod svd;

pub use eigen::{sym_eigen, SymEigen};
pub use matrix::Matrix;
pub use svd::{svd, Svd};

use thiserror::Error;

/// Default relative rank tolerance: singular values below this fraction of
/// the largest are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NonConvergence { sweeps: usize },
    #[error("matrix not symmetric: max asymmetry {asymmetry:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },
}

/// Which subspace of the row space a basis spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceKind {
    /// Span of the matrix rows, i.e. range(Xᵀ).
    RangeOfRows,
    /// Orthogonal complement, i.e. null(X).
    NullOfRows,
}

/// An orthonormal basis (P × k) of a subspace of R^P.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    basis: Matrix,
    kind: SubspaceKind,
}

impl SubspaceBasis {
    /// Wraps a matrix whose columns are expected to be orthonormal.
    /// Orthonormality is verified to 1e-10.
    pub fn new(basis: Matrix, kind: SubspaceKind) -> Result<Self, NumericsError> {
        let k = basis.cols();
        for i in 0..k {
            for j in i..k {
                let mut dot = 0.0;
                for r in 0..basis.rows() {
                    dot += basis[(r, i)] * basis[(r, j)];
                }
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-10 {
                    return Err(NumericsError::ShapeMismatch {
                        expected: "orthonormal columns".to_string(),
                        got: format!("column pair ({i}, {j}) with inner product {dot:.3e}"),
                    });
                }
            }
        }
        Ok(Self { basis, kind })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn kind(&self) -> SubspaceKind {
        self.kind
    }

    /// Ambient dimension P.
    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    /// Subspace dimension k.
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// Bᵀ v, the coordinates of `v` in this basis.
    pub fn project_coords(&self, v: &[f64]) -> Vec<f64> {
        self.basis.transpose_matvec(v)
    }

    /// B Bᵀ v, the orthogonal projection of `v` onto the subspace.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.basis.matvec(&self.project_coords(v))
    }
}

/// Orthogonal projector B Bᵀ onto the subspace spanned by `basis`.
///
/// An empty basis yields the zero matrix.
pub fn projector(basis: &SubspaceBasis) -> Matrix {
    let b = basis.basis();
    let p = b.rows();
    let mut out = Matrix::zeros(p, p);
    for c in 0..b.cols() {
        for i in 0..p {
            let bi = b[(i, c)];
            if bi == 0.0 {
                continue;
            }
            for j in 0..p {
                out[(i, j)] += bi * b[(j, c)];
            }
        }
    }
    out
}

/// Orthonormal bases of range(Xᵀ) and null(X), split by singular values of X
/// relative to `rank_tol`.
///
/// The rank comes from the SVD of X itself (squaring into the Gram matrix
/// would push `rank_tol` below the eigensolver noise floor); the symmetric
/// eigendecomposition of XᵀX then supplies a full orthonormal basis of R^P
/// whose leading vectors span the same subspace. A zero matrix gives an
/// empty range and a full-space null basis.
pub fn row_space_bases(
    x: &Matrix,
    rank_tol: f64,
) -> Result<(SubspaceBasis, SubspaceBasis), NumericsError> {
    let p = x.cols();
    let rank = rank(x, rank_tol)?;
    let gram = x.transpose_matmul(x); // XᵀX, P × P
    let eig = sym_eigen(&gram)?;

    let mut range = Matrix::zeros(p, rank);
    let mut null = Matrix::zeros(p, p - rank);
    for i in 0..p {
        for j in 0..rank {
            range[(i, j)] = eig.vectors[(i, j)];
        }
        for j in rank..p {
            null[(i, j - rank)] = eig.vectors[(i, j)];
        }
    }
    Ok((
        SubspaceBasis::new(range, SubspaceKind::RangeOfRows)?,
        SubspaceBasis::new(null, SubspaceKind::NullOfRows)?,
    ))
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues below `clamp_tol` relative to the largest (and all negative
/// eigenvalues) are treated as zero, absorbing the O(1e-14) negatives that
/// arise when the input was assembled as S Sᵀ in floating point.
pub fn psd_sqrt(a: &Matrix, clamp_tol: f64) -> Result<Matrix, NumericsError> {
    let eig = sym_eigen(a)?;
    let lambda_max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let floor = clamp_tol * lambda_max;
    let sqrt_vals: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l > floor { l.sqrt() } else { 0.0 })
        .collect();
    // Q diag(√λ) Qᵀ
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let s = sqrt_vals[k];
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let qik = eig.vectors[(i, k)] * s;
            if qik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += qik * eig.vectors[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Minimum-norm least-squares solution X†y.
///
/// The result lies in range(Xᵀ); singular values below `rank_tol` relative to
/// the largest are dropped.
pub fn pseudo_inverse_apply(
    x: &Matrix,
    y: &[f64],
    rank_tol: f64,
) -> Result<Vec<f64>, NumericsError> {
    if y.len() != x.rows() {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("vector of length {}", x.rows()),
            got: format!("length {}", y.len()),
        });
    }
    let decomp = svd(x)?;
    let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
    let thresh = rank_tol * sigma_max;
    // V Σ† Uᵀ y
    let uty = decomp.u.transpose_matvec(y);
    let mut scaled = vec![0.0; decomp.singular_values.len()];
    for (i, &s) in decomp.singular_values.iter().enumerate() {
        if s > thresh && s > 0.0 {
            scaled[i] = uty[i] / s;
        }
    }
    Ok(decomp.v.matvec(&scaled))
}

/// Rank of `x` at relative tolerance `rank_tol`.
pub fn rank(x: &Matrix, rank_tol: f64) -> Result<usize, NumericsError> {
    let decomp = svd(x)?;
    let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
    Ok(decomp
        .singular_values
        .iter()
        .take_while(|&&s| s > rank_tol * sigma_max && s > 0.0)
        .count())
}

#[cfg(test)]
mod tests;
