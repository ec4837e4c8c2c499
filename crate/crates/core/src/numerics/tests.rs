use super::*;
use crate::rng;

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let data = rng::standard_normal(
        &mut rng::stream(seed, &[99, rows as u64, cols as u64]),
        rows * cols,
    );
    Matrix::new(rows, cols, data).unwrap()
}

#[test]
fn svd_identity_has_unit_singular_values() {
    let s = svd(&Matrix::identity(3)).unwrap();
    for &sigma in &s.singular_values {
        assert!((sigma - 1.0).abs() < 1e-12);
    }
}

#[test]
fn svd_of_diagonal_sorts_descending() {
    let a = Matrix::new(3, 2, vec![2.0, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
    let s = svd(&a).unwrap();
    assert!((s.singular_values[0] - 2.0).abs() < 1e-12);
    assert!((s.singular_values[1] - 0.5).abs() < 1e-12);
}

#[test]
fn svd_reconstructs_random_rectangular() {
    let a = random_matrix(1, 4, 7);
    let s = svd(&a).unwrap();
    let err = s.reconstruct().sub(&a).max_abs();
    assert!(err < 1e-8 * a.max_abs(), "reconstruction error {err}");
}

#[test]
fn svd_handles_rank_deficient_input() {
    // Rank-1: outer product.
    let u = [1.0, -2.0, 0.5];
    let v = [3.0, 1.0];
    let mut a = Matrix::zeros(3, 2);
    for i in 0..3 {
        for j in 0..2 {
            a[(i, j)] = u[i] * v[j];
        }
    }
    let s = svd(&a).unwrap();
    assert!(s.singular_values[1].abs() < 1e-10);
    let err = s.reconstruct().sub(&a).max_abs();
    assert!(err < 1e-10);
    // U stays orthonormal even for the null column.
    let gram = s.u.transpose_matmul(&s.u);
    assert!(gram.sub(&Matrix::identity(2)).max_abs() < 1e-10);
}

#[test]
fn row_space_bases_single_axis_row() {
    let x = Matrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
    let (range, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(range.dim(), 1);
    assert_eq!(null.dim(), 2);
    assert!((range.basis()[(0, 0)].abs() - 1.0).abs() < 1e-12);
    assert!(range.basis()[(1, 0)].abs() < 1e-12);
}

#[test]
fn row_space_bases_zero_matrix() {
    let x = Matrix::zeros(2, 3);
    let (range, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(range.dim(), 0);
    assert_eq!(null.dim(), 3);
}

#[test]
fn projectors_are_complementary() {
    let x = random_matrix(2, 3, 8);
    let (range, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(range.dim(), 3, "random 3x8 has full row rank");
    assert_eq!(null.dim(), 5);
    let sum = projector(&range).add(&projector(&null));
    assert!(sum.sub(&Matrix::identity(8)).max_abs() < 1e-9);
    // The range basis really spans the rows.
    let p_range = projector(&range);
    for i in 0..3 {
        let row = x.row(i).to_vec();
        let back = p_range.matvec(&row);
        for (a, b) in back.iter().zip(&row) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn projector_of_axis_vector() {
    let b = SubspaceBasis::new(
        Matrix::new(2, 1, vec![1.0, 0.0]).unwrap(),
        SubspaceKind::RangeOfRows,
    )
    .unwrap();
    let p = projector(&b);
    assert_eq!(p.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn projector_of_empty_basis_is_zero() {
    let b = SubspaceBasis::new(Matrix::zeros(3, 0), SubspaceKind::NullOfRows).unwrap();
    assert_eq!(projector(&b).max_abs(), 0.0);
}

#[test]
fn projector_is_idempotent() {
    let x = random_matrix(3, 4, 6);
    let (range, _) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
    let p = projector(&range);
    let err = p.matmul(&p).sub(&p).max_abs();
    assert!(err < 1e-10, "idempotency error {err}");
    assert!(p.asymmetry() < 1e-10);
}

#[test]
fn psd_sqrt_identity_and_diagonal() {
    let s = psd_sqrt(&Matrix::identity(3), 1e-12).unwrap();
    assert!(s.sub(&Matrix::identity(3)).max_abs() < 1e-12);
    let s = psd_sqrt(&Matrix::from_diag(&[4.0, 9.0]), 1e-12).unwrap();
    assert!(s.sub(&Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-12);
}

#[test]
fn psd_sqrt_squares_back_to_gram() {
    let s_factor = random_matrix(4, 5, 2);
    let a = s_factor.matmul(&s_factor.transpose());
    let root = psd_sqrt(&a, 1e-12).unwrap();
    let err = root.matmul(&root).sub(&a).max_abs();
    assert!(err < 1e-8 * a.max_abs().max(1.0), "squaring error {err}");
}

#[test]
fn psd_sqrt_rejects_asymmetric_input() {
    let a = Matrix::new(2, 2, vec![1.0, 0.5, -0.5, 1.0]).unwrap();
    assert!(matches!(
        psd_sqrt(&a, 1e-12),
        Err(NumericsError::NotSymmetric { .. })
    ));
}

#[test]
fn pseudo_inverse_simple_cases() {
    let x = Matrix::new(1, 2, vec![2.0, 0.0]).unwrap();
    let sol = pseudo_inverse_apply(&x, &[4.0], DEFAULT_RANK_TOL).unwrap();
    assert!((sol[0] - 2.0).abs() < 1e-12 && sol[1].abs() < 1e-12);

    let x = Matrix::identity(2);
    let sol = pseudo_inverse_apply(&x, &[3.0, -1.5], DEFAULT_RANK_TOL).unwrap();
    assert!((sol[0] - 3.0).abs() < 1e-12 && (sol[1] + 1.5).abs() < 1e-12);
}

#[test]
fn pseudo_inverse_interpolates_full_row_rank() {
    let x = random_matrix(5, 2, 5);
    let y = [1.0, -2.0];
    let sol = pseudo_inverse_apply(&x, &y, DEFAULT_RANK_TOL).unwrap();
    let fit = x.matvec(&sol);
    for (f, t) in fit.iter().zip(&y) {
        assert!((f - t).abs() < 1e-9);
    }
}

#[test]
fn pseudo_inverse_solution_orthogonal_to_null_space() {
    let x = random_matrix(6, 3, 9);
    let y = [0.3, 1.1, -0.7];
    let sol = pseudo_inverse_apply(&x, &y, DEFAULT_RANK_TOL).unwrap();
    let (_, null) = row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
    let coords = null.project_coords(&sol);
    assert!(coords.iter().all(|c| c.abs() < 1e-9));
}

#[test]
fn sym_eigen_recovers_known_spectrum() {
    // Q diag(5, 2, -1) Qᵀ for a handmade rotation Q.
    let q_src = random_matrix(7, 3, 3);
    let q = svd(&q_src).unwrap().u;
    let lambda = Matrix::from_diag(&[5.0, 2.0, -1.0]);
    let a = q.matmul(&lambda).matmul(&q.transpose());
    let eig = sym_eigen(&a).unwrap();
    assert!((eig.values[0] - 5.0).abs() < 1e-10);
    assert!((eig.values[1] - 2.0).abs() < 1e-10);
    assert!((eig.values[2] + 1.0).abs() < 1e-10);
    // Reconstruction.
    let recon = eig
        .vectors
        .matmul(&Matrix::from_diag(&eig.values))
        .matmul(&eig.vectors.transpose());
    assert!(recon.sub(&a).max_abs() < 1e-10);
}

#[test]
fn svd_properties_hold_at_largest_supported_size() {
    let a = random_matrix(11, 64, 64);
    let s = svd(&a).unwrap();
    let err = s.reconstruct().sub(&a).max_abs();
    assert!(err < 1e-8 * a.max_abs());
    let gram_u = s.u.transpose_matmul(&s.u);
    let gram_v = s.v.transpose_matmul(&s.v);
    assert!(gram_u.sub(&Matrix::identity(64)).max_abs() < 1e-9);
    assert!(gram_v.sub(&Matrix::identity(64)).max_abs() < 1e-9);
}

#[test]
fn matrix_rejects_non_finite_entries() {
    assert!(matches!(
        Matrix::new(1, 2, vec![1.0, f64::NAN]),
        Err(NumericsError::NonFinite { .. })
    ));
    assert!(matches!(
        Matrix::new(1, 2, vec![f64::INFINITY, 0.0]),
        Err(NumericsError::NonFinite { .. })
    ));
}
