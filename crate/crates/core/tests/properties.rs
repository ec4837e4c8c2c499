//! Property tests for the structural invariants the rest of the crate leans
//! on: decomposition identities on randomized matrices and metric ranges.

use proptest::prelude::*;

use ibvi_core::gaussian::{self, Gaussian};
use ibvi_core::metrics;
use ibvi_core::numerics::{self, Matrix, DEFAULT_RANK_TOL};

fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-3.0f64..3.0, r * c)
            .prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(a in matrix_strategy(12)) {
        let svd = numerics::svd(&a).unwrap();
        let err = svd.reconstruct().sub(&a).max_abs();
        prop_assert!(err < 1e-8 * a.max_abs().max(1.0));
        let k = svd.singular_values.len();
        prop_assert!(svd.u.transpose_matmul(&svd.u).sub(&Matrix::identity(k)).max_abs() < 1e-9);
        prop_assert!(svd.v.transpose_matmul(&svd.v).sub(&Matrix::identity(k)).max_abs() < 1e-9);
        for pair in svd.singular_values.windows(2) {
            prop_assert!(pair[0] >= pair[1]);
        }
        prop_assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn range_and_null_projectors_are_complementary(x in matrix_strategy(10)) {
        let (range, null) = numerics::row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
        prop_assert_eq!(range.dim() + null.dim(), x.cols());
        let sum = numerics::projector(&range).add(&numerics::projector(&null));
        prop_assert!(sum.sub(&Matrix::identity(x.cols())).max_abs() < 1e-9);
    }

    #[test]
    fn pseudo_inverse_is_minimum_norm(x in matrix_strategy(8), scale in -2.0f64..2.0) {
        let y: Vec<f64> = (0..x.rows()).map(|i| scale * (i as f64 + 1.0)).collect();
        let sol = numerics::pseudo_inverse_apply(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let (_, null) = numerics::row_space_bases(&x, DEFAULT_RANK_TOL).unwrap();
        // The solution carries no null-space component.
        for c in null.project_coords(&sol) {
            prop_assert!(c.abs() < 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_squares_back(s in matrix_strategy(6)) {
        let a = s.matmul(&s.transpose());
        let root = numerics::psd_sqrt(&a, 1e-12).unwrap();
        let err = root.matmul(&root).sub(&a).max_abs();
        prop_assert!(err < 1e-7 * a.max_abs().max(1.0));
    }

    #[test]
    fn w2_is_symmetric_and_nonnegative(
        mu_q in proptest::collection::vec(-2.0f64..2.0, 3),
        mu_p in proptest::collection::vec(-2.0f64..2.0, 3),
        fq in proptest::collection::vec(-1.5f64..1.5, 9),
        fp in proptest::collection::vec(-1.5f64..1.5, 9),
    ) {
        let q = Gaussian::new(mu_q, Matrix::new(3, 3, fq).unwrap()).unwrap();
        let p = Gaussian::new(mu_p, Matrix::new(3, 3, fp).unwrap()).unwrap();
        let qp = gaussian::w2_squared(&q, &p).unwrap();
        let pq = gaussian::w2_squared(&p, &q).unwrap();
        prop_assert!(qp >= 0.0);
        prop_assert!((qp - pq).abs() < 1e-9 * (1.0 + qp.abs()));
        // Self distance vanishes up to eigensolver noise, which scales with
        // the covariance magnitude for ill-conditioned factors.
        let scale = 1.0 + q.covariance().trace();
        prop_assert!(gaussian::w2_squared(&q, &q).unwrap() < 1e-8 * scale);
    }

    #[test]
    fn ece_stays_in_unit_interval(
        raw in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..32),
        n_bins in 1usize..16,
    ) {
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|(a, b)| {
                let total = a + b;
                vec![a / total, b / total]
            })
            .collect();
        let labels: Vec<usize> = raw.iter().enumerate().map(|(i, _)| i % 2).collect();
        let batch = metrics::PredictionBatch::new(
            Matrix::from_rows(&rows).unwrap(),
            labels,
        ).unwrap();
        let e = metrics::ece(&batch, n_bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let acc = metrics::accuracy(&batch);
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!(metrics::nll(&batch) >= 0.0);
    }

    #[test]
    fn temperature_preserves_argmax(
        raw in proptest::collection::vec(-4.0f64..4.0, 12),
        t in 0.05f64..20.0,
    ) {
        let logits = Matrix::new(4, 3, raw).unwrap();
        let base = metrics::softmax_with_temperature(&logits, 1.0);
        let scaled = metrics::softmax_with_temperature(&logits, t);
        for i in 0..4 {
            let argmax = |m: &Matrix| {
                (0..3).max_by(|&a, &b| m[(i, a)].partial_cmp(&m[(i, b)]).unwrap()).unwrap()
            };
            prop_assert_eq!(argmax(&base), argmax(&scaled));
        }
    }
}
