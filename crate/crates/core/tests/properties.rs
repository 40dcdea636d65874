use kcheck::basis::{
    eval_bspline_basis, null_space_dim, place_knots, spline_penalty, tensor_basis, DesignBlock,
};
use kcheck::diagnostics::{knn_indices, phi_delta_univariate};
use kcheck::BasisSpec;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bspline_rows_sum_to_one(
        raw in prop::collection::vec(0.0f64..1.0, 40..120),
        k in 5usize..20,
        probe in prop::collection::vec(0.0f64..=1.0, 1..30),
    ) {
        let x = sorted_unique(raw);
        prop_assume!(x.len() >= k);
        let knots = place_knots(&x, k, 3).unwrap();
        let (lo, hi) = knots.domain();
        let pts: Vec<f64> = probe.iter().map(|u| lo + u * (hi - lo)).collect();
        let b = eval_bspline_basis(&pts, &knots).unwrap();
        prop_assert_eq!(b.ncols(), k);
        for row in b.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn penalty_is_symmetric_psd_with_linear_null_space(
        raw in prop::collection::vec(-5.0f64..5.0, 30..80),
        k in 5usize..16,
    ) {
        let x = sorted_unique(raw);
        prop_assume!(x.len() >= k);
        let knots = place_knots(&x, k, 3).unwrap();
        let s = spline_penalty(&knots, 2).unwrap();
        prop_assert!((&s - s.transpose()).amax() <= 1e-12 * s.amax());
        let eig = SymmetricEigen::new(s.clone());
        prop_assert!(eig.eigenvalues.min() > -1e-9 * eig.eigenvalues.max());
        prop_assert_eq!(null_space_dim(&s), 2);
        // Coefficients at the Greville abscissae reproduce a line exactly.
        let line = nalgebra::DVector::from_iterator(k, knots.greville().into_iter().map(|g| 2.0 - 0.7 * g));
        prop_assert!((&s * line).amax() < 1e-8 * s.amax().max(1.0));
    }

    #[test]
    fn tensor_rows_sum_to_one(
        x1 in prop::collection::vec(0.0f64..1.0, 30..60),
        k1 in 5usize..9,
        k2 in 5usize..9,
    ) {
        let n = x1.len();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64).collect();
        let u1 = sorted_unique(x1.clone());
        prop_assume!(u1.len() >= k1);
        let b1 = eval_bspline_basis(&x1, &place_knots(&x1, k1, 3).unwrap()).unwrap();
        let b2 = eval_bspline_basis(&x2, &place_knots(&x2, k2, 3).unwrap()).unwrap();
        let t = tensor_basis(&b1, &b2).unwrap();
        prop_assert_eq!(t.ncols(), k1 * k2);
        for row in t.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_blocks_have_zero_column_sums(
        raw in prop::collection::vec(0.0f64..1.0, 40..100),
        k in 5usize..14,
    ) {
        prop_assume!(sorted_unique(raw.clone()).len() >= k);
        let block = DesignBlock::build(&BasisSpec::univariate("x", k), &[&raw]).unwrap();
        prop_assert_eq!(block.ncols(), k - 1);
        for col in block.x.column_iter() {
            prop_assert!(col.sum().abs() < 1e-10 * raw.len() as f64);
        }
        prop_assert_eq!(block.null_dim, 1);
    }

    #[test]
    fn phi_delta_univariate_ignores_presentation_order(
        pairs in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 3..80),
        seed in any::<u64>(),
    ) {
        let (x, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let base = phi_delta_univariate(&r, &x).unwrap();
        // Deterministic shuffle of the pairs, keeping equal x values in their original relative order.
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let x2: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let r2: Vec<f64> = order.iter().map(|&i| r[i]).collect();
        prop_assert_eq!(base, phi_delta_univariate(&r2, &x2).unwrap());
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn phi_delta_scales_quadratically(
        pairs in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 3..60),
        c in 0.01f64..100.0,
    ) {
        let (x, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
        let a = phi_delta_univariate(&r, &x).unwrap();
        let b = phi_delta_univariate(&scaled, &x).unwrap();
        prop_assert!((b - c * c * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn knn_excludes_self_and_is_sorted_by_distance(
        pts in prop::collection::vec((0.0f64..10.0, 0.0f64..1.0), 5..60),
        m in 1usize..4,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        prop_assume!(a.iter().any(|v| *v != a[0]) && b.iter().any(|v| *v != b[0]));
        let nn = knn_indices(&[&a, &b], m).unwrap();
        let sd = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let (sa, sb) = (sd(&a), sd(&b));
        let dist = |i: usize, j: usize| ((a[i] - a[j]) / sa).powi(2) + ((b[i] - b[j]) / sb).powi(2);
        for (i, row) in nn.iter().enumerate() {
            prop_assert_eq!(row.len(), m);
            prop_assert!(!row.contains(&i));
            for w in row.windows(2) {
                prop_assert!(dist(i, w[0]) <= dist(i, w[1]));
            }
            let worst = dist(i, *row.last().unwrap());
            for j in (0..a.len()).filter(|j| *j != i && !row.contains(j)) {
                prop_assert!(dist(i, j) >= worst);
            }
        }
    }
}
