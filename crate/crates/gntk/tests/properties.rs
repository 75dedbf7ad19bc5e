//! Property tests for the structural invariants: the product/Kronecker
//! equivalence, serialization round trips, sketch column norms, and
//! solver residuals.

use gntk::graph::{dataset_from_json, dataset_to_json, random_dataset, Dataset, Graph};
use gntk::linalg::{
    self, devectorize, kron, matmul, matmul_nt, matmul_tn, solve_spd_jitter, vec_trick, vectorize,
    DenseMatrix, DenseVector,
};
use gntk::sketch::{two_sided_product, SketchMatrix};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-1.0f64..1.0, r * c)
            .prop_map(move |data| DenseMatrix::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn vec_trick_equals_kronecker_route(
        (n1, d1, n2, d2) in (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8),
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        use rand::Rng;
        let mut draw = |r: usize, c: usize| DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let a = draw(n1, d1);
        let h = draw(d1, d2);
        let b = draw(n2, d2);
        let fast = vectorize(&vec_trick(&a, &h, &b).unwrap());
        let slow = kron(&a, &b).unwrap().matvec(&vectorize(&h)).unwrap();
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn kron_of_identities_is_identity(m in 1usize..=6, n in 1usize..=6) {
        let k = kron(&DenseMatrix::identity(m), &DenseMatrix::identity(n)).unwrap();
        prop_assert_eq!(k, DenseMatrix::identity(m * n));
    }

    #[test]
    fn kron_scales_bilinearly_in_powers_of_two(
        a in matrix_strategy(5),
        b in matrix_strategy(5),
        exp in -3i32..=3,
    ) {
        let alpha = 2.0f64.powi(exp);
        let lhs = kron(&a.scale(alpha), &b).unwrap();
        let rhs = kron(&a, &b).unwrap().scale(alpha);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn vectorize_round_trips(h in matrix_strategy(8)) {
        let back = devectorize(&vectorize(&h), h.rows(), h.cols()).unwrap();
        prop_assert_eq!(back, h);
    }

    #[test]
    fn transpose_products_match_plain(a in matrix_strategy(6), b in matrix_strategy(6)) {
        prop_assume!(a.cols() == b.rows());
        let plain = matmul(&a, &b).unwrap();
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        prop_assert!(plain.max_abs_diff(&nt) <= 1e-12);
        prop_assert!(plain.max_abs_diff(&tn) <= 1e-12);
    }

    #[test]
    fn ams_columns_have_unit_norm(b in 1usize..=32, extra in 0usize..=32, seed in any::<u64>()) {
        let n = b + extra;
        let s = SketchMatrix::ams(b, n, seed).unwrap().to_dense();
        for j in 0..n {
            let norm: f64 = (0..b).map(|i| s.get(i, j).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_sketch_product_is_exact_up_to_shape_32(
        (n1, n2) in (1usize..=32, 1usize..=32),
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        use rand::Rng;
        let mut draw = |r: usize, c: usize| DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let a_left = draw(n1, n1);
        let h = draw(n1, n2);
        let a_right = draw(n2, n2);
        let sketched = two_sided_product(
            &a_left,
            &SketchMatrix::identity(n1),
            &h,
            &SketchMatrix::identity(n2),
            &a_right,
        )
        .unwrap();
        let plain = matmul(&matmul(&a_left.transpose(), &h).unwrap(), &a_right).unwrap();
        prop_assert!(sketched.max_abs_diff(&plain) <= 1e-12);
    }

    #[test]
    fn spd_solve_meets_its_residual_contract(dim in 1usize..=10, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        use rand::Rng;
        let g = DenseMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let k = matmul_tn(&g, &g)
            .unwrap()
            .add(&DenseMatrix::identity(dim).scale(0.05))
            .unwrap();
        let y = DenseVector::from_vec((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let x = solve_spd_jitter(&k, &y, 0.0).unwrap();
        let residual = k.matvec(&x).unwrap().sub(&y).norm();
        prop_assert!(residual <= 1e-8 * (1.0 + y.norm()));
    }

    #[test]
    fn dataset_json_round_trips(n in 1usize..=4, nodes in 1usize..=6, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, n, nodes, 0.4, 3);
        let back = dataset_from_json(&dataset_to_json(&ds).unwrap()).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.graphs.iter().zip(&back.graphs) {
            prop_assert_eq!(a.adjacency(), b.adjacency());
            prop_assert_eq!(a.features(), b.features());
            prop_assert_eq!(a.label(), b.label());
        }
    }

    #[test]
    fn degree_features_are_stochastic_columns(nodes in 1usize..=10, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = gntk::graph::random_graph(&mut rng, nodes, 0.5, 1);
        let dg = gntk::graph::degree_features(&g, g.max_degree()).unwrap();
        for u in 0..nodes {
            let col = dg.features().column(u);
            let sum: f64 = col.as_slice().iter().sum();
            prop_assert_eq!(sum, 1.0);
            prop_assert!(col.as_slice().iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn gram_mean_error_falls_as_sketch_grows() {
    // Empirical sketch-error monotonicity on the Gram of an AMS matrix:
    // averaged over 100 trials at n = 256, the deviation from the
    // identity shrinks as b grows from 0.2 n to 0.8 n.
    let n = 256;
    let mean_err = |ratio: f64| -> f64 {
        let b = (ratio * n as f64) as usize;
        let mut total = 0.0;
        for seed in 0..100u64 {
            let s = SketchMatrix::ams(b, n, seed).unwrap().to_dense();
            let gram = linalg::matmul_tn(&s, &s).unwrap();
            let mut err = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let target = if i == j { 1.0 } else { 0.0 };
                    err += (gram.get(i, j) - target).abs();
                }
            }
            total += err / (n * n) as f64;
        }
        total / 100.0
    };
    let low = mean_err(0.2);
    let high = mean_err(0.8);
    assert!(
        high < low,
        "mean |S^T S - I| at b = 0.8n ({high:.4}) should be below b = 0.2n ({low:.4})"
    );
}

#[test]
fn mixed_dimension_datasets_are_rejected() {
    let g1 = Graph::from_edges(1, &[], DenseMatrix::from_rows(&[[1.0]]), None).unwrap();
    let g2 = Graph::from_edges(
        1,
        &[],
        DenseMatrix::from_rows(&[[1.0], [0.5]]),
        None,
    )
    .unwrap();
    assert!(Dataset::new("mixed", vec![g1, g2]).is_err());
}
