use nalgebra::DMatrix;
use proptest::prelude::*;

use hadfact::grad::{gram_face_split, lipschitz, rescale_columns};
use hadfact::manifold::{project_bmr, unvec_row};
use hadfact::rng::Rng64;
use hadfact::svd::singular_values;
use hadfact::{face_split, factored_error, initialize, manbcd, projbcd, rgd_standard, CsrMatrix, InitKind, MatrixHandle, SolverConfig};

fn random(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.uniform() - 1.0)
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let s = singular_values(x);
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&v| v > 1e-9 * top).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hadamard_of_ranks_r1_r2_is_a_face_split_product(m in 1usize..20, n in 1usize..20, r1 in 1usize..5, r2 in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let (w1, h1) = (random(m, r1, &mut rng), random(n, r1, &mut rng));
        let (w2, h2) = (random(m, r2, &mut rng), random(n, r2, &mut rng));
        let x = (&w1 * h1.transpose()).component_mul(&(&w2 * h2.transpose()));
        let y = face_split(&w1, &w2).unwrap() * face_split(&h1, &h2).unwrap().transpose();
        prop_assert!((&x - &y).norm() <= 1e-12 * (1.0 + x.norm()));
        prop_assert!(numerical_rank(&x) <= r1 * r2);
    }

    #[test]
    fn rank_one_twist_preserves_rank(m in 2usize..20, n in 2usize..20, r in 1usize..4, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let x1 = &random(m, r, &mut rng) * random(n, r, &mut rng).transpose();
        let u = DMatrix::from_fn(m, 1, |_, _| 0.5 + rng.uniform());
        let v = DMatrix::from_fn(n, 1, |_, _| -0.5 - rng.uniform());
        let z = &u * v.transpose();
        prop_assert_eq!(numerical_rank(&x1.component_mul(&z)), numerical_rank(&x1));
    }

    #[test]
    fn projection_fixes_exactly_the_rank_one_rows(m in 1usize..12, r in 1usize..5, mask in any::<u16>(), seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let mut a = face_split(&random(m, r, &mut rng), &random(m, r, &mut rng)).unwrap();
        let noise = random(m, r * r, &mut rng);
        for i in 0..m {
            if r > 1 && mask & (1 << (i % 16)) != 0 {
                a.set_row(i, &noise.row(i));
            }
        }
        let p = project_bmr(&a).unwrap().assemble();
        for i in 0..m {
            let rank_one = numerical_rank(&unvec_row(&a, i, r)) <= 1;
            let fixed = (a.row(i) - p.row(i)).norm() <= 1e-10 * (1.0 + a.row(i).norm());
            prop_assert_eq!(rank_one, fixed, "row {}", i);
        }
    }

    #[test]
    fn rescaled_gram_is_bounded_by_r_squared(n in 1usize..60, r in 1usize..7, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let mut h1 = random(n, r, &mut rng);
        let mut h2 = random(n, r, &mut rng);
        for k in 0..r {
            h1.column_mut(k).scale_mut(10f64.powf(4.0 * rng.uniform() - 2.0));
            h2.column_mut(k).scale_mut(10f64.powf(4.0 * rng.uniform() - 2.0));
        }
        let (_, p1, _) = rescale_columns(&h1, &h1);
        let (_, p2, _) = rescale_columns(&h2, &h2);
        prop_assert!(lipschitz(&gram_face_split(&p1, &p2)) <= (r * r) as f64 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn two_block_runs_are_monotone_with_bounded_beta(m in 4usize..16, n in 4usize..16, seed in any::<u64>(), flow in any::<bool>()) {
        let mut rng = Rng64::new(seed);
        let x = MatrixHandle::Dense(DMatrix::from_fn(m, n, |_, _| rng.uniform()));
        let init = initialize(&x, 2, InitKind::Svd).unwrap();
        let cfg = SolverConfig { max_iters: 200, ..SolverConfig::default() };
        let rec = if flow { manbcd(&x, 2, &init, &cfg) } else { projbcd(&x, 2, &init, &cfg) }.unwrap();
        prop_assert!(rec.is_monotone());
        prop_assert!(rec.trace.iter().all(|t| (0.0..=1.0).contains(&t.beta)));
        prop_assert!(rec.best_error <= rec.initial_error);
    }

    #[test]
    fn sparse_and_dense_storage_follow_the_same_trajectory(seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let (m, n) = (14, 11);
        let triplets: Vec<_> = (0..m * n)
            .filter_map(|k| (rng.uniform() < 0.3).then(|| (k % m, k / m, rng.uniform() + 0.1)))
            .collect();
        let sparse = MatrixHandle::Sparse(CsrMatrix::from_triplets(m, n, triplets).unwrap());
        let dense = MatrixHandle::Dense(sparse.to_dense());
        let init = initialize(&dense, 2, InitKind::Svd).unwrap();
        let cfg = SolverConfig { max_iters: 10, ..SolverConfig::default() };
        let a = projbcd(&sparse, 2, &init, &cfg).unwrap();
        let b = projbcd(&dense, 2, &init, &cfg).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        for (s, d) in a.trace.iter().zip(&b.trace) {
            prop_assert!((s.rel_error - d.rel_error).abs() <= 1e-8);
        }
    }

    #[test]
    fn rgd_factors_reproduce_the_error_through_face_splits(m in 5usize..14, n in 5usize..14, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let x = MatrixHandle::Dense(DMatrix::from_fn(m, n, |_, _| rng.uniform()));
        let init = initialize(&x, 2, InitKind::Svd).unwrap();
        let cfg = SolverConfig { max_iters: 60, ..SolverConfig::default() };
        let rec = rgd_standard(&x, 2, &init, &cfg).unwrap();
        let f = &rec.factors;
        let w = face_split(&f.w1, &f.w2).unwrap();
        let h = face_split(&f.h1, &f.h2).unwrap();
        let e = factored_error(&x, &w, &h).unwrap() / x.frobenius_norm();
        prop_assert!((e - rec.best_error).abs() <= 1e-10);
        prop_assert!(rec.is_monotone());
        prop_assert_eq!(numerical_rank(&f.x1()), 2);
        prop_assert_eq!(numerical_rank(&f.x2()), 2);
    }
}
