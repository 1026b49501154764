use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urelu_sysid::dataset::{build_regressors, rmse_db, simulate_free_run, RegressorSpec, TimeSeriesData};
use urelu_sysid::pwl::{affine_in_region, region_of};
use urelu_sysid::urelu::{bias_grid, build_basis, transform, UReluNet};
use urelu_sysid::varpro::solve_weights;

fn series(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-10.0..10.0f64, len),
        prop::collection::vec(-10.0..10.0f64, len),
    )
}

proptest! {
    #[test]
    fn regressor_rows_hold_the_right_lags(n_u in 0usize..4, n_y in 1usize..4, (u, y) in series(30)) {
        let spec = RegressorSpec::new(n_u, n_y).unwrap();
        let data = TimeSeriesData::new(u.clone(), y.clone(), 1.0).unwrap();
        let ds = build_regressors(&data, spec).unwrap();
        let lag = spec.max_lag();
        prop_assert_eq!(ds.len(), 30 - lag);
        for r in 0..ds.len() {
            let t = r + lag;
            for i in 0..=n_u {
                prop_assert_eq!(ds.regressors[(r, i)], u[t - i]);
            }
            for i in 1..=n_y {
                prop_assert_eq!(ds.regressors[(r, n_u + i)], y[t - i]);
            }
            prop_assert_eq!(ds.target[r], y[t]);
        }
    }

    #[test]
    fn free_run_is_causal((u, y) in series(40), cut in 5usize..39, bump in 1.0..5.0f64) {
        let spec = RegressorSpec::new(2, 2).unwrap();
        let model = |phi: &[f64]| 0.3 * phi[0] - 0.2 * phi[2] + 0.5 * phi[3] - 0.1 * phi[4];
        let a = simulate_free_run(&model, &u, &y, spec).unwrap();
        let mut u2 = u.clone();
        u2[cut] += bump;
        let b = simulate_free_run(&model, &u2, &y, spec).unwrap();
        prop_assert_eq!(&a[..cut], &b[..cut]);
    }

    #[test]
    fn rmse_db_is_monotone(a in 1e-12..1e6f64, b in 1e-12..1e6f64) {
        let (da, db) = (rmse_db(a).unwrap(), rmse_db(b).unwrap());
        prop_assert_eq!(a < b, da < db);
    }

    #[test]
    fn basis_is_nonnegative_and_fit_is_orthogonal(seed in 0u64..1000, q in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || rng.random_range(-0.5..0.5);
        let u = DMatrix::from_fn(60, 3, |_, _| next());
        let v = DMatrix::from_fn(3, 2, |_, _| next());
        let x = transform(&u, &v).unwrap();
        let grid = bias_grid(&x, q).unwrap();
        let b = build_basis(&x, &grid.beta).unwrap();
        prop_assert!(b.iter().all(|&e| e >= 0.0));
        let y = nalgebra::DVector::from_fn(60, |_, _| next());
        let sol = solve_weights(&b, &y).unwrap();
        let g: f64 = b.tr_mul(&sol.residual).amax().max(sol.residual.sum().abs());
        prop_assert!(g <= 1e-10 * (b.norm() + 1.0) * y.norm());
    }

    #[test]
    fn forward_is_continuous_across_knots(
        w in prop::collection::vec(-2.0..2.0f64, 9),
        x0 in -0.5..1.5f64,
        x1 in -0.5..1.5f64,
    ) {
        let beta = DMatrix::from_row_slice(2, 4, &[0.0, 0.25, 0.5, 0.75, 0.0, 0.25, 0.5, 0.75]);
        let net = UReluNet::new(DMatrix::identity(2, 2), beta, w.into(), vec![0.0; 2], vec![1.0; 2]).unwrap();
        // near each knot the two neighbouring affine pieces agree
        for j in 0..4 {
            let k = j as f64 * 0.25;
            let (lo, hi) = ([k - 1e-9, x1], [k + 1e-9, x1]);
            prop_assert!((net.eval_x(&lo) - net.eval_x(&hi)).abs() < 1e-7);
        }
        let x = [x0, x1];
        let cell = region_of(&net, &x).unwrap();
        let r = affine_in_region(&net, &cell).unwrap();
        prop_assert!((r.eval_x(&x) - net.eval_x(&x)).abs() <= 1e-12 * (1.0 + net.eval_x(&x).abs()));
    }
}
