use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

use pcdoa::array_model::{augmented_steering_b, augmented_steering_c, steering, UlaConfig};
use pcdoa::covariance::{
    augment_r1, augment_r4, compensate, extract_r2, extract_rc, hermitian_eigenvalues, sample_covariance,
};
use pcdoa::harness::{aggregate, rmse, EstimatorKind, SweepVariable, TrialOutcome};
use pcdoa::scene_sim::SnapshotMatrix;
use pcdoa::sparse_opt::{
    gamma_update, nonneg_lasso, stls_alternating, stls_objective, LassoOptions, RankOnePerturbation,
    StlsOptions,
};

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

fn complex_mat(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    complex_vec(rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn is_conj_symmetric(v: &DVector<Complex64>) -> bool {
    let n = v.len();
    (0..n).all(|i| (v[i] - v[n - 1 - i].conj()).norm() <= 1e-12)
}

fn kkt_violation(d: &DMatrix<Complex64>, y: &DVector<Complex64>, x: &[f64], lambda: f64) -> f64 {
    let xc = DVector::from_iterator(x.len(), x.iter().map(|&v| Complex64::new(v, 0.0)));
    let g = d.adjoint() * (d * xc - y);
    x.iter()
        .zip(g.iter())
        .map(|(&xj, gj)| {
            let s = 2.0 * gj.re + lambda;
            if xj > 1e-10 { s.abs() } else { (-s).max(0.0) }
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steering_has_unit_modulus(theta in -89.9f64..90.0, m in 1usize..24) {
        let a = steering(theta, m).unwrap();
        prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        prop_assert_eq!(a[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn augmented_atoms_are_conjugate_symmetric(theta in -89.9f64..90.0, mc in 2usize..12) {
        prop_assert!(is_conj_symmetric(&augmented_steering_b(theta, mc).unwrap()));
        prop_assert!(is_conj_symmetric(&augmented_steering_c(theta, mc + 3).unwrap()));
    }

    #[test]
    fn sample_covariance_is_hermitian_psd(z in complex_mat(6, 9)) {
        let r = sample_covariance(&SnapshotMatrix::new(z).unwrap());
        prop_assert_eq!(&r, &r.adjoint());
        prop_assert!(hermitian_eigenvalues(&r).iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn augmented_vectors_are_conjugate_symmetric(z in complex_mat(8, 5), noise in 0.0f64..1.0) {
        let cfg = UlaConfig::new(8, 4).unwrap();
        let r = sample_covariance(&SnapshotMatrix::new(z).unwrap());
        let rc = extract_rc(&r, &cfg, noise).unwrap();
        let r2 = extract_r2(&r, noise).unwrap();
        prop_assert_eq!(rc.as_slice(), &r2.as_slice()[..4]);
        prop_assert!(is_conj_symmetric(&augment_r1(&rc).unwrap()));
        prop_assert!(is_conj_symmetric(&augment_r4(&r2).unwrap()));
    }

    #[test]
    fn compensation_by_true_gain_cancels(v in complex_vec(6), g in complex_vec(6)) {
        prop_assume!(g.iter().all(|z| z.norm() > 0.1));
        let v = DVector::from_vec(v);
        let g = DVector::from_vec(g);
        let r2 = v.component_mul(&g);
        let r3 = compensate(&r2, &g).unwrap();
        prop_assert!((r3 - v).norm() <= 1e-12 * (1.0 + r2.norm()) * 100.0);
    }

    #[test]
    fn lasso_is_feasible_monotone_and_stationary(d in complex_mat(5, 8), y in complex_vec(5), frac in 0.01f64..0.9) {
        let y = DVector::from_vec(y);
        let lam0 = pcdoa::sparse_opt::lambda_max(&d, &y);
        prop_assume!(lam0 > 1e-3);
        let lambda = frac * lam0;
        let s = nonneg_lasso(&d, &y, lambda, &LassoOptions::default()).unwrap();
        prop_assert!(s.coeffs.iter().all(|&x| x >= 0.0));
        prop_assert!(s.objective.is_finite());
        prop_assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        prop_assert!(kkt_violation(&d, &y, &s.coeffs, lambda) < 1e-4 * lambda);
    }

    #[test]
    fn gamma_update_is_stationary(psi in complex_mat(4, 5), r in complex_vec(4), p in prop::collection::vec(0.0f64..2.0, 5), dir in complex_mat(4, 5)) {
        let r = DVector::from_vec(r);
        let g = gamma_update(&psi, &r, &p);
        let f = |gamma: &DMatrix<Complex64>| {
            let pc = DVector::from_iterator(5, p.iter().map(|&v| Complex64::new(v, 0.0)));
            let u = &r - &psi * &pc;
            (u - gamma * pc).norm_squared() + gamma.norm_squared()
        };
        let g0 = g.to_dense();
        let h = 1e-6;
        let slope = (f(&(&g0 + &dir * Complex64::new(h, 0.0))) - f(&(&g0 - &dir * Complex64::new(h, 0.0)))) / (2.0 * h);
        prop_assert!(slope.abs() < 1e-6 * (1.0 + dir.norm_squared()), "slope {}", slope);
    }

    #[test]
    fn stls_trace_never_increases(psi in complex_mat(5, 7), r in complex_vec(5), frac in 0.05f64..0.8) {
        let r = DVector::from_vec(r);
        let lambda = frac * pcdoa::sparse_opt::lambda_max(&psi, &r).max(1e-3);
        let s = stls_alternating(&psi, &r, lambda, &StlsOptions::default(), &[0.0; 7], None).unwrap();
        prop_assert!(s.coeffs.iter().all(|&x| x >= 0.0));
        prop_assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0)));
        let last = *s.objective_trace.last().unwrap();
        let direct = stls_objective(&psi, &r, &s.coeffs, &s.gamma(), lambda);
        prop_assert!((last - direct).abs() <= 1e-9 * last.abs().max(1.0));
        let zero = RankOnePerturbation::zero(5, 7);
        prop_assert!(stls_objective(&psi, &r, &[0.0; 7], &zero, lambda) >= last - 1e-12);
    }

    #[test]
    fn rmse_ignores_order(mut est in prop::collection::vec(-80.0f64..80.0, 1..6), shift in -3.0f64..3.0) {
        let truth: Vec<f64> = est.iter().map(|v| v + shift).collect();
        let a = rmse(&est, &truth).unwrap();
        est.reverse();
        prop_assert_eq!(a, rmse(&est, &truth).unwrap());
        prop_assert!((a - shift.abs()).abs() < 1e-12);
    }

    #[test]
    fn failure_rate_and_usage_sum_to_one(flags in prop::collection::vec(any::<bool>(), 1..40)) {
        let trials: Vec<TrialOutcome> = flags.iter().map(|&ok| TrialOutcome {
            truth_deg: vec![0.0],
            stage1_deg: ok.then(|| vec![0.5]),
            stage2_deg: None,
            runtime_ms: 0.0,
        }).collect();
        let row = aggregate(EstimatorKind::Stage1, SweepVariable::SnrDb, 0.0, &trials);
        prop_assert_eq!(row.failure_rate + row.trials_used as f64 / trials.len() as f64, 1.0);
        prop_assert!((0.0..=1.0).contains(&row.failure_rate));
    }
}
