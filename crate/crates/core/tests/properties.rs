use gaitforge::compass_gait::{CompassGait, MassMatrixReading};
use gaitforge::continuation::tangent;
use gaitforge::direct::{basis_eval, BasisKind, DirectDecision, DirectLayout, InputBasis, TimeScale};
use gaitforge::indirect::{eliminate_input, hamiltonian_u, ExtendedState, IndirectDecision, IndirectLayout};
use gaitforge::integrate::{integrate_terminal, Tolerances};
use gaitforge::linalg::determinant;
use gaitforge::ocp::{validate_ocp, PeriodicOcp, ValidationConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(n: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-range..range, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bspline_partition_of_unity(n in 4usize..16, s in 0.0f64..=1.0) {
        let b = InputBasis::new(BasisKind::CubicBSpline, n).unwrap();
        let w = b.weights(s).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= -1e-15));
        prop_assert!(w.iter().filter(|v| **v != 0.0).count() <= 4);
    }

    #[test]
    fn bernstein_partition_of_unity(n in 2usize..16, s in 0.0f64..=1.0) {
        let b = InputBasis::new(BasisKind::Bezier, n).unwrap();
        let w = b.weights(s).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn constant_coefficients_reproduce_constant(
        n in 4usize..13, c in -5.0f64..5.0, frac in 0.0f64..=1.0, period in 0.5f64..5.0, bezier in any::<bool>(),
    ) {
        let kind = if bezier { BasisKind::Bezier } else { BasisKind::CubicBSpline };
        let b = InputBasis::new(kind, n).unwrap();
        let u = basis_eval(&b, frac * period, period, &DVector::from_element(n, c)).unwrap();
        prop_assert!((u - c).abs() <= 1e-12 * c.abs().max(1.0));
    }

    #[test]
    fn raw_bezier_period_derivative(n in 2usize..10, s in 0.0f64..=1.0, period in 0.5f64..3.0) {
        let b = InputBasis::new(BasisKind::Bezier, n).unwrap().with_time(TimeScale::Raw).unwrap();
        let (_, dw) = b.weights_at(s, period).unwrap();
        let eps = 1e-6;
        let (wp, _) = b.weights_at(s, period + eps).unwrap();
        let (wm, _) = b.weights_at(s, period - eps).unwrap();
        for j in 0..n {
            let fd = (wp[j] - wm[j]) / (2.0 * eps);
            prop_assert!((fd - dw[j]).abs() <= 1e-6 * fd.abs().max(1.0), "j={} fd={} analytic={}", j, fd, dw[j]);
        }
    }

    #[test]
    fn impact_conserves_angular_momentum(x in vec_strategy(4, 0.5)) {
        for reading in [MassMatrixReading::LegMass, MassMatrixReading::Verbatim] {
            let cg = CompassGait::default().with_reading(reading);
            let sigma = cg.nominal_sigma();
            let xv = DVector::from_vec(x.clone());
            let post = cg.g(&xv, &sigma).unwrap();
            let r = cg.momentum_residual(&x, post.as_slice()).unwrap();
            prop_assert!(r.amax() <= 1e-12, "residual {}", r.amax());
        }
    }

    #[test]
    fn elimination_makes_hamiltonian_stationary(
        x in vec_strategy(4, 0.4), p in vec_strategy(4, 1.0), q in 0.1f64..10.0,
    ) {
        let cg = CompassGait::default();
        let sigma = cg.nominal_sigma();
        let x = DVector::from_vec(x);
        let p = DVector::from_vec(p);
        let u = eliminate_input(&cg, &x, &p, q, &sigma).unwrap();
        let w = ExtendedState { x, y: 0.0, p, q, u };
        let hu = hamiltonian_u(&cg, &w.x, &w.p, w.q, &w.u, &sigma).unwrap();
        prop_assert!(hu.amax() <= 1e-12, "dH/du = {}", hu.amax());
    }

    #[test]
    fn model_partials_match_finite_differences(seed in 0u64..1000) {
        let cg = CompassGait::default();
        let report = validate_ocp(&cg, &ValidationConfig { probes: 4, tolerance: 1e-6, seed });
        prop_assert!(report.passed(), "failed: {:?}", report.failed_checks());
    }

    #[test]
    fn indirect_decision_round_trip(v in vec_strategy(13, 10.0)) {
        let layout = IndirectLayout::of(&CompassGait::default());
        let v = DVector::from_vec(v);
        let chi = IndirectDecision::from_vector(&layout, &v).unwrap();
        prop_assert_eq!(chi.to_vector(), v);
    }

    #[test]
    fn direct_decision_round_trip(n in 4usize..12, fill in -3.0f64..3.0) {
        let cg = CompassGait::default();
        let b = InputBasis::new(BasisKind::CubicBSpline, n).unwrap();
        let layout = DirectLayout::new(&cg, &b);
        prop_assert_eq!(layout.len(), 2 * 4 + n + 1 + 2);
        let v = DVector::from_fn(layout.len(), |i, _| fill * i as f64);
        let d = DirectDecision::from_vector(&layout, &v).unwrap();
        prop_assert_eq!(d.to_vector(), v);
    }

    #[test]
    fn tangent_is_oriented_unit_null_vector(a in vec_strategy(12, 1.0)) {
        let r = DMatrix::from_row_slice(3, 4, &a);
        prop_assume!(gaitforge::linalg::singular_values(&r)[2] > 1e-3);
        let tau = tangent(&r).unwrap();
        prop_assert!((tau.norm() - 1.0).abs() < 1e-12);
        prop_assert!((&r * &tau).amax() < 1e-10);
        let mut bordered = r.clone().insert_row(3, 0.0);
        bordered.row_mut(3).copy_from(&tau.transpose());
        prop_assert!(determinant(&bordered) > 0.0);
    }

    #[test]
    fn linear_decay_matches_exponential(rate in 0.1f64..3.0, z0 in -2.0f64..2.0, horizon in 0.1f64..3.0) {
        let tol = Tolerances::default();
        let (z, _) = integrate_terminal(|_, z, dz| { dz[0] = -rate * z[0]; Ok(()) }, &[z0], horizon, &tol).unwrap();
        let exact = z0 * (-rate * horizon).exp();
        prop_assert!((z[0] - exact).abs() <= 1e-8 * z0.abs().max(1e-2), "error {}", (z[0] - exact).abs());
    }
}
