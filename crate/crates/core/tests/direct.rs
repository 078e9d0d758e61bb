use gaitforge::compass_gait::{passive_guess, Branch, CompassGait, GAMMA};
use gaitforge::direct::{evaluate_direct, BasisKind, DirectDecision, InputBasis, TimeScale};
use gaitforge::integrate::Tolerances;
use gaitforge::reconstruct::{find_passive_gait, PassiveConfig, PassiveGuess};
use nalgebra::{DMatrix, DVector};

fn bases() -> Vec<InputBasis> {
    vec![
        InputBasis::new(BasisKind::CubicBSpline, 6).unwrap(),
        InputBasis::new(BasisKind::Bezier, 5).unwrap(),
        InputBasis::new(BasisKind::Bezier, 5).unwrap().with_time(TimeScale::Raw).unwrap(),
    ]
}

fn probe(basis: &InputBasis) -> (DirectDecision, DVector<f64>) {
    let (t, x0, gamma) = passive_guess(Branch::Long);
    let xi = DVector::from_fn(basis.n_xi, |j, _| 0.02 * (j as f64 - 1.5));
    let chi = DirectDecision {
        t,
        x0: DVector::from_row_slice(&x0),
        xi,
        lambda_hat: DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05, 0.4, -0.1]),
    };
    (chi, DVector::from_vec(vec![gamma, 0.1]))
}

fn with_primal(chi: &DirectDecision, s: &DVector<f64>) -> DirectDecision {
    let n_x = chi.x0.len();
    DirectDecision {
        t: s[0],
        x0: s.rows(1, n_x).into_owned(),
        xi: s.rows(1 + n_x, chi.xi.len()).into_owned(),
        lambda_hat: chi.lambda_hat.clone(),
    }
}

#[test]
fn forward_sensitivities_match_central_differences() {
    let cg = CompassGait::default();
    let tol = Tolerances {
        rel_tol: 1e-12,
        abs_tol: 1e-13,
        ..Tolerances::default()
    };
    for basis in bases() {
        let (chi, sigma) = probe(&basis);
        let eval = evaluate_direct(&cg, &basis, &chi, &sigma, &tol).unwrap();
        let s0 = chi.primal();
        let n_s = s0.len();
        let n_h = eval.h_hat.len();
        let mut grad_c = DVector::zeros(n_s);
        let mut grad_h = DMatrix::zeros(n_s, n_h);
        let eps = 1e-6;
        for i in 0..n_s {
            let mut sp = s0.clone();
            let mut sm = s0.clone();
            sp[i] += eps;
            sm[i] -= eps;
            let ep = evaluate_direct(&cg, &basis, &with_primal(&chi, &sp), &sigma, &tol).unwrap();
            let em = evaluate_direct(&cg, &basis, &with_primal(&chi, &sm), &sigma, &tol).unwrap();
            grad_c[i] = (ep.cost - em.cost) / (2.0 * eps);
            grad_h.row_mut(i).copy_from(&((&ep.h_hat - &em.h_hat) / (2.0 * eps)).transpose());
        }
        let err_c = (&grad_c - &eval.grad_cost).norm() / grad_c.norm();
        let err_h = (&grad_h - &eval.grad_h).norm() / grad_h.norm();
        assert!(err_c <= 1e-4, "{basis:?}: cost gradient error {err_c:e}");
        assert!(err_h <= 1e-4, "{basis:?}: constraint gradient error {err_h:e}");
    }
}

#[test]
fn passive_gait_is_a_kkt_point_with_zero_multipliers() {
    let cg = CompassGait::default();
    let (t, x0, gamma) = passive_guess(Branch::Long);
    let sigma = DVector::from_vec(vec![gamma, 0.1]);
    let guess = PassiveGuess {
        t,
        x0: DVector::from_row_slice(&x0),
        free_value: gamma,
    };
    let gait = find_passive_gait(&cg, &sigma, GAMMA, &guess, None, &PassiveConfig::default()).unwrap();
    for basis in bases() {
        let mut chi = DirectDecision {
            t: gait.t_star,
            x0: gait.x0_star.clone(),
            xi: DVector::zeros(basis.n_xi),
            lambda_hat: DVector::zeros(6),
        };
        let r = evaluate_direct(&cg, &basis, &chi, &gait.sigma, &Tolerances::default()).unwrap().residual;
        assert!(r.amax() <= 1e-8, "{basis:?}: |r| = {:e}", r.amax());
        chi.xi[1] = 1e-3;
        let r = evaluate_direct(&cg, &basis, &chi, &gait.sigma, &Tolerances::default()).unwrap().residual;
        assert!(r.rows(0, 5 + basis.n_xi).amax() > 1e-8);
    }
}

#[test]
fn invalid_direct_inputs_are_rejected() {
    let cg = CompassGait::default();
    let basis = InputBasis::new(BasisKind::CubicBSpline, 4).unwrap();
    let (mut chi, sigma) = probe(&basis);
    chi.t = -1.0;
    assert!(evaluate_direct(&cg, &basis, &chi, &sigma, &Tolerances::default()).is_err());
    let (mut chi, sigma) = probe(&basis);
    chi.xi = DVector::zeros(3);
    assert!(evaluate_direct(&cg, &basis, &chi, &sigma, &Tolerances::default()).is_err());
}
