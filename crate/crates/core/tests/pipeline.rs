use gaitforge::compass_gait::{Branch, CompassGait, GAMMA};
use gaitforge::continuation::{run_continuation, ContinuationConfig, Termination};
use gaitforge::direct::{BasisKind, InputBasis, TimeScale};
use gaitforge::indirect::{hamiltonian_drift, IndirectProblem};
use gaitforge::workflows::{compare, level_ground, passive_seed, StudyConfig};
use std::sync::OnceLock;

fn level() -> &'static (gaitforge::workflows::GammaRun, gaitforge::indirect::IndirectDecision, nalgebra::DVector<f64>) {
    static LEVEL: OnceLock<(gaitforge::workflows::GammaRun, gaitforge::indirect::IndirectDecision, nalgebra::DVector<f64>)> =
        OnceLock::new();
    LEVEL.get_or_init(|| level_ground(&CompassGait::default(), Branch::Short, &StudyConfig::default()).unwrap())
}

#[test]
fn long_branch_seed_is_passive_extremal() {
    let cg = CompassGait::default();
    let (gait, seed) = passive_seed(&cg, Branch::Long, 0.1, &StudyConfig::default()).unwrap();
    assert!(seed.residual_norm <= 1e-8);
    assert_eq!(seed.decision.p0.amax(), 0.0);
    assert_eq!(seed.decision.lambda.amax(), 0.0);
    assert_eq!(seed.decision.u0.amax(), 0.0);
    assert!((gait.sigma[GAMMA].to_degrees() - 0.1963).abs() < 1e-3);
}

#[test]
fn seed_at_other_speed_uses_homotopy() {
    let cg = CompassGait::default();
    let (gait, seed) = passive_seed(&cg, Branch::Long, 0.13, &StudyConfig::default()).unwrap();
    assert!((gait.sigma[1] - 0.13).abs() < 1e-15);
    assert!(seed.residual_norm <= 1e-8);
    assert!(passive_seed(&cg, Branch::Long, -0.1, &StudyConfig::default()).is_err());
}

#[test]
fn sigma_end_at_seed_gives_single_point() {
    let cg = CompassGait::default();
    let (_, seed) = passive_seed(&cg, Branch::Short, 0.1, &StudyConfig::default()).unwrap();
    let problem = IndirectProblem::new(&cg, seed.sigma.clone(), GAMMA).unwrap();
    let nu = problem.pack(&seed.decision, seed.sigma[GAMMA]);
    let cfg = ContinuationConfig {
        sigma_end: seed.sigma[GAMMA],
        ..ContinuationConfig::default()
    };
    let lib = run_continuation(&problem, &nu, &cfg).unwrap();
    assert_eq!(lib.points.len(), 1);
    assert_eq!(lib.termination, Termination::ReachedEnd);
}

#[test]
fn slope_family_meets_both_passive_gaits() {
    let (run, chi, _) = level();
    assert_eq!(run.library.termination, Termination::ReachedEnd);
    let passive: Vec<f64> = run.crossings.iter().filter(|c| c.passive).map(|c| c.sigma.to_degrees()).collect();
    assert_eq!(passive.len(), 2, "{:?}", run.crossings);
    assert!((passive[0] - 0.2199).abs() < 0.01);
    assert!((passive[1] - 0.1963).abs() < 0.01);
    assert!((chi.t - 2.40695).abs() < 1e-3);
}

#[test]
fn hamiltonian_is_constant_along_the_family() {
    let cg = CompassGait::default();
    let (run, _, sigma) = level();
    let problem = IndirectProblem::new(&cg, sigma.clone(), GAMMA).unwrap();
    for p in &run.library.points {
        let (chi, s) = problem.split(&p.nu).unwrap();
        let drift = hamiltonian_drift(&cg, &chi, &s, &Default::default(), 50).unwrap();
        assert!(drift <= 1e-6, "drift {drift:e} at gamma {}", s[GAMMA]);
        assert!(p.residual_norm <= 1e-8);
    }
}

#[test]
fn direct_cost_never_beats_indirect() {
    let cg = CompassGait::default();
    let (_, chi, sigma) = level();
    let mut bases = Vec::new();
    for n in 4..=8 {
        bases.push(InputBasis::new(BasisKind::CubicBSpline, n).unwrap());
        bases.push(InputBasis::new(BasisKind::Bezier, n).unwrap().with_time(TimeScale::Raw).unwrap());
    }
    let study = compare(&cg, chi, sigma, &bases, &StudyConfig::default()).unwrap();
    for row in &study.rows {
        assert!(row.converged, "{row:?}");
        assert!(row.cost.unwrap() >= study.indirect_cost - 1e-12, "{row:?}");
    }
    let c4: Vec<f64> = study.rows.iter().filter(|r| r.n_xi == 4).map(|r| r.cost.unwrap()).collect();
    assert!((c4[0] - c4[1]).abs() / c4[0] <= 1e-10, "{c4:?}");
}
