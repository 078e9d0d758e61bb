//! End-to-end studies on the compass-gait walker: passive seeding, slope
//! and speed continuations, indirect/direct comparison and second-order
//! classification along direct families.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::compass_gait::{passive_guess, Branch, CompassGait, GAMMA, V_AVG};
use crate::continuation::{run_continuation_with, solve_on_curve, ContinuationConfig, GaitLibrary, StepRecord, ZeroFunction};
use crate::direct::{
    classify_from_jacobian, direct_jacobian, evaluate_direct, project_indirect, Classification, DirectDecision, DirectLayout,
    DirectProblem, InputBasis, SecondOrderReport,
};
use crate::error::{Error, Result};
use crate::indirect::{evaluate_indirect, indirect_jacobian, IndirectDecision, IndirectProblem};
use crate::integrate::Tolerances;
use crate::linalg::{condition_number, damped_newton, FdConfig, NewtonConfig};
use crate::ocp::PeriodicOcp;
use crate::reconstruct::{find_passive_gait, seed_from_passive, ObservabilityConfig, PassiveConfig, PassiveGait, PassiveGuess, Seed};

/// Numerical settings shared by the studies.
#[derive(Debug, Clone, Copy)]
pub struct StudyConfig {
    pub tol: Tolerances,
    pub fd: FdConfig,
    pub passive: PassiveConfig,
    pub observability: ObservabilityConfig,
    /// Largest admissible seed residual.
    pub seed_tol: f64,
    /// Residual target when converging isolated points for comparison.
    pub polish_tol: f64,
    pub continuation: ContinuationConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            fd: FdConfig::default(),
            passive: PassiveConfig::default(),
            observability: ObservabilityConfig::default(),
            seed_tol: 1e-8,
            polish_tol: 1e-11,
            continuation: ContinuationConfig {
                h: 1e-3,
                max_steps: 5000,
                ..ContinuationConfig::default()
            },
        }
    }
}

/// Passive gait of the given branch at average speed `v_avg`, with the
/// slope solved for, and the indirect seed built from it.
pub fn passive_seed(cg: &CompassGait, branch: Branch, v_avg: f64, cfg: &StudyConfig) -> Result<(PassiveGait, Seed)> {
    if !(v_avg > 0.0) {
        return Err(Error::Domain(format!("average speed {v_avg} must be positive")));
    }
    let (t, x0, gamma) = passive_guess(branch);
    let mut guess = PassiveGuess {
        t,
        x0: DVector::from_row_slice(&x0),
        free_value: gamma,
    };
    // The tabulated guesses are at the nominal speed; walk to v_avg in
    // small steps so each search starts close to its solution.
    let v0 = cg.nominal_sigma()[V_AVG];
    let steps = ((v_avg - v0).abs() / 0.01).ceil().max(1.0) as usize;
    let mut gait = None;
    for k in 1..=steps {
        let v = v0 + (v_avg - v0) * k as f64 / steps as f64;
        let sigma = DVector::from_vec(vec![guess.free_value, v]);
        let g = find_passive_gait(cg, &sigma, GAMMA, &guess, Some(branch.as_str()), &cfg.passive)?;
        guess = PassiveGuess {
            t: g.t_star,
            x0: g.x0_star.clone(),
            free_value: g.sigma[GAMMA],
        };
        gait = Some(g);
    }
    let gait = gait.expect("at least one homotopy step");
    let seed = seed_from_passive(cg, &gait, &cfg.tol, &cfg.observability, cfg.seed_tol)?;
    Ok((gait, seed))
}

/// Like [`passive_seed`], but searching directly at `v_avg` from a caller
/// supplied guess.
pub fn passive_seed_from(
    cg: &CompassGait,
    guess: &PassiveGuess,
    branch_tag: Option<&str>,
    v_avg: f64,
    cfg: &StudyConfig,
) -> Result<(PassiveGait, Seed)> {
    if !(v_avg > 0.0) {
        return Err(Error::Domain(format!("average speed {v_avg} must be positive")));
    }
    let sigma = DVector::from_vec(vec![guess.free_value, v_avg]);
    let gait = find_passive_gait(cg, &sigma, GAMMA, guess, branch_tag, &cfg.passive)?;
    let seed = seed_from_passive(cg, &gait, &cfg.tol, &cfg.observability, cfg.seed_tol)?;
    Ok((gait, seed))
}

/// Point of a family where the initial input `u(0)` vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCrossing {
    pub sigma: f64,
    /// `max |p0|`; zero where the family meets a passive gait.
    pub p0_norm: f64,
    /// True when the whole costate vanishes, so `u = 0` for all `t`.
    pub passive: bool,
    pub nu: DVector<f64>,
}

/// Zeros of `u(0)` along an indirect library, refined on the curve. A zero
/// counts as passive when `max |p0| <= passive_tol`.
pub fn input_crossings<O: PeriodicOcp + ?Sized>(
    problem: &IndirectProblem<'_, O>,
    library: &GaitLibrary,
    cfg: &ContinuationConfig,
    passive_tol: f64,
) -> Result<Vec<InputCrossing>> {
    let layout = problem.layout();
    let u0 = layout.u0().start;
    let p0 = layout.p0();
    let describe = |nu: &DVector<f64>| {
        let p0_norm = nu.rows(p0.start, p0.len()).amax();
        InputCrossing {
            sigma: nu[nu.len() - 1],
            p0_norm,
            passive: p0_norm <= passive_tol,
            nu: nu.clone(),
        }
    };
    let mut out = Vec::new();
    for (k, pair) in library.points.windows(2).enumerate() {
        let (a, b) = (pair[0].nu[u0], pair[1].nu[u0]);
        if k == 0 && a == 0.0 {
            out.push(describe(&pair[0].nu));
        }
        if b == 0.0 {
            out.push(describe(&pair[1].nu));
            continue;
        }
        if a == 0.0 || a.signum() == b.signum() {
            continue;
        }
        let w = a / (a - b);
        let start = &pair[0].nu + (&pair[1].nu - &pair[0].nu) * w;
        let refined = solve_on_curve(problem, &start, |v: &DVector<f64>| Ok(v[u0]), cfg)?;
        out.push(describe(&refined.nu));
    }
    Ok(out)
}

/// An indirect family together with its `u(0)` zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRun {
    pub library: GaitLibrary,
    pub crossings: Vec<InputCrossing>,
    pub wall_time_s: f64,
}

/// Slope continuation from an indirect seed to `gamma_end` (radians).
pub fn gamma_run<F: FnMut(&StepRecord)>(
    cg: &CompassGait,
    seed: &Seed,
    gamma_end: f64,
    cfg: &StudyConfig,
    observer: F,
) -> Result<GammaRun> {
    let start = Instant::now();
    let mut problem = IndirectProblem::new(cg, seed.sigma.clone(), GAMMA)?;
    problem.tol = cfg.tol;
    problem.fd = cfg.fd;
    let nu = problem.pack(&seed.decision, seed.sigma[GAMMA]);
    let ccfg = ContinuationConfig {
        sigma_end: gamma_end,
        ..cfg.continuation
    };
    let library = run_continuation_with(&problem, &nu, &ccfg, observer)?;
    let crossings = input_crossings(&problem, &library, &ccfg, 1e-6)?;
    Ok(GammaRun {
        library,
        crossings,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Continuation of an indirect point in parameter `param`.
pub fn indirect_run<O: PeriodicOcp + ?Sized, F: FnMut(&StepRecord)>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    param: usize,
    sigma_end: f64,
    cfg: &StudyConfig,
    observer: F,
) -> Result<GaitLibrary> {
    let mut problem = IndirectProblem::new(ocp, sigma.clone(), param)?;
    problem.tol = cfg.tol;
    problem.fd = cfg.fd;
    let nu = problem.pack(chi, sigma[param]);
    run_continuation_with(
        &problem,
        &nu,
        &ContinuationConfig {
            sigma_end,
            ..cfg.continuation
        },
        observer,
    )
}

/// Newton refinement of an indirect point at fixed parameters. Returns the
/// best iterate and its residual norm even when `newton.tol` is not met.
pub fn polish_indirect<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    newton: &NewtonConfig,
    tol: &Tolerances,
) -> Result<(IndirectDecision, f64)> {
    let layout = crate::indirect::IndirectLayout::of(ocp);
    let f = |v: &DVector<f64>| Ok(evaluate_indirect(ocp, &IndirectDecision::from_vector(&layout, v)?, sigma, tol)?.residual);
    let out = damped_newton(&f, &chi.to_vector(), newton)?;
    Ok((IndirectDecision::from_vector(&layout, &out.x)?, out.residual.amax()))
}

/// Converges a direct point starting from the projection of an indirect one.
pub fn direct_from_indirect<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    basis: &InputBasis,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    newton: &NewtonConfig,
    tol: &Tolerances,
) -> Result<(DirectDecision, usize)> {
    let start = project_indirect(ocp, basis, chi, sigma, tol)?;
    let layout = DirectLayout::new(ocp, basis);
    let f = |v: &DVector<f64>| {
        let d = DirectDecision::from_vector(&layout, v)?;
        Ok(evaluate_direct(ocp, basis, &d, sigma, tol)?.residual)
    };
    let out = damped_newton(&f, &start.to_vector(), newton)?;
    if !out.converged {
        return Err(Error::CorrectorFailure {
            iterations: out.iterations,
            residual: out.residual.amax(),
        });
    }
    Ok((DirectDecision::from_vector(&layout, &out.x)?, out.iterations))
}

/// Continuation of a direct point in parameter `param`.
#[allow(clippy::too_many_arguments)]
pub fn direct_run<O: PeriodicOcp + ?Sized, F: FnMut(&StepRecord)>(
    ocp: &O,
    basis: InputBasis,
    chi: &DirectDecision,
    sigma: &DVector<f64>,
    param: usize,
    sigma_end: f64,
    cfg: &StudyConfig,
    observer: F,
) -> Result<GaitLibrary> {
    let mut problem = DirectProblem::new(ocp, basis, sigma.clone(), param)?;
    problem.tol = cfg.tol;
    problem.fd = cfg.fd;
    let nu = problem.pack(chi, sigma[param]);
    run_continuation_with(
        &problem,
        &nu,
        &ContinuationConfig {
            sigma_end,
            ..cfg.continuation
        },
        observer,
    )
}

/// Second-order classification of every point of a direct library.
pub fn classify_library<O: PeriodicOcp + ?Sized>(problem: &DirectProblem<'_, O>, library: &GaitLibrary) -> Result<Vec<SecondOrderReport>> {
    library.points.iter().map(|p| problem.classify(&p.nu, None)).collect()
}

/// Where the classification changes along a library, compared with its
/// turning points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// Indices `k` where the class of point `k + 1` differs from point `k`.
    pub flips: Vec<usize>,
    pub turning: Vec<usize>,
    /// Flips coincide with turning points and alternate between strict
    /// minimum and saddle.
    pub consistent: bool,
}

pub fn classification_flips(library: &GaitLibrary, classes: &[Classification]) -> FlipReport {
    let flips: Vec<usize> = classes.windows(2).enumerate().filter(|(_, w)| w[0] != w[1]).map(|(k, _)| k).collect();
    let turning: Vec<usize> = library.turning_points.iter().map(|t| t.index).collect();
    let alternating = classes
        .windows(2)
        .filter(|w| w[0] != w[1])
        .all(|w| matches!(
            (w[0], w[1]),
            (Classification::StrictLocalMinimum, Classification::Saddle) | (Classification::Saddle, Classification::StrictLocalMinimum)
        ));
    FlipReport {
        consistent: alternating && flips == turning,
        flips,
        turning,
    }
}

/// One cell of the indirect/direct comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub basis: String,
    pub n_xi: usize,
    pub converged: bool,
    pub cond_number: Option<f64>,
    pub cost: Option<f64>,
    pub rel_cost_error: Option<f64>,
    pub classification: Option<Classification>,
    pub newton_iterations: Option<usize>,
    pub wall_time_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStudy {
    pub sigma: DVector<f64>,
    pub indirect_cost: f64,
    pub indirect_residual: f64,
    pub indirect_cond: f64,
    pub indirect_t: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Label of a basis in tables: `bezier`, `bezier-normalized` or `bspline`.
pub fn basis_label(basis: &InputBasis) -> &'static str {
    use crate::direct::{BasisKind, TimeScale};
    match (basis.kind, basis.time) {
        (BasisKind::Bezier, TimeScale::Raw) => "bezier",
        (BasisKind::Bezier, TimeScale::Normalized) => "bezier-normalized",
        (BasisKind::CubicBSpline, _) => "bspline",
    }
}

/// Converges a direct point for every basis from the indirect point `chi`
/// and records conditioning, cost and classification. Cells that fail are
/// kept with `converged = false`.
pub fn compare<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    bases: &[InputBasis],
    cfg: &StudyConfig,
) -> Result<ComparisonStudy> {
    let newton = NewtonConfig {
        tol: cfg.polish_tol,
        max_iterations: 20,
        fd: cfg.fd,
        ..NewtonConfig::default()
    };
    let (chi, indirect_residual) = polish_indirect(ocp, chi, sigma, &newton, &cfg.tol)?;
    let chi = &chi;
    let reference = evaluate_indirect(ocp, chi, sigma, &cfg.tol)?;
    let (r, _) = indirect_jacobian(ocp, chi, sigma, &cfg.tol, &cfg.fd)?;
    let rows = bases
        .iter()
        .map(|basis| {
            let start = Instant::now();
            let cell = direct_from_indirect(ocp, basis, chi, sigma, &newton, &cfg.tol).and_then(|(d, it)| {
                let eval = evaluate_direct(ocp, basis, &d, sigma, &cfg.tol)?;
                let (rd, _) = direct_jacobian(ocp, basis, &d, sigma, &cfg.tol, &cfg.fd)?;
                let class = classify_from_jacobian(&DirectLayout::new(ocp, basis), &rd, &eval.grad_h)
                    .ok()
                    .map(|c| c.classification);
                Ok((eval.cost, condition_number(&rd), class, it))
            });
            let ms = start.elapsed().as_secs_f64() * 1e3;
            match cell {
                Ok((cost, cond, class, it)) => ComparisonRow {
                    basis: basis_label(basis).to_string(),
                    n_xi: basis.n_xi,
                    converged: true,
                    cond_number: Some(cond),
                    cost: Some(cost),
                    rel_cost_error: Some((cost - reference.cost) / reference.cost),
                    classification: class,
                    newton_iterations: Some(it),
                    wall_time_ms: ms,
                    error: None,
                },
                Err(e) => ComparisonRow {
                    basis: basis_label(basis).to_string(),
                    n_xi: basis.n_xi,
                    converged: false,
                    cond_number: None,
                    cost: None,
                    rel_cost_error: None,
                    classification: None,
                    newton_iterations: None,
                    wall_time_ms: ms,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ComparisonStudy {
        sigma: sigma.clone(),
        indirect_cost: reference.cost,
        indirect_residual,
        indirect_cond: condition_number(&r),
        indirect_t: chi.t,
        rows,
    })
}

/// Level-ground reference: passive seed of `branch`, then slope
/// continuation to `gamma = 0` at the nominal speed.
pub fn level_ground(cg: &CompassGait, branch: Branch, cfg: &StudyConfig) -> Result<(GammaRun, IndirectDecision, DVector<f64>)> {
    let (_, seed) = passive_seed(cg, branch, cg.nominal_sigma()[V_AVG], cfg)?;
    let run = gamma_run(cg, &seed, 0.0, cfg, |_| {})?;
    if !run.library.termination.is_success() {
        return Err(Error::SingularPoint(format!("slope continuation stopped: {:?}", run.library.termination)));
    }
    let problem = IndirectProblem::new(cg, seed.sigma.clone(), GAMMA)?;
    let last = run.library.points.last().expect("non-empty library");
    let (chi, sigma) = problem.split(&last.nu)?;
    Ok((run, chi, sigma))
}

/// Residual norm of every library point under `problem`.
pub fn residual_norms<Z: ZeroFunction + ?Sized>(problem: &Z, library: &GaitLibrary) -> Result<Vec<f64>> {
    library.points.iter().map(|p| Ok(problem.residual(&p.nu)?.amax())).collect()
}
