//! Pseudo-arclength continuation of a one-parameter solution curve.
//!
//! A [`ZeroFunction`] maps `nu = (chi, sigma)` of length `N + 1` to `N`
//! residuals. Starting from a converged seed, each step predicts along the
//! unit tangent and corrects with Newton on the system bordered by the
//! predictor tangent. Tangents are oriented so that `det([R; tau']) > 0`,
//! which keeps the orientation continuous through turning points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{determinant, fd_jacobian, null_vector, solve, FdConfig};

/// A square-minus-one system `r(nu) = 0` with `nu` one longer than `r`.
pub trait ZeroFunction: Sync {
    /// Number of equations `N`.
    fn dim(&self) -> usize;

    fn residual(&self, nu: &DVector<f64>) -> Result<DVector<f64>>;

    fn fd_config(&self) -> FdConfig {
        FdConfig::default()
    }

    /// `N x (N + 1)` Jacobian. `r` may carry the residual at `nu`.
    fn jacobian(&self, nu: &DVector<f64>, r: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
        fd_jacobian(&|v: &DVector<f64>| self.residual(v), nu, r, &self.fd_config())
    }
}

/// Step control and termination settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub h: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub max_steps: usize,
    /// Target value of the continuation parameter. The start value is the
    /// seed's last entry.
    pub sigma_end: f64,
    /// Relative singular-value threshold below which `R` counts as rank
    /// deficient.
    pub singular_tol: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            h: 1e-2,
            h_min: 1e-7,
            h_max: 5e-2,
            newton_tol: 1e-8,
            max_newton_iters: 8,
            max_steps: 2000,
            sigma_end: 0.0,
            singular_tol: 1e-14,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.h_min && self.h_min <= self.h && self.h <= self.h_max) {
            return Err(Error::Config(format!(
                "step sizes must satisfy 0 < h_min <= h <= h_max (got {}, {}, {})",
                self.h_min, self.h, self.h_max
            )));
        }
        if !(self.newton_tol > 0.0) || self.max_newton_iters == 0 {
            return Err(Error::Config("newton tolerance and iteration cap must be positive".into()));
        }
        if !self.sigma_end.is_finite() {
            return Err(Error::Config("sigma_end must be finite".into()));
        }
        Ok(())
    }
}

/// An accepted point of the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub nu: DVector<f64>,
    pub tangent: DVector<f64>,
    pub residual_norm: f64,
    /// Step size that produced this point (zero for the seed).
    pub step: f64,
    pub newton_iterations: usize,
}

impl CurvePoint {
    pub fn sigma(&self) -> f64 {
        self.nu[self.nu.len() - 1]
    }

    /// Parameter component of the tangent.
    pub fn sigma_rate(&self) -> f64 {
        self.tangent[self.tangent.len() - 1]
    }
}

/// Location of a fold in the continuation parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    /// The fold lies between points `index` and `index + 1`.
    pub index: usize,
    /// Parameter value interpolated where the tangent's parameter
    /// component vanishes.
    pub sigma: f64,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    ReachedEnd,
    MaxSteps,
    Stalled { h: f64, reason: String },
    SingularPoint { reason: String },
    BranchSwitch,
}

impl Termination {
    pub fn is_success(&self) -> bool {
        matches!(self, Termination::ReachedEnd)
    }
}

/// Ordered points of one continuation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitLibrary {
    pub points: Vec<CurvePoint>,
    pub turning_points: Vec<TurningPoint>,
    pub direction: f64,
    pub termination: Termination,
}

/// Progress record emitted after every attempted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sigma: f64,
    pub residual: f64,
    pub newton_iterations: usize,
    pub h: f64,
    pub accepted: bool,
}

/// Unit tangent of the curve from `R = dr/dnu` (`N x (N + 1)`), oriented
/// so that `det([R; tau']) > 0`.
pub fn tangent(r_tilde: &DMatrix<f64>) -> Result<DVector<f64>> {
    tangent_with_tol(r_tilde, 1e-14)
}

pub fn tangent_with_tol(r_tilde: &DMatrix<f64>, singular_tol: f64) -> Result<DVector<f64>> {
    let (m, n) = r_tilde.shape();
    if n != m + 1 {
        return Err(Error::Dimension {
            context: "tangent: columns",
            expected: m + 1,
            got: n,
        });
    }
    let (mut tau, gap) = null_vector(r_tilde);
    if !(gap > singular_tol) {
        return Err(Error::SingularPoint(format!("Jacobian is rank deficient (relative gap {gap:.3e})")));
    }
    let mut bordered = DMatrix::zeros(n, n);
    bordered.view_mut((0, 0), (m, n)).copy_from(r_tilde);
    bordered.row_mut(m).copy_from(&tau.transpose());
    if determinant(&bordered) < 0.0 {
        tau = -tau;
    }
    Ok(tau)
}

/// Euler predictor `nu + h d tau`.
pub fn predict(nu: &DVector<f64>, h: f64, d: f64, tau: &DVector<f64>) -> DVector<f64> {
    nu + tau * (h * d)
}

/// Direction `d = sign(sigma_end - sigma_start) sign(tau_sigma)`.
pub fn initial_direction(sigma_start: f64, sigma_end: f64, tau: &DVector<f64>) -> Result<f64> {
    let t = tau[tau.len() - 1];
    if t == 0.0 || !t.is_finite() {
        return Err(Error::DirectionUndefined);
    }
    Ok((sigma_end - sigma_start).signum() * t.signum())
}

fn bordered(j: &DMatrix<f64>, row: &DVector<f64>) -> DMatrix<f64> {
    let (m, n) = j.shape();
    let mut a = DMatrix::zeros(m + 1, n);
    a.view_mut((0, 0), (m, n)).copy_from(j);
    a.row_mut(m).copy_from(&row.transpose());
    a
}

fn extend(r: &DVector<f64>, extra: f64) -> DVector<f64> {
    let mut v = r.clone().resize_vertically(r.len() + 1, 0.0);
    v[r.len()] = extra;
    v
}

/// Newton corrector on `[r(nu); tau_pred'(nu - nu_pred)] = 0` with the
/// bordering tangent frozen. `jac_pred` may carry the Jacobian at
/// `nu_pred`. Returns the corrected point with a fresh tangent.
pub fn correct<Z: ZeroFunction + ?Sized>(
    problem: &Z,
    nu_pred: &DVector<f64>,
    tau_pred: &DVector<f64>,
    jac_pred: Option<DMatrix<f64>>,
    cfg: &ContinuationConfig,
) -> Result<CurvePoint> {
    let mut nu = nu_pred.clone();
    let mut r = problem.residual(&nu)?;
    let mut jac = jac_pred;
    let first = r.amax();
    for it in 0..=cfg.max_newton_iters {
        let norm = r.amax();
        if !norm.is_finite() {
            break;
        }
        if norm <= cfg.newton_tol {
            let j = match (it, jac) {
                (0, Some(j)) => j,
                _ => problem.jacobian(&nu, Some(&r))?,
            };
            let tau = tangent_with_tol(&j, cfg.singular_tol)?;
            return Ok(CurvePoint {
                nu,
                tangent: tau,
                residual_norm: norm,
                step: 0.0,
                newton_iterations: it,
            });
        }
        if it == cfg.max_newton_iters || norm > 1e3 * first.max(cfg.newton_tol) {
            break;
        }
        let j = match jac.take() {
            Some(j) => j,
            None => problem.jacobian(&nu, Some(&r))?,
        };
        let a = bordered(&j, tau_pred);
        let delta = solve(&a, &extend(&r, 0.0)).map_err(|e| Error::SingularPoint(format!("bordered system: {e}")))?;
        nu -= delta;
        r = match problem.residual(&nu) {
            Ok(r) => r,
            Err(_) => break,
        };
    }
    Err(Error::CorrectorFailure {
        iterations: cfg.max_newton_iters,
        residual: r.amax(),
    })
}

/// Newton on `[r(nu); phi(nu)] = 0`: solves for the curve point where the
/// scalar `phi` vanishes, starting from `nu0`.
pub fn solve_on_curve<Z, P>(problem: &Z, nu0: &DVector<f64>, phi: P, cfg: &ContinuationConfig) -> Result<CurvePoint>
where
    Z: ZeroFunction + ?Sized,
    P: Fn(&DVector<f64>) -> Result<f64> + Sync,
{
    let full = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(extend(&problem.residual(v)?, phi(v)?)) };
    let mut nu = nu0.clone();
    let mut r = full(&nu)?;
    let max_iters = 2 * cfg.max_newton_iters;
    for it in 0..=max_iters {
        let n = problem.dim();
        let norm = r.rows(0, n).amax().max(r[n].abs());
        if norm <= cfg.newton_tol {
            let j = problem.jacobian(&nu, Some(&r.rows(0, n).into_owned()))?;
            return Ok(CurvePoint {
                tangent: tangent_with_tol(&j, cfg.singular_tol)?,
                residual_norm: r.rows(0, n).amax(),
                nu,
                step: 0.0,
                newton_iterations: it,
            });
        }
        if it == max_iters {
            break;
        }
        let j = fd_jacobian(&full, &nu, Some(&r), &problem.fd_config())?;
        let delta = solve(&j, &r)?;
        nu -= delta;
        r = full(&nu)?;
    }
    Err(Error::CorrectorFailure {
        iterations: max_iters,
        residual: r.amax(),
    })
}

/// Parameter value at the fold between `a` and `b`, from cubic Hermite
/// interpolation in arclength.
fn fold_estimate(a: &CurvePoint, b: &CurvePoint, d: f64) -> f64 {
    let ds = (&b.nu - &a.nu).norm();
    let (ra, rb) = (d * a.sigma_rate(), d * b.sigma_rate());
    let w = ra / (ra - rb);
    let (w2, w3) = (w * w, w * w * w);
    (2.0 * w3 - 3.0 * w2 + 1.0) * a.sigma()
        + (w3 - 2.0 * w2 + w) * ds * ra
        + (-2.0 * w3 + 3.0 * w2) * b.sigma()
        + (w3 - w2) * ds * rb
}

/// Traces the curve from `seed` toward `cfg.sigma_end`.
pub fn run_continuation<Z: ZeroFunction + ?Sized>(problem: &Z, seed: &DVector<f64>, cfg: &ContinuationConfig) -> Result<GaitLibrary> {
    run_continuation_with(problem, seed, cfg, |_| {})
}

/// [`run_continuation`] with a progress callback.
pub fn run_continuation_with<Z, F>(problem: &Z, seed: &DVector<f64>, cfg: &ContinuationConfig, mut observer: F) -> Result<GaitLibrary>
where
    Z: ZeroFunction + ?Sized,
    F: FnMut(&StepRecord),
{
    cfg.validate()?;
    let n = problem.dim();
    if seed.len() != n + 1 {
        return Err(Error::Dimension {
            context: "continuation seed",
            expected: n + 1,
            got: seed.len(),
        });
    }
    let r0 = problem.residual(seed)?;
    if r0.amax() > cfg.newton_tol {
        return Err(Error::SeedInconsistency {
            norm: r0.amax(),
            residual: r0.as_slice().to_vec(),
        });
    }
    let j0 = problem.jacobian(seed, Some(&r0))?;
    let tau0 = tangent_with_tol(&j0, cfg.singular_tol)?;
    let first = CurvePoint {
        nu: seed.clone(),
        tangent: tau0,
        residual_norm: r0.amax(),
        step: 0.0,
        newton_iterations: 0,
    };
    let sigma_start = first.sigma();
    let mut library = GaitLibrary {
        points: vec![first],
        turning_points: Vec::new(),
        direction: 0.0,
        termination: Termination::ReachedEnd,
    };
    if sigma_start == cfg.sigma_end {
        return Ok(library);
    }
    let d = initial_direction(sigma_start, cfg.sigma_end, &library.points[0].tangent)?;
    library.direction = d;

    let mut h = cfg.h;
    let mut fast = 0;
    let mut attempts = 0;
    let max_attempts = 20 * cfg.max_steps;
    while library.points.len() <= cfg.max_steps {
        attempts += 1;
        if attempts > max_attempts {
            library.termination = Termination::MaxSteps;
            return Ok(library);
        }
        let cur = library.points.last().expect("library is never empty").clone();
        let nu_pred = predict(&cur.nu, h, d, &cur.tangent);
        let attempt = problem
            .jacobian(&nu_pred, None)
            .and_then(|j| Ok((tangent_with_tol(&j, cfg.singular_tol)?, j)))
            .and_then(|(tau_pred, j)| correct(problem, &nu_pred, &tau_pred, Some(j), cfg));

        let failure = match attempt {
            Ok(mut point) => {
                let dist = (&point.nu - &cur.nu).norm();
                if cur.tangent.dot(&point.tangent) <= 0.0 {
                    Some((true, "tangent orientation reversed".to_string()))
                } else if dist > 2.0 * h {
                    Some((false, format!("corrector moved {dist:.3e} for step {h:.3e}")))
                } else {
                    point.step = h;
                    observer(&StepRecord {
                        step: library.points.len(),
                        sigma: point.sigma(),
                        residual: point.residual_norm,
                        newton_iterations: point.newton_iterations,
                        h,
                        accepted: true,
                    });
                    let before = cur.sigma() - cfg.sigma_end;
                    let after = point.sigma() - cfg.sigma_end;
                    if cur.sigma_rate().signum() != point.sigma_rate().signum() {
                        library.turning_points.push(TurningPoint {
                            index: library.points.len() - 1,
                            sigma: fold_estimate(&cur, &point, d),
                        });
                    }
                    if after == 0.0 || before.signum() != after.signum() {
                        let w = before / (before - after);
                        let start = &cur.nu + (&point.nu - &cur.nu) * w;
                        let target = cfg.sigma_end;
                        let pinned = solve_on_curve(problem, &start, |v: &DVector<f64>| Ok(v[n] - target), cfg);
                        match pinned {
                            Ok(mut end) => {
                                end.nu[n] = target;
                                end.step = (&end.nu - &cur.nu).norm();
                                if end.tangent.dot(&cur.tangent) < 0.0 {
                                    end.tangent = -end.tangent;
                                }
                                library.points.push(end);
                                library.termination = Termination::ReachedEnd;
                            }
                            Err(e) => {
                                library.points.push(point);
                                library.termination = Termination::Stalled {
                                    h,
                                    reason: format!("could not pin sigma_end: {e}"),
                                };
                            }
                        }
                        return Ok(library);
                    }
                    let iters = point.newton_iterations;
                    library.points.push(point);
                    if iters <= 2 {
                        fast += 1;
                        if fast >= 3 {
                            h = (1.5 * h).min(cfg.h_max);
                            fast = 0;
                        }
                    } else {
                        fast = 0;
                    }
                    None
                }
            }
            Err(Error::SingularPoint(msg)) => Some((false, format!("singular point: {msg}"))),
            Err(e) => Some((false, e.to_string())),
        };

        if let Some((orientation, reason)) = failure {
            observer(&StepRecord {
                step: library.points.len(),
                sigma: cur.sigma(),
                residual: f64::NAN,
                newton_iterations: 0,
                h,
                accepted: false,
            });
            fast = 0;
            if h <= cfg.h_min {
                library.termination = if orientation {
                    Termination::BranchSwitch
                } else if reason.starts_with("singular point") {
                    Termination::SingularPoint { reason }
                } else {
                    Termination::Stalled { h, reason }
                };
                return Ok(library);
            }
            h = (0.5 * h).max(cfg.h_min);
        }
    }
    library.termination = Termination::MaxSteps;
    Ok(library)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The unit circle `x^2 + s^2 = 1`, with turning points at `s = 0`.
    struct Circle;

    impl ZeroFunction for Circle {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, nu: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, nu[0] * nu[0] + nu[1] * nu[1] - 1.0))
        }
        fn jacobian(&self, nu: &DVector<f64>, _r: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[2.0 * nu[0], 2.0 * nu[1]]))
        }
    }

    #[test]
    fn tangent_of_identity_block_is_last_axis() {
        let mut r = DMatrix::zeros(3, 4);
        r.view_mut((0, 0), (3, 3)).fill_with_identity();
        let t = tangent(&r).unwrap();
        assert!((t[3] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tangent_of_identity_with_column() {
        let v = [0.5, -2.0];
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, v[0], 0.0, 1.0, v[1]]);
        let t = tangent(&r).unwrap();
        let expect = DVector::from_vec(vec![-v[0], -v[1], 1.0]).normalize();
        assert!((t.dot(&expect).abs() - 1.0).abs() < 1e-14);
        assert!((&r * &t).amax() < 1e-14);
    }

    #[test]
    fn rank_deficient_tangent_is_singular() {
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(tangent(&r), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn direction_rules() {
        let up = DVector::from_vec(vec![0.3, 0.8]);
        assert_eq!(initial_direction(0.0, 1.0, &up).unwrap(), 1.0);
        assert_eq!(initial_direction(1.0, 0.0, &up).unwrap(), -1.0);
        assert_eq!(initial_direction(1.0, 0.0, &-up).unwrap(), 1.0);
        assert!(matches!(
            initial_direction(0.0, 1.0, &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::DirectionUndefined)
        ));
    }

    #[test]
    fn corrector_keeps_points_on_curve() {
        let nu = DVector::from_vec(vec![0.6, 0.8]);
        let tau = tangent(&Circle.jacobian(&nu, None).unwrap()).unwrap();
        let p = correct(&Circle, &nu, &tau, None, &ContinuationConfig::default()).unwrap();
        assert_eq!(p.newton_iterations, 0);
        assert_eq!(p.nu, nu);
    }

    #[test]
    fn circle_run_passes_turning_point() {
        let cfg = ContinuationConfig {
            h: 0.05,
            h_max: 0.1,
            sigma_end: -0.5,
            ..ContinuationConfig::default()
        };
        // Start at s = 0.5 on the right half, heading toward s = -0.5 the
        // long way round only if the orientation says so.
        let seed = DVector::from_vec(vec![(0.75f64).sqrt(), 0.5]);
        let lib = run_continuation(&Circle, &seed, &cfg).unwrap();
        assert!(lib.termination.is_success(), "{:?}", lib.termination);
        let last = lib.points.last().unwrap();
        assert_eq!(last.sigma(), -0.5);
        for w in lib.points.windows(2) {
            assert!(w[0].tangent.dot(&w[1].tangent) > 0.0);
            assert!((&w[1].nu - &w[0].nu).norm() <= 2.0 * w[1].step + 1e-12);
        }
        for p in &lib.points {
            assert!(p.residual_norm <= 1e-8);
            assert!((p.tangent.norm() - 1.0).abs() < 1e-12);
        }
    }

    /// `s = x^3 - x`, folding at `x = +-1/sqrt(3)`.
    struct Cubic;

    impl ZeroFunction for Cubic {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, nu: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, nu[1] - nu[0].powi(3) + nu[0]))
        }
    }

    #[test]
    fn run_through_folds_logs_turning_points() {
        let cfg = ContinuationConfig {
            h: 0.05,
            h_max: 0.2,
            sigma_end: 6.0,
            ..ContinuationConfig::default()
        };
        let seed = DVector::from_vec(vec![-2.0, -6.0]);
        let lib = run_continuation(&Cubic, &seed, &cfg).unwrap();
        assert!(lib.termination.is_success(), "{:?}", lib.termination);
        assert_eq!(lib.turning_points.len(), 2);
        let fold = 2.0 / (3.0 * 3f64.sqrt());
        assert!((lib.turning_points[0].sigma - fold).abs() < 1e-2, "{:?}", lib.turning_points);
        assert!((lib.turning_points[1].sigma + fold).abs() < 1e-2);
        assert!((lib.points.last().unwrap().nu[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn direction_undefined_at_fold_seed() {
        let cfg = ContinuationConfig {
            sigma_end: 0.9,
            ..ContinuationConfig::default()
        };
        let seed = DVector::from_vec(vec![0.0, -1.0]);
        assert!(matches!(run_continuation(&Circle, &seed, &cfg), Err(Error::DirectionUndefined)));
    }

    #[test]
    fn equal_end_gives_single_point() {
        let seed = DVector::from_vec(vec![0.6, 0.8]);
        let cfg = ContinuationConfig {
            sigma_end: 0.8,
            ..ContinuationConfig::default()
        };
        let lib = run_continuation(&Circle, &seed, &cfg).unwrap();
        assert_eq!(lib.points.len(), 1);
    }

    #[test]
    fn inconsistent_seed_is_rejected() {
        let seed = DVector::from_vec(vec![0.6, 0.7]);
        assert!(matches!(
            run_continuation(&Circle, &seed, &ContinuationConfig::default()),
            Err(Error::SeedInconsistency { .. })
        ));
    }
}
