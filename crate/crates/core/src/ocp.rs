//! The parameterized periodic optimal control problem.
//!
//! A model supplies the vector field `f`, the reset map `g`, the event `e`,
//! the operating conditions `omega`, the stage cost `l` and the terminal
//! cost `c`, all as pure functions of their arguments and the parameter
//! vector `sigma`. Partial derivatives default to central differences; a
//! model overrides them with analytic expressions where it has them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Central-difference step for model partials, scaled by argument size.
pub const MODEL_FD_STEP: f64 = 1e-6;

/// Central-difference Jacobian of `f` at `x` with per-coordinate step
/// `MODEL_FD_STEP * max(1, |x_j|)`.
pub fn central_jacobian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = MODEL_FD_STEP * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    let rows = match cols.first() {
        Some(c) => c.len(),
        None => f(x)?.len(),
    };
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Partial derivatives of the boundary constraint `h = [e; omega]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPartials {
    /// `dh/dT`, length `1 + n_omega`.
    pub t: DVector<f64>,
    /// `dh/dx(T)`, `(1 + n_omega) x n_x`.
    pub x_t: DMatrix<f64>,
    /// `dh/dx(0)`, `(1 + n_omega) x n_x`.
    pub x_0: DMatrix<f64>,
}

/// Partial derivatives of the terminal cost `c(T, x_T, y_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPartials {
    pub t: f64,
    pub x_t: DVector<f64>,
    pub y_t: f64,
}

/// Stacked boundary constraint `[e; omega]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConstraint {
    pub values: Vec<f64>,
}

impl BoundaryConstraint {
    pub fn event(&self) -> f64 {
        self.values[0]
    }

    pub fn operating(&self) -> &[f64] {
        &self.values[1..]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A periodic optimal control problem `P_sigma` with a single continuous
/// phase closed by a reset map.
pub trait PeriodicOcp: Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_omega(&self) -> usize;
    fn n_sigma(&self) -> usize;

    fn name(&self) -> &str {
        "ocp"
    }

    fn sigma_names(&self) -> Vec<String> {
        (0..self.n_sigma()).map(|i| format!("sigma{i}")).collect()
    }

    fn f(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>>;
    fn g(&self, x: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>>;
    fn event(&self, t: f64, x_t: &DVector<f64>, x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<f64>;
    fn operating(&self, t: f64, x_t: &DVector<f64>, x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>>;
    fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<f64>;
    fn terminal_cost(&self, t: f64, x_t: &DVector<f64>, y_t: f64, sigma: &DVector<f64>) -> Result<f64>;

    /// Weight `k` when the stage cost is `(k/2)|u|^2` plus a term in `x`
    /// only and `f` is affine in `u`. Enables closed-form input elimination.
    fn input_weight(&self, _sigma: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Box from which probe states for validation are drawn.
    fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); self.n_x()]
    }

    /// A representative parameter vector for validation probes.
    fn nominal_sigma(&self) -> DVector<f64> {
        DVector::zeros(self.n_sigma())
    }

    fn f_x(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        central_jacobian(|xx| self.f(xx, u, sigma), x)
    }

    fn f_u(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        central_jacobian(|uu| self.f(x, uu, sigma), u)
    }

    /// Gradient of `l` with respect to `x`.
    fn l_x(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(central_jacobian(|xx| Ok(scalar(self.stage_cost(xx, u, sigma)?)), x)?.row(0).transpose())
    }

    /// Gradient of `l` with respect to `u`.
    fn l_u(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(central_jacobian(|uu| Ok(scalar(self.stage_cost(x, uu, sigma)?)), u)?.row(0).transpose())
    }

    fn g_x(&self, x: &DVector<f64>, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        central_jacobian(|xx| self.g(xx, sigma), x)
    }

    fn h_partials(&self, t: f64, x_t: &DVector<f64>, x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<BoundaryPartials> {
        let h = |tt: f64, xt: &DVector<f64>, x0: &DVector<f64>| eval_h(self, tt, xt, x0, sigma).map(|b| DVector::from_vec(b.values));
        let d_t = central_jacobian(|v| h(v[0], x_t, x_0), &scalar(t))?;
        Ok(BoundaryPartials {
            t: d_t.column(0).into_owned(),
            x_t: central_jacobian(|xt| h(t, xt, x_0), x_t)?,
            x_0: central_jacobian(|x0| h(t, x_t, x0), x_0)?,
        })
    }

    fn c_partials(&self, t: f64, x_t: &DVector<f64>, y_t: f64, sigma: &DVector<f64>) -> Result<CostPartials> {
        let c = |tt: f64, xt: &DVector<f64>, yt: f64| self.terminal_cost(tt, xt, yt, sigma).map(scalar);
        Ok(CostPartials {
            t: central_jacobian(|v| c(v[0], x_t, y_t), &scalar(t))?[(0, 0)],
            x_t: central_jacobian(|xt| c(t, xt, y_t), x_t)?.row(0).transpose(),
            y_t: central_jacobian(|v| c(t, x_t, v[0]), &scalar(y_t))?[(0, 0)],
        })
    }
}

/// Evaluates `h = [e; omega]` at `(T, x_T, x_0)`.
pub fn eval_h<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    t: f64,
    x_t: &DVector<f64>,
    x_0: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<BoundaryConstraint> {
    check_len("h: x(T)", ocp.n_x(), x_t.len())?;
    check_len("h: x(0)", ocp.n_x(), x_0.len())?;
    check_len("h: sigma", ocp.n_sigma(), sigma.len())?;
    if !(t >= 0.0) {
        return Err(crate::Error::Domain(format!("period {t} must be non-negative")));
    }
    let e = ocp.event(t, x_t, x_0, sigma)?;
    let omega = ocp.operating(t, x_t, x_0, sigma)?;
    check_len("h: omega", ocp.n_omega(), omega.len())?;
    let mut values = Vec::with_capacity(1 + omega.len());
    values.push(e);
    values.extend(omega.iter());
    Ok(BoundaryConstraint { values })
}

/// Evaluates the terminal cost with dimension checks.
pub fn eval_cost<O: PeriodicOcp + ?Sized>(ocp: &O, t: f64, x_t: &DVector<f64>, y_t: f64, sigma: &DVector<f64>) -> Result<f64> {
    check_len("c: x(T)", ocp.n_x(), x_t.len())?;
    check_len("c: sigma", ocp.n_sigma(), sigma.len())?;
    ocp.terminal_cost(t, x_t, y_t, sigma)
}

/// One line of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Outcome of [`validate_ocp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub tolerance: f64,
    pub dimension_errors: Vec<String>,
    pub checks: Vec<PartialCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.dimension_errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Relative discrepancy between two arrays, measured against the larger
/// of the reference magnitude and one.
pub fn relative_error(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(reference)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Validation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    pub probes: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            probes: 20,
            tolerance: 1e-5,
            seed: 7,
        }
    }
}

struct Tally {
    names: &'static [&'static str],
    worst: Vec<f64>,
    errors: Vec<String>,
}

impl Tally {
    fn note(&mut self, msg: String) {
        if !self.errors.contains(&msg) {
            self.errors.push(msg);
        }
    }

    fn compare(&mut self, idx: usize, analytic: Result<Vec<f64>>, fd: Result<Vec<f64>>) {
        match (analytic, fd) {
            (Ok(a), Ok(b)) if a.len() == b.len() => self.worst[idx] = self.worst[idx].max(relative_error(&a, &b)),
            (Ok(a), Ok(b)) => self.note(format!("{}: analytic length {} vs {}", self.names[idx], a.len(), b.len())),
            (Err(e), _) | (_, Err(e)) => self.note(format!("{}: {e}", self.names[idx])),
        }
    }

    fn expect_len(&mut self, name: &str, value: Result<usize>, expected: usize) {
        match value {
            Ok(n) if n != expected => self.note(format!("{name}: length {n} instead of {expected}")),
            Err(e) => self.note(format!("{name}: {e}")),
            _ => {}
        }
    }
}

const CHECK_NAMES: &[&str] = &["f_x", "f_u", "l_x", "l_u", "g_x", "h_T", "h_xT", "h_x0", "c_T", "c_xT", "c_yT"];

/// Checks output dimensions of every callable and compares each partial
/// derivative against central differences at random probe points.
/// Mismatches are reported, never raised.
pub fn validate_ocp<O: PeriodicOcp + ?Sized>(ocp: &O, cfg: &ValidationConfig) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bounds = ocp.state_bounds();
    let sigma = ocp.nominal_sigma();
    let n_x = ocp.n_x();
    let n_h = 1 + ocp.n_omega();
    let mut tally = Tally {
        names: CHECK_NAMES,
        worst: vec![0.0; CHECK_NAMES.len()],
        errors: Vec::new(),
    };
    let flat = |m: Result<DMatrix<f64>>| m.map(|m| m.as_slice().to_vec());
    let flatv = |v: Result<DVector<f64>>| v.map(|v| v.as_slice().to_vec());

    for _ in 0..cfg.probes {
        let mut draw = || DVector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)));
        let x = draw();
        let x0 = draw();
        let u = DVector::from_fn(ocp.n_u(), |_, _| rng.gen_range(-0.5..0.5));
        let t = rng.gen_range(0.5..3.0);
        let y = rng.gen_range(0.0..1.0);

        let l = |xx: &DVector<f64>, uu: &DVector<f64>| ocp.stage_cost(xx, uu, &sigma).map(scalar);
        tally.compare(0, flat(ocp.f_x(&x, &u, &sigma)), flat(central_jacobian(|xx| ocp.f(xx, &u, &sigma), &x)));
        tally.compare(1, flat(ocp.f_u(&x, &u, &sigma)), flat(central_jacobian(|uu| ocp.f(&x, uu, &sigma), &u)));
        tally.compare(2, flatv(ocp.l_x(&x, &u, &sigma)), flat(central_jacobian(|xx| l(xx, &u), &x)));
        tally.compare(3, flatv(ocp.l_u(&x, &u, &sigma)), flat(central_jacobian(|uu| l(&x, uu), &u)));
        tally.compare(4, flat(ocp.g_x(&x, &sigma)), flat(central_jacobian(|xx| ocp.g(xx, &sigma), &x)));

        let h = |tt: f64, xt: &DVector<f64>, xz: &DVector<f64>| eval_h(ocp, tt, xt, xz, &sigma).map(|b| DVector::from_vec(b.values));
        match ocp.h_partials(t, &x, &x0, &sigma) {
            Ok(hp) if hp.t.len() != n_h || hp.x_t.shape() != (n_h, n_x) || hp.x_0.shape() != (n_h, n_x) => {
                tally.note("h partials: wrong shape".into())
            }
            Ok(hp) => {
                tally.compare(5, Ok(hp.t.as_slice().to_vec()), flat(central_jacobian(|v| h(v[0], &x, &x0), &scalar(t))));
                tally.compare(6, Ok(hp.x_t.as_slice().to_vec()), flat(central_jacobian(|xt| h(t, xt, &x0), &x)));
                tally.compare(7, Ok(hp.x_0.as_slice().to_vec()), flat(central_jacobian(|xz| h(t, &x, xz), &x0)));
            }
            Err(e) => tally.note(format!("h partials: {e}")),
        }

        let c = |tt: f64, xt: &DVector<f64>, yt: f64| ocp.terminal_cost(tt, xt, yt, &sigma).map(scalar);
        match ocp.c_partials(t, &x, y, &sigma) {
            Ok(cp) => {
                tally.compare(8, Ok(vec![cp.t]), flat(central_jacobian(|v| c(v[0], &x, y), &scalar(t))));
                tally.compare(9, Ok(cp.x_t.as_slice().to_vec()), flat(central_jacobian(|xt| c(t, xt, y), &x)));
                tally.compare(10, Ok(vec![cp.y_t]), flat(central_jacobian(|v| c(t, &x, v[0]), &scalar(y))));
            }
            Err(e) => tally.note(format!("c partials: {e}")),
        }

        tally.expect_len("f", ocp.f(&x, &u, &sigma).map(|v| v.len()), n_x);
        tally.expect_len("g", ocp.g(&x, &sigma).map(|v| v.len()), n_x);
        tally.expect_len("omega", ocp.operating(t, &x, &x0, &sigma).map(|v| v.len()), ocp.n_omega());
    }

    let checks = CHECK_NAMES
        .iter()
        .zip(tally.worst)
        .map(|(name, err)| PartialCheck {
            name: (*name).to_string(),
            max_rel_error: err,
            passed: err <= cfg.tolerance,
        })
        .collect();
    ValidationReport {
        probes: cfg.probes,
        tolerance: cfg.tolerance,
        dimension_errors: tally.errors,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Double integrator with an event-only boundary and FD partials.
    struct Toy;

    impl PeriodicOcp for Toy {
        fn n_x(&self) -> usize {
            2
        }
        fn n_u(&self) -> usize {
            1
        }
        fn n_omega(&self) -> usize {
            0
        }
        fn n_sigma(&self) -> usize {
            1
        }
        fn f(&self, x: &DVector<f64>, u: &DVector<f64>, _s: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![x[1], u[0] - x[0].sin()]))
        }
        fn g(&self, x: &DVector<f64>, _s: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![-x[0], 0.5 * x[1]]))
        }
        fn event(&self, t: f64, x_t: &DVector<f64>, _x0: &DVector<f64>, s: &DVector<f64>) -> Result<f64> {
            Ok(x_t[0] - s[0] * t)
        }
        fn operating(&self, _t: f64, _xt: &DVector<f64>, _x0: &DVector<f64>, _s: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(0))
        }
        fn stage_cost(&self, _x: &DVector<f64>, u: &DVector<f64>, _s: &DVector<f64>) -> Result<f64> {
            Ok(0.5 * u.norm_squared())
        }
        fn terminal_cost(&self, t: f64, _xt: &DVector<f64>, y: f64, _s: &DVector<f64>) -> Result<f64> {
            Ok(y / t)
        }
    }

    #[test]
    fn event_only_model_has_unit_length_h() {
        let x = DVector::from_vec(vec![0.3, 0.1]);
        let h = eval_h(&Toy, 1.0, &x, &x, &DVector::from_element(1, 0.1)).unwrap();
        assert_eq!(h.values.len(), 1);
        assert!((h.event() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fd_defaults_validate() {
        let report = validate_ocp(&Toy, &ValidationConfig::default());
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let x = DVector::from_vec(vec![0.3, 0.1, 0.0]);
        let y = DVector::from_vec(vec![0.3, 0.1]);
        assert!(eval_h(&Toy, 1.0, &x, &y, &DVector::from_element(1, 0.0)).is_err());
    }

    #[test]
    fn central_jacobian_of_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let j = central_jacobian(|x| Ok(&a * x), &DVector::from_vec(vec![0.1, 5.0, -3.0])).unwrap();
        assert!((j - a).amax() < 1e-8);
    }
}
