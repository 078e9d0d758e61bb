//! Direct single shooting with a finite input parameterization.
//!
//! The input is `u(t) = sum_j w_j(t / T) xi_j` with Bernstein or uniform
//! cubic B-spline weights over normalized time `s = t / T`. The dynamics are
//! integrated in `s`, which makes `T` an ordinary parameter of
//! `dz/ds = T F(z, u(s))`, and gradients come from forward sensitivities.
//! The KKT residual is `[grad c + grad h lambda; h]` with
//! `h = [g(x(T)) - x0; e; omega]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuation::ZeroFunction;
use crate::error::{check_len, Error, Result};
use crate::indirect::{integrate_extended, IndirectDecision};
use crate::integrate::{integrate_with_sensitivities, Tolerances};
use crate::linalg::{fd_jacobian, null_space, pseudo_inverse, singular_values, FdConfig};
use crate::ocp::{eval_cost, eval_h, PeriodicOcp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Bezier,
    CubicBSpline,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Bezier => "bezier",
            BasisKind::CubicBSpline => "bspline",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bezier" => Ok(BasisKind::Bezier),
            "bspline" | "cubic-bspline" | "b-spline" => Ok(BasisKind::CubicBSpline),
            other => Err(Error::Config(format!("unknown basis '{other}' (bezier|bspline)"))),
        }
    }
}

/// Time argument of the Bernstein polynomials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScale {
    /// `s = t / T` on `[0, 1]`.
    #[default]
    Normalized,
    /// Raw time `t` on `[0, T]`.
    Raw,
}

/// A finite input basis with `n_xi` coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBasis {
    pub kind: BasisKind,
    pub n_xi: usize,
    #[serde(default)]
    pub time: TimeScale,
}

const DEGREE: usize = 3;

impl InputBasis {
    pub fn new(kind: BasisKind, n_xi: usize) -> Result<Self> {
        let min = match kind {
            BasisKind::Bezier => 2,
            BasisKind::CubicBSpline => DEGREE + 1,
        };
        if n_xi < min {
            return Err(Error::Config(format!("{} basis needs n_xi >= {min}, got {n_xi}", kind.as_str())));
        }
        Ok(Self {
            kind,
            n_xi,
            time: TimeScale::Normalized,
        })
    }

    /// Bezier basis in raw time. B-splines always scale with `T`.
    pub fn with_time(mut self, time: TimeScale) -> Result<Self> {
        if self.kind == BasisKind::CubicBSpline && time == TimeScale::Raw {
            return Err(Error::Config("raw time applies to the bezier basis only".into()));
        }
        self.time = time;
        Ok(self)
    }

    /// Number of spline segments.
    pub fn n_seg(&self) -> usize {
        self.n_xi - DEGREE
    }

    /// Knots `(i - 3) T / n_seg` for `i = 0 .. n_xi + 3`.
    pub fn knots(&self, period: f64) -> Vec<f64> {
        let dt = period / self.n_seg() as f64;
        (0..self.n_xi + DEGREE + 1)
            .map(|i| (i as f64 - DEGREE as f64) * dt)
            .collect()
    }

    /// Weights of all coefficients at normalized time `s` in `[0, 1]`.
    pub fn weights(&self, s: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("normalized time {s} outside [0, 1]")));
        }
        Ok(match self.kind {
            BasisKind::Bezier => bernstein(self.n_xi - 1, s),
            BasisKind::CubicBSpline => {
                let mut w = vec![0.0; self.n_xi];
                let (span, local) = cubic_bspline(&self.knots(1.0), self.n_xi, s);
                for (k, v) in local.iter().enumerate() {
                    w[span - DEGREE + k] = *v;
                }
                w
            }
        })
    }

    /// Weights at normalized time `s` for period `T`, and their derivative
    /// with respect to `T` at fixed `s`.
    pub fn weights_at(&self, s: f64, period: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self.kind, self.time) {
            (BasisKind::Bezier, TimeScale::Raw) => {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::Domain(format!("normalized time {s} outside [0, 1]")));
                }
                let t = s * period;
                let deg = self.n_xi - 1;
                let lower = bernstein(deg - 1, t);
                let mut dw = vec![0.0; self.n_xi];
                for (j, d) in dw.iter_mut().enumerate() {
                    let a = if j > 0 { lower[j - 1] } else { 0.0 };
                    let b = if j < deg { lower[j] } else { 0.0 };
                    *d = s * deg as f64 * (a - b);
                }
                Ok((bernstein(deg, t), dw))
            }
            _ => Ok((self.weights(s)?, vec![0.0; self.n_xi])),
        }
    }
}

fn bernstein(degree: usize, s: f64) -> Vec<f64> {
    // De Casteljau-style build-up keeps every step a convex combination.
    let mut b = vec![0.0; degree + 1];
    b[0] = 1.0;
    let t = 1.0 - s;
    for j in 1..=degree {
        let mut saved = 0.0;
        for bk in b.iter_mut().take(j) {
            let tmp = *bk;
            *bk = saved + t * tmp;
            saved = s * tmp;
        }
        b[j] = saved;
    }
    b
}

/// Nonzero cubic B-spline values at `s` and the index of their knot span.
/// The right end of the domain takes the limit from the left.
fn cubic_bspline(knots: &[f64], n_xi: usize, s: f64) -> (usize, [f64; DEGREE + 1]) {
    let mut span = DEGREE;
    while span < n_xi - 1 && s >= knots[span + 1] {
        span += 1;
    }
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = s - knots[span + 1 - j];
        right[j] = knots[span + j] - s;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    (span, n)
}

/// `u(t) = sum_j w_j(t / T) xi_j`.
pub fn basis_eval(basis: &InputBasis, t: f64, period: f64, xi: &DVector<f64>) -> Result<f64> {
    check_len("basis coefficients", basis.n_xi, xi.len())?;
    if !(period > 0.0) {
        return Err(Error::Domain(format!("period {period} must be positive")));
    }
    if !(0.0..=period).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {period}]")));
    }
    let (w, _) = basis.weights_at((t / period).min(1.0), period)?;
    Ok(w.iter().zip(xi.iter()).map(|(a, b)| a * b).sum())
}

/// Block sizes of the direct decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectLayout {
    pub n_x: usize,
    pub n_xi: usize,
    pub n_omega: usize,
}

impl DirectLayout {
    pub fn new<O: PeriodicOcp + ?Sized>(ocp: &O, basis: &InputBasis) -> Self {
        Self {
            n_x: ocp.n_x(),
            n_xi: basis.n_xi,
            n_omega: ocp.n_omega(),
        }
    }

    /// Length of the primal block `(T, x0, xi)`.
    pub fn n_s(&self) -> usize {
        1 + self.n_x + self.n_xi
    }

    /// Number of constraints `n_x + 1 + n_omega`.
    pub fn n_h(&self) -> usize {
        self.n_x + 1 + self.n_omega
    }

    /// `2 n_x + n_xi + n_omega + 2`.
    pub fn len(&self) -> usize {
        self.n_s() + self.n_h()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Unknowns `(T, x0, xi, lambda_hat)` of the direct method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectDecision {
    pub t: f64,
    pub x0: DVector<f64>,
    pub xi: DVector<f64>,
    pub lambda_hat: DVector<f64>,
}

impl DirectDecision {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = vec![self.t];
        v.extend(self.x0.iter());
        v.extend(self.xi.iter());
        v.extend(self.lambda_hat.iter());
        DVector::from_vec(v)
    }

    pub fn from_vector(layout: &DirectLayout, v: &DVector<f64>) -> Result<Self> {
        check_len("direct decision", layout.len(), v.len())?;
        let (n_x, n_xi) = (layout.n_x, layout.n_xi);
        Ok(Self {
            t: v[0],
            x0: v.rows(1, n_x).into_owned(),
            xi: v.rows(1 + n_x, n_xi).into_owned(),
            lambda_hat: v.rows(1 + n_x + n_xi, layout.n_h()).into_owned(),
        })
    }

    /// Primal sub-vector `(T, x0, xi)`.
    pub fn primal(&self) -> DVector<f64> {
        let mut v = vec![self.t];
        v.extend(self.x0.iter());
        v.extend(self.xi.iter());
        DVector::from_vec(v)
    }
}

/// Everything computed by one direct residual evaluation.
#[derive(Debug, Clone)]
pub struct DirectEvaluation {
    pub residual: DVector<f64>,
    pub cost: f64,
    /// `dc/ds`, length `n_s`.
    pub grad_cost: DVector<f64>,
    /// `dh/ds` as an `n_s x n_h` matrix (one column per constraint).
    pub grad_h: DMatrix<f64>,
    pub h_hat: DVector<f64>,
    pub x_t: DVector<f64>,
    pub y_t: f64,
}

/// Evaluates the KKT residual at `chi_hat`.
pub fn evaluate_direct<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    basis: &InputBasis,
    chi: &DirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DirectEvaluation> {
    if ocp.n_u() != 1 {
        return Err(Error::Config("direct method supports a single input".into()));
    }
    let layout = DirectLayout::new(ocp, basis);
    let (n_x, n_xi) = (layout.n_x, layout.n_xi);
    check_len("direct x0", n_x, chi.x0.len())?;
    check_len("direct xi", n_xi, chi.xi.len())?;
    check_len("direct lambda", layout.n_h(), chi.lambda_hat.len())?;
    check_len("direct sigma", ocp.n_sigma(), sigma.len())?;
    if !(chi.t > 0.0) {
        return Err(Error::Domain(format!("period T = {} must be positive", chi.t)));
    }
    let n_z = n_x + 1;
    let xi = &chi.xi;
    let input = |s: f64, period: f64| -> Result<(DVector<f64>, Vec<f64>, f64)> {
        let (w, dw) = basis.weights_at(s.clamp(0.0, 1.0), period)?;
        let u: f64 = w.iter().zip(xi.iter()).map(|(a, b)| a * b).sum();
        let du_dt: f64 = dw.iter().zip(xi.iter()).map(|(a, b)| a * b).sum();
        Ok((DVector::from_element(1, u), w, du_dt))
    };

    let mut theta = vec![chi.t];
    theta.extend(xi.iter());
    let mut z0 = chi.x0.as_slice().to_vec();
    z0.push(0.0);

    let sens = integrate_with_sensitivities(
        |s, z, th, dz| {
            let x = DVector::from_column_slice(&z[..n_x]);
            let (u, _, _) = input(s, th[0])?;
            let f = ocp.f(&x, &u, sigma)?;
            for i in 0..n_x {
                dz[i] = th[0] * f[i];
            }
            dz[n_x] = th[0] * ocp.stage_cost(&x, &u, sigma)?;
            Ok(())
        },
        |s, z, th| {
            let x = DVector::from_column_slice(&z[..n_x]);
            let period = th[0];
            let (u, w, du_dt) = input(s, period)?;
            let f = ocp.f(&x, &u, sigma)?;
            let l = ocp.stage_cost(&x, &u, sigma)?;
            let f_x = ocp.f_x(&x, &u, sigma)?;
            let f_u = ocp.f_u(&x, &u, sigma)?;
            let l_x = ocp.l_x(&x, &u, sigma)?;
            let l_u = ocp.l_u(&x, &u, sigma)?;
            let mut jz = DMatrix::zeros(n_z, n_z);
            jz.view_mut((0, 0), (n_x, n_x)).copy_from(&(f_x * period));
            for j in 0..n_x {
                jz[(n_x, j)] = period * l_x[j];
            }
            let mut jt = DMatrix::zeros(n_z, 1 + n_xi);
            for i in 0..n_x {
                jt[(i, 0)] = f[i];
            }
            jt[(n_x, 0)] = l + period * l_u[0] * du_dt;
            for i in 0..n_x {
                jt[(i, 0)] += period * f_u[(i, 0)] * du_dt;
            }
            for (k, wk) in w.iter().enumerate() {
                for i in 0..n_x {
                    jt[(i, 1 + k)] = period * f_u[(i, 0)] * wk;
                }
                jt[(n_x, 1 + k)] = period * l_u[0] * wk;
            }
            Ok((jz, jt))
        },
        &z0,
        &theta,
        1.0,
        tol,
    )?;

    let x_t = sens.z_t.rows(0, n_x).into_owned();
    let y_t = sens.z_t[n_x];
    // d z(T) / d(T, x0, xi).
    let n_s = layout.n_s();
    let mut dz = DMatrix::zeros(n_z, n_s);
    dz.column_mut(0).copy_from(&sens.s_theta.column(0));
    dz.view_mut((0, 1), (n_z, n_x)).copy_from(&sens.s_z0.columns(0, n_x));
    dz.view_mut((0, 1 + n_x), (n_z, n_xi)).copy_from(&sens.s_theta.columns(1, n_xi));
    let dx = dz.rows(0, n_x).into_owned();
    let dy = dz.row(n_x).transpose();

    let cp = ocp.c_partials(chi.t, &x_t, y_t, sigma)?;
    let mut grad_cost = dx.tr_mul(&cp.x_t) + dy * cp.y_t;
    grad_cost[0] += cp.t;

    let hp = ocp.h_partials(chi.t, &x_t, &chi.x0, sigma)?;
    let g_x = ocp.g_x(&x_t, sigma)?;
    let mut dx0 = DMatrix::zeros(n_x, n_s);
    dx0.view_mut((0, 1), (n_x, n_x)).fill_with_identity();
    let n_h = layout.n_h();
    let mut jac_h = DMatrix::zeros(n_h, n_s);
    jac_h.view_mut((0, 0), (n_x, n_s)).copy_from(&(&g_x * &dx - &dx0));
    let mut dh = &hp.x_t * &dx + &hp.x_0 * &dx0;
    for i in 0..dh.nrows() {
        dh[(i, 0)] += hp.t[i];
    }
    jac_h.view_mut((n_x, 0), (n_h - n_x, n_s)).copy_from(&dh);

    let mut h_hat = (ocp.g(&x_t, sigma)? - &chi.x0).as_slice().to_vec();
    h_hat.extend(eval_h(ocp, chi.t, &x_t, &chi.x0, sigma)?.values);
    let h_hat = DVector::from_vec(h_hat);

    let grad_h = jac_h.transpose();
    let stationarity = &grad_cost + &grad_h * &chi.lambda_hat;
    let mut r = stationarity.as_slice().to_vec();
    r.extend(h_hat.iter());

    Ok(DirectEvaluation {
        residual: DVector::from_vec(r),
        cost: eval_cost(ocp, chi.t, &x_t, y_t, sigma)?,
        grad_cost,
        grad_h,
        h_hat,
        x_t,
        y_t,
    })
}

pub fn direct_residual<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    basis: &InputBasis,
    chi: &DirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    Ok(evaluate_direct(ocp, basis, chi, sigma, tol)?.residual)
}

/// Finite-difference Jacobians `(R, R_sigma)` of the direct residual.
pub fn direct_jacobian<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    basis: &InputBasis,
    chi: &DirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
    fd: &FdConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let layout = DirectLayout::new(ocp, basis);
    let n = layout.len();
    let mut v = chi.to_vector().as_slice().to_vec();
    v.extend(sigma.iter());
    let v = DVector::from_vec(v);
    let f = |w: &DVector<f64>| {
        let c = DirectDecision::from_vector(&layout, &w.rows(0, n).into_owned())?;
        direct_residual(ocp, basis, &c, &w.rows(n, w.len() - n).into_owned(), tol)
    };
    let r_sigma = fd_jacobian(&f, &v, None, fd)?;
    Ok((r_sigma.columns(0, n).into_owned(), r_sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    StrictLocalMinimum,
    LocalMinimum,
    Saddle,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::StrictLocalMinimum => "strict-local-minimum",
            Classification::LocalMinimum => "local-minimum",
            Classification::Saddle => "saddle",
        }
    }
}

/// Result of the second-order test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub classification: Classification,
    pub min_eigenvalue: f64,
    pub eigenvalues: Vec<f64>,
}

/// Classifies a KKT point by the smallest eigenvalue of the Hessian of the
/// Lagrangian projected onto the null space of `grad_h'`. `grad_h` is
/// `n_s x n_h`; `hessian` is `n_s x n_s` and is symmetrized.
pub fn classify_stationary_point(grad_h: &DMatrix<f64>, hessian: &DMatrix<f64>, eig_tol: f64) -> Result<SecondOrderReport> {
    let (n_s, n_h) = grad_h.shape();
    if hessian.shape() != (n_s, n_s) {
        return Err(Error::Dimension {
            context: "projected Hessian",
            expected: n_s * n_s,
            got: hessian.len(),
        });
    }
    let sv = singular_values(grad_h);
    let rank_ok = sv.len() == n_h && sv.last().is_some_and(|&s| s > 1e-12 * sv[0]);
    if !rank_ok {
        return Err(Error::Regularity(format!("constraint gradients are rank deficient (singular values {sv:?})")));
    }
    let d = null_space(&grad_h.transpose(), 1e-10);
    let sym = (hessian + hessian.transpose()) * 0.5;
    let projected = d.tr_mul(&(&sym * &d));
    let mut eig: Vec<f64> = projected.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let min = eig.first().copied().unwrap_or(f64::INFINITY);
    let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let classification = if min > eig_tol * scale {
        Classification::StrictLocalMinimum
    } else if min >= -eig_tol * scale {
        Classification::LocalMinimum
    } else {
        Classification::Saddle
    };
    Ok(SecondOrderReport {
        classification,
        min_eigenvalue: min,
        eigenvalues: eig,
    })
}

/// Second-order test at a direct point using the primal block of `R`.
pub fn classify_from_jacobian(layout: &DirectLayout, r: &DMatrix<f64>, grad_h: &DMatrix<f64>) -> Result<SecondOrderReport> {
    let n_s = layout.n_s();
    classify_stationary_point(grad_h, &r.view((0, 0), (n_s, n_s)).into_owned(), 1e-10)
}

/// Least-squares multipliers `argmin |grad c + grad h lambda|`.
pub fn least_squares_multipliers(eval: &DirectEvaluation) -> DVector<f64> {
    let (pinv, _) = pseudo_inverse(&eval.grad_h, 1e-12);
    -(pinv * &eval.grad_cost)
}

/// Direct point obtained by projecting an indirect solution's input
/// trajectory onto the basis, with multipliers by least squares.
pub fn project_indirect<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    basis: &InputBasis,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DirectDecision> {
    let traj = integrate_extended(ocp, &chi.x0, &chi.p0, chi.q, chi.t, sigma, tol)?;
    let samples = 50 * basis.n_xi.max(8);
    let mut w = DMatrix::zeros(samples, basis.n_xi);
    let mut u = DVector::zeros(samples);
    for k in 0..samples {
        let s = k as f64 / (samples - 1) as f64;
        let (row, _) = basis.weights_at(s, chi.t)?;
        for (j, v) in row.iter().enumerate() {
            w[(k, j)] = *v;
        }
        u[k] = traj.state(ocp, (s * chi.t).min(chi.t))?.u[0];
    }
    let (pinv, _) = pseudo_inverse(&w, 1e-14);
    let xi = pinv * u;
    let layout = DirectLayout::new(ocp, basis);
    let mut out = DirectDecision {
        t: chi.t,
        x0: chi.x0.clone(),
        xi,
        lambda_hat: DVector::zeros(layout.n_h()),
    };
    let eval = evaluate_direct(ocp, basis, &out, sigma, tol)?;
    out.lambda_hat = least_squares_multipliers(&eval);
    Ok(out)
}

/// Direct zero-function with one free parameter, `nu = (chi_hat, sigma_k)`.
#[derive(Debug, Clone)]
pub struct DirectProblem<'a, O: PeriodicOcp + ?Sized> {
    pub ocp: &'a O,
    pub basis: InputBasis,
    pub sigma: DVector<f64>,
    pub param: usize,
    pub tol: Tolerances,
    pub fd: FdConfig,
}

impl<'a, O: PeriodicOcp + ?Sized> DirectProblem<'a, O> {
    pub fn new(ocp: &'a O, basis: InputBasis, sigma: DVector<f64>, param: usize) -> Result<Self> {
        check_len("direct problem sigma", ocp.n_sigma(), sigma.len())?;
        if param >= sigma.len() {
            return Err(Error::Config(format!("parameter index {param} out of range")));
        }
        Ok(Self {
            ocp,
            basis,
            sigma,
            param,
            tol: Tolerances::default(),
            fd: FdConfig::default(),
        })
    }

    pub fn layout(&self) -> DirectLayout {
        DirectLayout::new(self.ocp, &self.basis)
    }

    pub fn pack(&self, chi: &DirectDecision, sigma_k: f64) -> DVector<f64> {
        let mut v = chi.to_vector().as_slice().to_vec();
        v.push(sigma_k);
        DVector::from_vec(v)
    }

    pub fn split(&self, nu: &DVector<f64>) -> Result<(DirectDecision, DVector<f64>)> {
        let n = self.layout().len();
        check_len("direct continuation point", n + 1, nu.len())?;
        let chi = DirectDecision::from_vector(&self.layout(), &nu.rows(0, n).into_owned())?;
        let mut sigma = self.sigma.clone();
        sigma[self.param] = nu[n];
        Ok((chi, sigma))
    }

    pub fn evaluate(&self, nu: &DVector<f64>) -> Result<DirectEvaluation> {
        let (chi, sigma) = self.split(nu)?;
        evaluate_direct(self.ocp, &self.basis, &chi, &sigma, &self.tol)
    }

    /// Second-order classification at `nu`, using the leading block of
    /// `jac` (the `N x (N + 1)` continuation Jacobian) when given.
    pub fn classify(&self, nu: &DVector<f64>, jac: Option<&DMatrix<f64>>) -> Result<SecondOrderReport> {
        let eval = self.evaluate(nu)?;
        let j = match jac {
            Some(j) => j.clone(),
            None => self.jacobian(nu, Some(&eval.residual))?,
        };
        classify_from_jacobian(&self.layout(), &j, &eval.grad_h)
    }
}

impl<O: PeriodicOcp + ?Sized> ZeroFunction for DirectProblem<'_, O> {
    fn dim(&self) -> usize {
        self.layout().len()
    }

    fn residual(&self, nu: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(nu)?.residual)
    }

    fn fd_config(&self) -> FdConfig {
        self.fd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bezier_endpoints() {
        for n in 2..9 {
            let b = InputBasis::new(BasisKind::Bezier, n).unwrap();
            let xi = DVector::from_fn(n, |i, _| i as f64 * 1.5 - 2.0);
            assert_eq!(basis_eval(&b, 0.0, 2.4, &xi).unwrap(), xi[0]);
            assert!((basis_eval(&b, 2.4, 2.4, &xi).unwrap() - xi[n - 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn bspline_partition_of_unity() {
        for n in 4..13 {
            let b = InputBasis::new(BasisKind::CubicBSpline, n).unwrap();
            for k in 0..=1000 {
                let s: f64 = b.weights(k as f64 / 1000.0).unwrap().iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bspline_reproduces_constants_and_has_compact_support() {
        let b = InputBasis::new(BasisKind::CubicBSpline, 8).unwrap();
        let xi = DVector::from_element(8, 0.7);
        assert!((basis_eval(&b, 1.3, 2.0, &xi).unwrap() - 0.7).abs() < 1e-14);
        let w = b.weights(0.05).unwrap();
        assert!(w.iter().filter(|v| **v != 0.0).count() <= 4);
        assert!(w[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn four_coefficient_bases_span_cubics() {
        let bz = InputBasis::new(BasisKind::Bezier, 4).unwrap();
        let bs = InputBasis::new(BasisKind::CubicBSpline, 4).unwrap();
        // One segment with clamped-free knots is still a cubic polynomial
        // space, so Bezier weights are a fixed linear map of B-spline ones.
        let pts: Vec<f64> = (0..7).map(|k| k as f64 / 6.0).collect();
        let a = DMatrix::from_fn(7, 4, |i, j| bz.weights(pts[i]).unwrap()[j]);
        let b = DMatrix::from_fn(7, 4, |i, j| bs.weights(pts[i]).unwrap()[j]);
        let (pinv, _) = pseudo_inverse(&a, 1e-14);
        let map = pinv * &b;
        assert!((&a * map - b).amax() < 1e-12);
    }

    #[test]
    fn out_of_range_time_is_an_error() {
        let b = InputBasis::new(BasisKind::Bezier, 3).unwrap();
        assert!(basis_eval(&b, 2.5, 2.0, &DVector::zeros(3)).is_err());
        assert!(InputBasis::new(BasisKind::CubicBSpline, 3).is_err());
        assert!(InputBasis::new(BasisKind::Bezier, 1).is_err());
    }

    #[test]
    fn synthetic_classification() {
        let gh = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let saddle = classify_stationary_point(&gh, &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0])), 1e-10).unwrap();
        assert_eq!(saddle.classification, Classification::Saddle);
        assert!((saddle.min_eigenvalue + 3.0).abs() < 1e-12);
        let min = classify_stationary_point(&gh, &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0])), 1e-10).unwrap();
        assert_eq!(min.classification, Classification::StrictLocalMinimum);
        let bad = DMatrix::zeros(2, 1);
        assert!(matches!(
            classify_stationary_point(&bad, &DMatrix::identity(2, 2), 1e-10),
            Err(Error::Regularity(_))
        ));
    }
}
