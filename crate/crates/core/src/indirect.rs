//! First-order optimality conditions solved by single shooting.
//!
//! The Hamiltonian system is integrated with the input eliminated in closed
//! form, so the extended dynamics are an ODE in `(x, y, p)` with the cost
//! costate `q` held constant. The decision vector is
//! `chi = (T, x0, p0, q, u0, lambda)` and the zero-function stacks
//! `[r_T; r_xT; r_q; dH/du(0); g(x(T)) - x0; h]`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuation::ZeroFunction;
use crate::error::{check_len, Error, Result};
use crate::integrate::{integrate_fixed_horizon, integrate_terminal, DenseTrajectory, Tolerances};
use crate::linalg::{fd_jacobian, FdConfig};
use crate::ocp::{eval_cost, eval_h, PeriodicOcp};

/// Block offsets of the decision vector and of the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndirectLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub n_omega: usize,
}

impl IndirectLayout {
    pub fn of<O: PeriodicOcp + ?Sized>(ocp: &O) -> Self {
        Self {
            n_x: ocp.n_x(),
            n_u: ocp.n_u(),
            n_omega: ocp.n_omega(),
        }
    }

    /// Number of boundary constraints `1 + n_omega`.
    pub fn n_h(&self) -> usize {
        1 + self.n_omega
    }

    /// `N = 2 n_x + n_u + n_omega + 3`.
    pub fn len(&self) -> usize {
        2 * self.n_x + self.n_u + self.n_omega + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self) -> usize {
        0
    }

    pub fn x0(&self) -> Range<usize> {
        1..1 + self.n_x
    }

    pub fn p0(&self) -> Range<usize> {
        1 + self.n_x..1 + 2 * self.n_x
    }

    pub fn q(&self) -> usize {
        1 + 2 * self.n_x
    }

    pub fn u0(&self) -> Range<usize> {
        2 + 2 * self.n_x..2 + 2 * self.n_x + self.n_u
    }

    pub fn lambda(&self) -> Range<usize> {
        let s = 2 + 2 * self.n_x + self.n_u;
        s..s + self.n_h()
    }

    pub fn r_t(&self) -> usize {
        0
    }

    pub fn r_xt(&self) -> Range<usize> {
        1..1 + self.n_x
    }

    pub fn r_q(&self) -> usize {
        1 + self.n_x
    }

    pub fn r_u(&self) -> Range<usize> {
        2 + self.n_x..2 + self.n_x + self.n_u
    }

    pub fn r_periodic(&self) -> Range<usize> {
        let s = 2 + self.n_x + self.n_u;
        s..s + self.n_x
    }

    pub fn r_h(&self) -> Range<usize> {
        let s = 2 + 2 * self.n_x + self.n_u;
        s..s + self.n_h()
    }
}

/// Unknowns of the shooting problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectDecision {
    pub t: f64,
    pub x0: DVector<f64>,
    pub p0: DVector<f64>,
    pub q: f64,
    pub u0: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl IndirectDecision {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(2 * self.x0.len() + self.u0.len() + self.lambda.len() + 2);
        v.push(self.t);
        v.extend(self.x0.iter());
        v.extend(self.p0.iter());
        v.push(self.q);
        v.extend(self.u0.iter());
        v.extend(self.lambda.iter());
        DVector::from_vec(v)
    }

    pub fn from_vector(layout: &IndirectLayout, v: &DVector<f64>) -> Result<Self> {
        check_len("indirect decision", layout.len(), v.len())?;
        let seg = |r: Range<usize>| DVector::from_column_slice(&v.as_slice()[r]);
        Ok(Self {
            t: v[layout.t()],
            x0: seg(layout.x0()),
            p0: seg(layout.p0()),
            q: v[layout.q()],
            u0: seg(layout.u0()),
            lambda: seg(layout.lambda()),
        })
    }

    fn check(&self, layout: &IndirectLayout) -> Result<()> {
        check_len("decision x0", layout.n_x, self.x0.len())?;
        check_len("decision p0", layout.n_x, self.p0.len())?;
        check_len("decision u0", layout.n_u, self.u0.len())?;
        check_len("decision lambda", layout.n_h(), self.lambda.len())
    }
}

/// Point `w = (x, y, p, q, u)` of the extended system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub x: DVector<f64>,
    pub y: f64,
    pub p: DVector<f64>,
    pub q: f64,
    pub u: DVector<f64>,
}

/// `H = p' f + q l`.
pub fn hamiltonian<O: PeriodicOcp + ?Sized>(ocp: &O, w: &ExtendedState, sigma: &DVector<f64>) -> Result<f64> {
    check_len("hamiltonian: p", ocp.n_x(), w.p.len())?;
    let f = ocp.f(&w.x, &w.u, sigma)?;
    Ok(w.p.dot(&f) + w.q * ocp.stage_cost(&w.x, &w.u, sigma)?)
}

/// `dH/du = f_u' p + q l_u`.
pub fn hamiltonian_u<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x: &DVector<f64>,
    p: &DVector<f64>,
    q: f64,
    u: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(ocp.f_u(x, u, sigma)?.tr_mul(p) + ocp.l_u(x, u, sigma)? * q)
}

/// Closed-form minimizer of the Hamiltonian, `u = -(1/(k q)) f_u' p`.
pub fn eliminate_input<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x: &DVector<f64>,
    p: &DVector<f64>,
    q: f64,
    sigma: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("eliminate_input: p", ocp.n_x(), p.len())?;
    let k = ocp
        .input_weight(sigma)
        .ok_or_else(|| Error::Config(format!("model '{}' has no closed-form input elimination", ocp.name())))?;
    if q == 0.0 || k == 0.0 || !(k * q).is_finite() {
        return Err(Error::SingularElimination { q });
    }
    let zero = DVector::zeros(ocp.n_u());
    Ok(ocp.f_u(x, &zero, sigma)?.tr_mul(p) * (-1.0 / (k * q)))
}

/// Derivatives of `(x, y, p)` with `u` eliminated; `q` has zero derivative
/// and is not part of the integrated state.
fn extended_rhs_into<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    z: &[f64],
    q: f64,
    sigma: &DVector<f64>,
    dz: &mut [f64],
) -> Result<()> {
    let n = ocp.n_x();
    let x = DVector::from_column_slice(&z[..n]);
    let p = DVector::from_column_slice(&z[n + 1..2 * n + 1]);
    let u = eliminate_input(ocp, &x, &p, q, sigma)?;
    let f = ocp.f(&x, &u, sigma)?;
    let l = ocp.stage_cost(&x, &u, sigma)?;
    let pdot = -(ocp.f_x(&x, &u, sigma)?.tr_mul(&p) + ocp.l_x(&x, &u, sigma)? * q);
    dz[..n].copy_from_slice(f.as_slice());
    dz[n] = l;
    dz[n + 1..2 * n + 1].copy_from_slice(pdot.as_slice());
    Ok(())
}

/// Time derivative of `(x, y, p, q)` at `w`; `u` is recomputed by
/// elimination and the stored `w.u` is ignored.
pub fn extended_rhs<O: PeriodicOcp + ?Sized>(ocp: &O, w: &ExtendedState, sigma: &DVector<f64>) -> Result<DVector<f64>> {
    let n = ocp.n_x();
    check_len("extended_rhs: x", n, w.x.len())?;
    check_len("extended_rhs: p", n, w.p.len())?;
    let mut z = Vec::with_capacity(2 * n + 1);
    z.extend(w.x.iter());
    z.push(w.y);
    z.extend(w.p.iter());
    let mut dz = vec![0.0; 2 * n + 2];
    extended_rhs_into(ocp, &z, w.q, sigma, &mut dz[..2 * n + 1])?;
    Ok(DVector::from_vec(dz))
}

fn initial_extended(x0: &DVector<f64>, p0: &DVector<f64>) -> Vec<f64> {
    let mut z = Vec::with_capacity(2 * x0.len() + 1);
    z.extend(x0.iter());
    z.push(0.0);
    z.extend(p0.iter());
    z
}

/// Dense solution `w(t)` of the extended system on `[0, T]`.
#[derive(Debug, Clone)]
pub struct ExtendedTrajectory {
    pub dense: DenseTrajectory,
    pub q: f64,
    pub sigma: DVector<f64>,
    n_x: usize,
}

impl ExtendedTrajectory {
    pub fn horizon(&self) -> f64 {
        self.dense.horizon()
    }

    /// Extended state at `t`, with `u` recomputed by elimination.
    pub fn state<O: PeriodicOcp + ?Sized>(&self, ocp: &O, t: f64) -> Result<ExtendedState> {
        let z = self.dense.eval(t)?;
        let n = self.n_x;
        let x = z.rows(0, n).into_owned();
        let p = z.rows(n + 1, n).into_owned();
        let u = eliminate_input(ocp, &x, &p, self.q, &self.sigma)?;
        Ok(ExtendedState { x, y: z[n], p, q: self.q, u })
    }
}

/// Integrates the extended system from `(x0, 0, p0)` with constant `q`.
pub fn integrate_extended<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x0: &DVector<f64>,
    p0: &DVector<f64>,
    q: f64,
    horizon: f64,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<ExtendedTrajectory> {
    check_len("integrate_extended: x0", ocp.n_x(), x0.len())?;
    check_len("integrate_extended: p0", ocp.n_x(), p0.len())?;
    let dense = integrate_fixed_horizon(
        |_t, z, dz| extended_rhs_into(ocp, z, q, sigma, dz),
        &initial_extended(x0, p0),
        horizon,
        tol,
    )?;
    Ok(ExtendedTrajectory {
        dense,
        q,
        sigma: sigma.clone(),
        n_x: ocp.n_x(),
    })
}

/// Largest `|H(t) - H(0)|` over the integrator breakpoints and `samples`
/// equally spaced times.
pub fn hamiltonian_drift<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
    samples: usize,
) -> Result<f64> {
    let traj = integrate_extended(ocp, &chi.x0, &chi.p0, chi.q, chi.t, sigma, tol)?;
    let h0 = hamiltonian(ocp, &traj.state(ocp, 0.0)?, sigma)?;
    let mut times: Vec<f64> = traj.dense.breakpoints().to_vec();
    times.extend((0..=samples).map(|k| chi.t * k as f64 / samples.max(1) as f64));
    let mut drift = 0.0f64;
    for t in times {
        drift = drift.max((hamiltonian(ocp, &traj.state(ocp, t.min(chi.t))?, sigma)? - h0).abs());
    }
    Ok(drift)
}

/// Residual together with the terminal quantities it was built from.
#[derive(Debug, Clone)]
pub struct IndirectEvaluation {
    pub residual: DVector<f64>,
    pub x_t: DVector<f64>,
    pub y_t: f64,
    pub p_t: DVector<f64>,
    pub cost: f64,
}

/// Evaluates the zero-function at `chi` and returns the terminal state and
/// cost alongside.
pub fn evaluate_indirect<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<IndirectEvaluation> {
    let layout = IndirectLayout::of(ocp);
    chi.check(&layout)?;
    check_len("indirect sigma", ocp.n_sigma(), sigma.len())?;
    if !(chi.t > 0.0) {
        return Err(Error::Domain(format!("period T = {} must be positive", chi.t)));
    }
    let n = layout.n_x;
    let (z_t, _) = integrate_terminal(
        |_t, z, dz| extended_rhs_into(ocp, z, chi.q, sigma, dz),
        &initial_extended(&chi.x0, &chi.p0),
        chi.t,
        tol,
    )?;
    let x_t = DVector::from_column_slice(&z_t[..n]);
    let y_t = z_t[n];
    let p_t = DVector::from_column_slice(&z_t[n + 1..2 * n + 1]);

    let u_t = eliminate_input(ocp, &x_t, &p_t, chi.q, sigma)?;
    let h_end = hamiltonian(
        ocp,
        &ExtendedState {
            x: x_t.clone(),
            y: y_t,
            p: p_t.clone(),
            q: chi.q,
            u: u_t,
        },
        sigma,
    )?;
    let cp = ocp.c_partials(chi.t, &x_t, y_t, sigma)?;
    let hp = ocp.h_partials(chi.t, &x_t, &chi.x0, sigma)?;
    let g_x = ocp.g_x(&x_t, sigma)?;
    let lam = &chi.lambda;

    let mut r = DVector::zeros(layout.len());
    r[layout.r_t()] = h_end + cp.t + hp.t.dot(lam);
    let r_xt = g_x.tr_mul(&(&chi.p0 + hp.x_0.tr_mul(lam))) - &p_t + &cp.x_t + hp.x_t.tr_mul(lam);
    r.rows_mut(layout.r_xt().start, n).copy_from(&r_xt);
    r[layout.r_q()] = chi.q - cp.y_t;
    let r_u = hamiltonian_u(ocp, &chi.x0, &chi.p0, chi.q, &chi.u0, sigma)?;
    r.rows_mut(layout.r_u().start, layout.n_u).copy_from(&r_u);
    let periodic = ocp.g(&x_t, sigma)? - &chi.x0;
    r.rows_mut(layout.r_periodic().start, n).copy_from(&periodic);
    let h = eval_h(ocp, chi.t, &x_t, &chi.x0, sigma)?;
    r.rows_mut(layout.r_h().start, layout.n_h()).copy_from_slice(&h.values);

    let cost = eval_cost(ocp, chi.t, &x_t, y_t, sigma)?;
    Ok(IndirectEvaluation {
        residual: r,
        x_t,
        y_t,
        p_t,
        cost,
    })
}

/// The zero-function `r_sigma(chi)`.
pub fn indirect_residual<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    Ok(evaluate_indirect(ocp, chi, sigma, tol)?.residual)
}

/// Finite-difference Jacobians `(R, R_sigma)` where `R_sigma` has columns
/// for every entry of `[chi; sigma]` and `R` is its leading square block.
pub fn indirect_jacobian<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    chi: &IndirectDecision,
    sigma: &DVector<f64>,
    tol: &Tolerances,
    fd: &FdConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let layout = IndirectLayout::of(ocp);
    let n = layout.len();
    let mut v = chi.to_vector().as_slice().to_vec();
    v.extend(sigma.iter());
    let v = DVector::from_vec(v);
    let f = |w: &DVector<f64>| {
        let c = IndirectDecision::from_vector(&layout, &w.rows(0, n).into_owned())?;
        indirect_residual(ocp, &c, &w.rows(n, w.len() - n).into_owned(), tol)
    };
    let r_sigma = fd_jacobian(&f, &v, None, fd)?;
    let r = r_sigma.columns(0, n).into_owned();
    Ok((r, r_sigma))
}

/// Indirect zero-function with one component of `sigma` free, exposed to
/// continuation as `nu = (chi, sigma_k)`.
#[derive(Debug, Clone)]
pub struct IndirectProblem<'a, O: PeriodicOcp + ?Sized> {
    pub ocp: &'a O,
    /// Parameter vector; entry `param` is overwritten by `nu`'s last entry.
    pub sigma: DVector<f64>,
    pub param: usize,
    pub tol: Tolerances,
    pub fd: FdConfig,
}

impl<'a, O: PeriodicOcp + ?Sized> IndirectProblem<'a, O> {
    pub fn new(ocp: &'a O, sigma: DVector<f64>, param: usize) -> Result<Self> {
        check_len("indirect problem sigma", ocp.n_sigma(), sigma.len())?;
        if param >= sigma.len() {
            return Err(Error::Config(format!("parameter index {param} out of range")));
        }
        Ok(Self {
            ocp,
            sigma,
            param,
            tol: Tolerances::default(),
            fd: FdConfig::default(),
        })
    }

    pub fn layout(&self) -> IndirectLayout {
        IndirectLayout::of(self.ocp)
    }

    pub fn pack(&self, chi: &IndirectDecision, sigma_k: f64) -> DVector<f64> {
        let mut v = chi.to_vector().as_slice().to_vec();
        v.push(sigma_k);
        DVector::from_vec(v)
    }

    /// Splits `nu` into the decision and the full parameter vector.
    pub fn split(&self, nu: &DVector<f64>) -> Result<(IndirectDecision, DVector<f64>)> {
        let n = self.layout().len();
        check_len("continuation point", n + 1, nu.len())?;
        let chi = IndirectDecision::from_vector(&self.layout(), &nu.rows(0, n).into_owned())?;
        let mut sigma = self.sigma.clone();
        sigma[self.param] = nu[n];
        Ok((chi, sigma))
    }

    pub fn evaluate(&self, nu: &DVector<f64>) -> Result<IndirectEvaluation> {
        let (chi, sigma) = self.split(nu)?;
        evaluate_indirect(self.ocp, &chi, &sigma, &self.tol)
    }
}

impl<O: PeriodicOcp + ?Sized> ZeroFunction for IndirectProblem<'_, O> {
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
    use crate::compass_gait::CompassGait;

    fn sigma() -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.1])
    }

    fn state(x: [f64; 4], p: [f64; 4], q: f64) -> ExtendedState {
        ExtendedState {
            x: DVector::from_row_slice(&x),
            y: 0.0,
            p: DVector::from_row_slice(&p),
            q,
            u: DVector::zeros(1),
        }
    }

    #[test]
    fn layout_lengths() {
        let l = IndirectLayout::of(&CompassGait::default());
        assert_eq!(l.len(), 13);
        assert_eq!(l.lambda().end, 13);
        assert_eq!(l.r_h().end, 13);
        assert_eq!(l.r_periodic(), 7..11);
    }

    #[test]
    fn passive_hamiltonian_is_zero() {
        let cg = CompassGait::default();
        let w = state([0.1, -0.1, 0.3, 0.2], [0.0; 4], 3.0);
        assert_eq!(hamiltonian(&cg, &w, &sigma()).unwrap(), 0.0);
    }

    #[test]
    fn basis_costate_extracts_component() {
        let cg = CompassGait::default();
        let w = state([0.1, -0.1, 0.3, 0.2], [0.0, 0.0, 1.0, 0.0], 0.0);
        let f = cg.f(&w.x, &w.u, &sigma()).unwrap();
        assert_eq!(hamiltonian(&cg, &w, &sigma()).unwrap(), f[2]);
    }

    #[test]
    fn elimination_is_stationary_and_homogeneous() {
        let cg = CompassGait::default();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.4, -0.3]);
        let p = DVector::from_vec(vec![0.3, -0.2, 0.05, 0.7]);
        let u = eliminate_input(&cg, &x, &p, 2.5, &sigma()).unwrap();
        let hu = hamiltonian_u(&cg, &x, &p, 2.5, &u, &sigma()).unwrap();
        assert!(hu.amax() <= 1e-12);
        let u2 = eliminate_input(&cg, &x, &(&p * 2.0), 5.0, &sigma()).unwrap();
        assert!((u - u2).amax() < 1e-15);
        assert!(eliminate_input(&cg, &x, &DVector::zeros(4), 1.0, &sigma()).unwrap().amax() == 0.0);
        assert!(matches!(eliminate_input(&cg, &x, &p, 0.0, &sigma()), Err(Error::SingularElimination { .. })));
    }

    #[test]
    fn passive_costate_is_at_rest() {
        let cg = CompassGait::default();
        let w = state([0.1, -0.1, 0.3, 0.2], [0.0; 4], 4.0);
        let d = extended_rhs(&cg, &w, &sigma()).unwrap();
        assert_eq!(d.rows(5, 5).amax(), 0.0);
    }

    #[test]
    fn decision_round_trip() {
        let l = IndirectLayout::of(&CompassGait::default());
        let v = DVector::from_fn(l.len(), |i, _| i as f64 * 0.37 - 1.0);
        let d = IndirectDecision::from_vector(&l, &v).unwrap();
        assert_eq!(d.to_vector(), v);
    }
}
