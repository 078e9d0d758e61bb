//! Passive gaits and the multipliers that make them extremals.
//!
//! A passive gait solves the boundary conditions with `u = 0`. Along it the
//! cost costate `q` follows from the terminal cost, the costate `p` from the
//! stationarity condition differentiated along the flow, and the boundary
//! multipliers from the transversality condition by a pseudo-inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::indirect::{eliminate_input, evaluate_indirect, integrate_extended, IndirectDecision};
use crate::integrate::{integrate_fixed_horizon, integrate_terminal, Tolerances};
use crate::linalg::{damped_newton, determinant, pseudo_inverse, solve, NewtonConfig};
use crate::ocp::{eval_h, PeriodicOcp};

/// A zero-input periodic solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveGait {
    pub t_star: f64,
    pub x0_star: DVector<f64>,
    /// Full parameter vector at which the gait is passive.
    pub sigma: DVector<f64>,
    /// Index of the parameter solved for.
    pub free_param: usize,
    pub branch_tag: Option<String>,
    pub residual_norm: f64,
}

/// Starting point of the passive search.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveGuess {
    pub t: f64,
    pub x0: DVector<f64>,
    pub free_value: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PassiveConfig {
    /// Shortest admissible period.
    pub t_min: f64,
    pub newton: NewtonConfig,
    pub tol: Tolerances,
}

impl Default for PassiveConfig {
    fn default() -> Self {
        Self {
            t_min: 0.1,
            newton: NewtonConfig::default(),
            tol: Tolerances::default(),
        }
    }
}

fn passive_terminal<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x0: &DVector<f64>,
    horizon: f64,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<(DVector<f64>, f64)> {
    let n = ocp.n_x();
    let zero = DVector::zeros(ocp.n_u());
    let mut z0 = x0.as_slice().to_vec();
    z0.push(0.0);
    let (z, _) = integrate_terminal(
        |_t, z, dz| {
            let x = DVector::from_column_slice(&z[..n]);
            dz[..n].copy_from_slice(ocp.f(&x, &zero, sigma)?.as_slice());
            dz[n] = ocp.stage_cost(&x, &zero, sigma)?;
            Ok(())
        },
        &z0,
        horizon,
        tol,
    )?;
    Ok((DVector::from_column_slice(&z[..n]), z[n]))
}

/// Boundary residual `[g(x(T)) - x0; e; omega]` of the zero-input flow.
pub fn passive_residual<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    t: f64,
    x0: &DVector<f64>,
    sigma: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let (x_t, _) = passive_terminal(ocp, x0, t, sigma, tol)?;
    let periodic = ocp.g(&x_t, sigma)? - x0;
    let h = eval_h(ocp, t, &x_t, x0, sigma)?;
    let mut v = periodic.as_slice().to_vec();
    v.extend(h.values);
    Ok(DVector::from_vec(v))
}

/// Solves for `(T, x0, sigma[free])` such that the zero-input flow is
/// periodic and meets the boundary constraints.
pub fn find_passive_gait<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    sigma: &DVector<f64>,
    free: usize,
    guess: &PassiveGuess,
    branch_tag: Option<&str>,
    cfg: &PassiveConfig,
) -> Result<PassiveGait> {
    let n = ocp.n_x();
    check_len("passive sigma", ocp.n_sigma(), sigma.len())?;
    check_len("passive guess x0", n, guess.x0.len())?;
    if free >= sigma.len() {
        return Err(Error::Config(format!("free parameter index {free} out of range")));
    }
    if ocp.n_omega() != 1 {
        return Err(Error::Config("passive search needs exactly one operating condition".into()));
    }
    let fail = |iterations, best_residual, reason: String| Error::SeedFailure {
        iterations,
        best_residual,
        reason,
    };
    if !(guess.t >= cfg.t_min) {
        return Err(fail(0, f64::INFINITY, format!("guess period {} below T_min = {}", guess.t, cfg.t_min)));
    }
    let unpack = |v: &DVector<f64>| {
        let mut s = sigma.clone();
        s[free] = v[n + 1];
        (v[0], v.rows(1, n).into_owned(), s)
    };
    let f = |v: &DVector<f64>| {
        let (t, x0, s) = unpack(v);
        if !(t >= cfg.t_min) {
            return Err(Error::Domain(format!("period {t} below T_min")));
        }
        passive_residual(ocp, t, &x0, &s, &cfg.tol)
    };
    let mut v0 = vec![guess.t];
    v0.extend(guess.x0.iter());
    v0.push(guess.free_value);
    let out = damped_newton(&f, &DVector::from_vec(v0), &cfg.newton)
        .map_err(|e| fail(0, f64::INFINITY, e.to_string()))?;
    let best = out.residual.amax();
    if !out.converged {
        return Err(fail(out.iterations, best, "newton did not reach the tolerance".into()));
    }
    let (t, x0, s) = unpack(&out.x);
    if t < cfg.t_min {
        return Err(fail(out.iterations, best, format!("period {t} below T_min")));
    }
    Ok(PassiveGait {
        t_star: t,
        x0_star: x0,
        sigma: s,
        free_param: free,
        branch_tag: branch_tag.map(str::to_string),
        residual_norm: best,
    })
}

/// `q = dc/dy_T` along the passive gait.
pub fn reconstruct_q<O: PeriodicOcp + ?Sized>(ocp: &O, passive: &PassiveGait, tol: &Tolerances) -> Result<f64> {
    let (x_t, y_t) = passive_terminal(ocp, &passive.x0_star, passive.t_star, &passive.sigma, tol)?;
    Ok(ocp.c_partials(passive.t_star, &x_t, y_t, &passive.sigma)?.y_t)
}

/// Rows of the stationarity condition and its time derivatives, with the
/// selected square subsystem `A p = b q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityStack {
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    pub selected_rows: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Number of derivative levels stacked.
    pub depth: usize,
    /// `|det|` of the selected rows after scaling each to unit norm.
    pub scaled_det: f64,
}

/// Sampling used to differentiate along the passive flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityConfig {
    /// Chebyshev polynomial degree; the node count is one more.
    pub degree: usize,
    /// Half-width of the time window centred on the state.
    pub half_width: f64,
    pub tol: Tolerances,
    pub det_tol: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self {
            degree: 16,
            half_width: 0.3,
            tol: Tolerances {
                rel_tol: 1e-13,
                abs_tol: 1e-14,
                max_steps: 100_000,
            },
            det_tol: 1e-12,
        }
    }
}

/// Chebyshev–Gauss–Lobatto nodes `cos(j pi / N)` on `[-1, 1]` and the
/// spectral differentiation matrix.
pub fn chebyshev(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let nodes: Vec<f64> = (0..=n).map(|j| (j as f64 * std::f64::consts::PI / n as f64).cos()).collect();
    let c = |i: usize| if i == 0 || i == n { 2.0 } else { 1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[(i, j)] = c(i) / c(j) * sign / (nodes[i] - nodes[j]);
            }
        }
    }
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (nodes, d)
}

/// States of the zero-input flow through `x` at times `times`, which may be
/// negative.
fn passive_states<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x: &DVector<f64>,
    sigma: &DVector<f64>,
    times: &[f64],
    tol: &Tolerances,
) -> Result<Vec<DVector<f64>>> {
    let zero = DVector::zeros(ocp.n_u());
    let reach = times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let flow = |sign: f64| {
        integrate_fixed_horizon(
            |_t, z, dz| {
                let f = ocp.f(&DVector::from_column_slice(z), &zero, sigma)?;
                for (d, v) in dz.iter_mut().zip(f.iter()) {
                    *d = sign * v;
                }
                Ok(())
            },
            x.as_slice(),
            reach,
            tol,
        )
    };
    let fwd = flow(1.0)?;
    let bwd = flow(-1.0)?;
    times
        .iter()
        .map(|&t| if t >= 0.0 { fwd.eval(t) } else { bwd.eval(-t) })
        .collect()
}

/// Greedy row selection maximizing the volume spanned by unit-scaled rows.
/// Ties go to the lowest index.
fn select_rows(a: &DMatrix<f64>, count: usize) -> Vec<usize> {
    let rows: Vec<DVector<f64>> = (0..a.nrows())
        .map(|i| {
            let r = a.row(i).transpose();
            let n = r.norm();
            if n > 0.0 {
                r / n
            } else {
                r
            }
        })
        .collect();
    let mut residual = rows.clone();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in residual.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let n = r.norm();
            if best.map_or(true, |(_, b)| n > b) {
                best = Some((i, n));
            }
        }
        let Some((k, nk)) = best else { break };
        chosen.push(k);
        if nk > 0.0 {
            let e = &residual[k] / nk;
            for r in residual.iter_mut() {
                let c = r.dot(&e);
                *r -= &e * c;
            }
        }
    }
    chosen
}

/// Builds the stack at state `x` of a passive orbit with `depth` levels.
pub fn build_observability_stack<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x: &DVector<f64>,
    sigma: &DVector<f64>,
    depth: usize,
    cfg: &ObservabilityConfig,
) -> Result<ObservabilityStack> {
    let (n_x, n_u) = (ocp.n_x(), ocp.n_u());
    check_len("observability state", n_x, x.len())?;
    if depth == 0 {
        return Err(Error::Config("observability depth must be at least 1".into()));
    }
    let (nodes, d_unit) = chebyshev(cfg.degree);
    let times: Vec<f64> = nodes.iter().map(|s| s * cfg.half_width).collect();
    let d = d_unit / cfg.half_width;
    let center = cfg.degree / 2;
    let states = if cfg.degree % 2 == 0 {
        passive_states(ocp, x, sigma, &times, &cfg.tol)?
    } else {
        return Err(Error::Config("Chebyshev degree must be even".into()));
    };
    let zero = DVector::zeros(n_u);
    let m = states.len();
    let mut f_x = Vec::with_capacity(m);
    let mut l_x = Vec::with_capacity(m);
    // Flattened per node: a_k as n_u x n_x, b_k as n_u.
    let mut a_k: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut b_k: Vec<DVector<f64>> = Vec::with_capacity(m);
    for s in &states {
        f_x.push(ocp.f_x(s, &zero, sigma)?);
        l_x.push(ocp.l_x(s, &zero, sigma)?);
        a_k.push(ocp.f_u(s, &zero, sigma)?.transpose());
        b_k.push(ocp.l_u(s, &zero, sigma)?);
    }

    let mut a_tilde = DMatrix::zeros(depth * n_u, n_x);
    let mut b_tilde = DVector::zeros(depth * n_u);
    for level in 0..depth {
        a_tilde.view_mut((level * n_u, 0), (n_u, n_x)).copy_from(&a_k[center]);
        b_tilde.rows_mut(level * n_u, n_u).copy_from(&(-&b_k[center]));
        if level + 1 == depth {
            break;
        }
        let mut a_next = Vec::with_capacity(m);
        let mut b_next = Vec::with_capacity(m);
        for i in 0..m {
            let mut da = DMatrix::zeros(n_u, n_x);
            let mut db = DVector::zeros(n_u);
            for j in 0..m {
                da += &a_k[j] * d[(i, j)];
                db += &b_k[j] * d[(i, j)];
            }
            a_next.push(da - &a_k[i] * f_x[i].transpose());
            b_next.push(db - &a_k[i] * &l_x[i]);
        }
        a_k = a_next;
        b_k = b_next;
    }

    if a_tilde.nrows() < n_x {
        return Err(Error::Observability(format!(
            "{} rows at depth {depth}, need at least {n_x}",
            a_tilde.nrows()
        )));
    }
    let selected_rows = select_rows(&a_tilde, n_x);
    let a = DMatrix::from_fn(n_x, n_x, |i, j| a_tilde[(selected_rows[i], j)]);
    let b = DVector::from_fn(n_x, |i, _| b_tilde[selected_rows[i]]);
    let mut scaled = a.clone();
    for mut row in scaled.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let scaled_det = determinant(&scaled).abs();
    if !(scaled_det > cfg.det_tol) {
        return Err(Error::Observability(format!(
            "selected rows {selected_rows:?} have |det| = {scaled_det:.3e}"
        )));
    }
    Ok(ObservabilityStack {
        a_tilde,
        b_tilde,
        selected_rows,
        a,
        b,
        depth,
        scaled_det,
    })
}

/// Increases the depth until a nonsingular selection exists, up to
/// `2 n_x` levels.
pub fn auto_observability_stack<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    x: &DVector<f64>,
    sigma: &DVector<f64>,
    cfg: &ObservabilityConfig,
) -> Result<ObservabilityStack> {
    let n_x = ocp.n_x();
    let start = n_x.div_ceil(ocp.n_u());
    let mut last = None;
    for depth in start..=2 * n_x {
        match build_observability_stack(ocp, x, sigma, depth, cfg) {
            Ok(s) => return Ok(s),
            Err(e @ Error::Observability(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Observability("no admissible depth".into())))
}

/// `p = A^-1 b q`.
pub fn reconstruct_costate(stack: &ObservabilityStack, q: f64) -> Result<DVector<f64>> {
    solve(&stack.a, &(&stack.b * q)).map_err(|e| Error::Observability(e.to_string()))
}

/// Boundary multipliers with the rank of the matrix they were solved with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReconstruction {
    pub lambda: DVector<f64>,
    pub rank: usize,
    pub full_rank: bool,
}

/// `lambda = H^+ (p_T - g_x' p0 - c_x')` with `H = g_x' h_x0' + h_xT'`.
pub fn reconstruct_lambda<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    passive: &PassiveGait,
    p0: &DVector<f64>,
    p_t: &DVector<f64>,
    tol: &Tolerances,
) -> Result<LambdaReconstruction> {
    let (x_t, y_t) = passive_terminal(ocp, &passive.x0_star, passive.t_star, &passive.sigma, tol)?;
    let g_x = ocp.g_x(&x_t, &passive.sigma)?;
    let hp = ocp.h_partials(passive.t_star, &x_t, &passive.x0_star, &passive.sigma)?;
    let cp = ocp.c_partials(passive.t_star, &x_t, y_t, &passive.sigma)?;
    let h = g_x.tr_mul(&hp.x_0.transpose()) + hp.x_t.transpose();
    let rhs = p_t - g_x.tr_mul(p0) - cp.x_t;
    Ok(lambda_from(&h, &rhs))
}

/// Pseudo-inverse solve with rank tolerance `1e-10 sigma_max`.
pub fn lambda_from(h: &DMatrix<f64>, rhs: &DVector<f64>) -> LambdaReconstruction {
    let (pinv, rank) = pseudo_inverse(h, 1e-10);
    LambdaReconstruction {
        lambda: pinv * rhs,
        rank,
        full_rank: rank == h.ncols().min(h.nrows()),
    }
}

/// Diagnostics of the reconstruction behind a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub q: f64,
    pub p0: DVector<f64>,
    /// Costate reconstructed from the stack at `x(T)`.
    pub p_t_reconstructed: DVector<f64>,
    /// Costate obtained by integrating from `p0`.
    pub p_t_propagated: DVector<f64>,
    pub costate_mismatch: f64,
    pub selected_rows_start: Vec<usize>,
    pub selected_rows_end: Vec<usize>,
    pub lambda_rank: usize,
    pub lambda_full_rank: bool,
    pub cost: f64,
}

/// Initial point of the indirect continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub decision: IndirectDecision,
    pub sigma: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub diagnostics: SeedDiagnostics,
}

/// Assembles `chi = (T*, x0*, p0, q, u0, lambda)` from a passive gait and
/// checks it against the indirect zero-function.
pub fn seed_from_passive<O: PeriodicOcp + ?Sized>(
    ocp: &O,
    passive: &PassiveGait,
    tol: &Tolerances,
    obs: &ObservabilityConfig,
    residual_tol: f64,
) -> Result<Seed> {
    let sigma = &passive.sigma;
    let q = reconstruct_q(ocp, passive, tol)?;
    let (x_t, _) = passive_terminal(ocp, &passive.x0_star, passive.t_star, sigma, tol)?;
    let stack0 = auto_observability_stack(ocp, &passive.x0_star, sigma, obs)?;
    let stack_t = auto_observability_stack(ocp, &x_t, sigma, obs)?;
    let p0 = reconstruct_costate(&stack0, q)?;
    let p_t = reconstruct_costate(&stack_t, q)?;
    let traj = integrate_extended(ocp, &passive.x0_star, &p0, q, passive.t_star, sigma, tol)?;
    let end = traj.state(ocp, passive.t_star)?;
    let lam = reconstruct_lambda(ocp, passive, &p0, &p_t, tol)?;
    let u0 = eliminate_input(ocp, &passive.x0_star, &p0, q, sigma)?;
    let decision = IndirectDecision {
        t: passive.t_star,
        x0: passive.x0_star.clone(),
        p0: p0.clone(),
        q,
        u0,
        lambda: lam.lambda.clone(),
    };
    let eval = evaluate_indirect(ocp, &decision, sigma, tol)?;
    let norm = eval.residual.amax();
    if !(norm <= residual_tol) {
        return Err(Error::SeedInconsistency {
            norm,
            residual: eval.residual.as_slice().to_vec(),
        });
    }
    Ok(Seed {
        diagnostics: SeedDiagnostics {
            q,
            p0,
            costate_mismatch: (&p_t - &end.p).amax(),
            p_t_reconstructed: p_t,
            p_t_propagated: end.p,
            selected_rows_start: stack0.selected_rows,
            selected_rows_end: stack_t.selected_rows,
            lambda_rank: lam.rank,
            lambda_full_rank: lam.full_rank,
            cost: eval.cost,
        },
        decision,
        sigma: sigma.clone(),
        residual: eval.residual,
        residual_norm: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(a: DMatrix<f64>, b: DVector<f64>) -> ObservabilityStack {
        ObservabilityStack {
            a_tilde: a.clone(),
            b_tilde: b.clone(),
            selected_rows: (0..a.nrows()).collect(),
            a,
            b,
            depth: 1,
            scaled_det: 1.0,
        }
    }

    #[test]
    fn identity_stack_scales_b() {
        let s = stack(DMatrix::identity(4, 4), DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let p = reconstruct_costate(&s, 2.0).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(reconstruct_costate(&s, 0.0).unwrap().amax(), 0.0);
    }

    #[test]
    fn zero_b_gives_zero_costate() {
        let s = stack(DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 + if i == j { 5.0 } else { 0.0 }), DVector::zeros(3));
        assert_eq!(reconstruct_costate(&s, 3.7).unwrap().amax(), 0.0);
    }

    #[test]
    fn padded_identity_pseudo_inverse() {
        let mut h = DMatrix::zeros(4, 2);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        let out = lambda_from(&h, &DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        assert_eq!(out.lambda.as_slice(), &[1.0, 0.0]);
        assert!(out.full_rank);
        let zero = lambda_from(&h, &DVector::zeros(4));
        assert_eq!(zero.lambda.amax(), 0.0);
    }

    #[test]
    fn chebyshev_differentiates_cubic_exactly() {
        let (x, d) = chebyshev(8);
        let f = DVector::from_iterator(9, x.iter().map(|t| t * t * t - 2.0 * t));
        let df = &d * f;
        for (i, t) in x.iter().enumerate() {
            assert!((df[i] - (3.0 * t * t - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_selection_prefers_independent_rows() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        assert_eq!(select_rows(&a, 2), vec![0, 2]);
    }
}
