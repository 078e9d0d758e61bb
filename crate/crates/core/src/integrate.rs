//! Adaptive initial-value integration.
//!
//! A Dormand–Prince 5(4) pair with the free fourth-order continuous
//! extension and a PI step-size controller. The same stepping engine backs
//! plain integration, dense trajectories and forward sensitivities.
//!
//! Right-hand sides are `FnMut(t, z, dz) -> Result<()>` closures writing
//! into `dz`; any non-finite derivative aborts with [`Error::Divergence`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local error tolerances and the step budget of one integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-10,
            max_steps: 100_000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Accepted and rejected step counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer, Nørsett & Wanner).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Data handed to the step observer after each accepted step.
struct AcceptedStep<'a> {
    t: f64,
    h: f64,
    y_old: &'a [f64],
    y_new: &'a [f64],
    dense: Option<&'a [f64]>,
}

fn eval_rhs<F>(rhs: &mut F, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    rhs(t, y, dy)?;
    if dy.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

/// Core stepping loop. Calls `observer` after every accepted step and
/// returns the terminal state.
fn dopri5<F, O>(
    mut rhs: F,
    z0: &[f64],
    horizon: f64,
    tol: &Tolerances,
    want_dense: bool,
    mut observer: O,
) -> Result<(Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(AcceptedStep<'_>),
{
    tol.validate()?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("integration horizon {horizon} must be finite and non-negative")));
    }
    let n = z0.len();
    let mut y = z0.to_vec();
    let mut stats = StepStats::default();
    if horizon == 0.0 {
        return Ok((y, stats));
    }

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut dense = if want_dense { vec![0.0; 5 * n] } else { Vec::new() };

    let mut t = 0.0;
    eval_rhs(&mut rhs, t, &y, &mut k1)?;
    let mut h = initial_step(&mut rhs, &y, &k1, horizon, tol, &mut ys, &mut k2)?;

    let expo1 = 0.2 - BETA * 0.75;
    let mut fac_old: f64 = 1e-4;
    let mut last = false;
    let mut reject = false;

    loop {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(Error::NonConvergence {
                t,
                max_steps: tol.max_steps,
            });
        }
        if 0.1 * h.abs() <= t.abs() * f64::EPSILON {
            return Err(Error::NonConvergence {
                t,
                max_steps: tol.max_steps,
            });
        }
        if t + 1.01 * h >= horizon {
            h = horizon - t;
            last = true;
        }

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        eval_rhs(&mut rhs, t + C2 * h, &ys, &mut k2)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        eval_rhs(&mut rhs, t + C3 * h, &ys, &mut k3)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        eval_rhs(&mut rhs, t + C4 * h, &ys, &mut k4)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        eval_rhs(&mut rhs, t + C5 * h, &ys, &mut k5)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { horizon } else { t + h };
        eval_rhs(&mut rhs, t_new, &ys, &mut k6)?;
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        eval_rhs(&mut rhs, t_new, &y1, &mut k7)?;

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = tol.abs_tol + tol.rel_tol * y[i].abs().max(y1[i].abs());
            err += (e / sk) * (e / sk);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Divergence { t });
        }

        let fac11 = err.powf(expo1);
        let fac = (fac11 / fac_old.powf(BETA)).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN) / SAFETY;
        let fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_new = h / fac;

        if err <= 1.0 {
            stats.accepted += 1;
            fac_old = err.max(1e-4);
            if want_dense {
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    dense[i] = y[i];
                    dense[n + i] = ydiff;
                    dense[2 * n + i] = bspl;
                    dense[3 * n + i] = ydiff - h * k7[i] - bspl;
                    dense[4 * n + i] =
                        h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
            }
            observer(AcceptedStep {
                t,
                h,
                y_old: &y,
                y_new: &y1,
                dense: want_dense.then_some(dense.as_slice()),
            });
            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut y1);
            t = t_new;
            if last {
                return Ok((y, stats));
            }
            if h_new.abs() > horizon {
                h_new = horizon;
            }
            if reject {
                h_new = h_new.min(h);
            }
            reject = false;
        } else {
            h_new = h / (1.0 / FAC_MIN).min(fac11 / SAFETY);
            reject = true;
            last = false;
            if stats.accepted >= 1 {
                stats.rejected += 1;
            }
        }
        h = h_new;
    }
}

fn initial_step<F>(
    rhs: &mut F,
    y0: &[f64],
    f0: &[f64],
    h_max: f64,
    tol: &Tolerances,
    y1: &mut [f64],
    f1: &mut [f64],
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = tol.abs_tol + tol.rel_tol * y0[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y0[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(h_max);
    for i in 0..n {
        y1[i] = y0[i] + h * f0[i];
    }
    eval_rhs(rhs, h, y1, f1)?;
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = tol.abs_tol + tol.rel_tol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(h_max))
}

/// Terminal state of an integration without dense output.
pub fn integrate_terminal<F>(rhs: F, z0: &[f64], horizon: f64, tol: &Tolerances) -> Result<(Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    dopri5(rhs, z0, horizon, tol, false, |_| {})
}

/// Piecewise-polynomial solution on `[0, T]`.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    coeffs: Vec<f64>,
    stats: StepStats,
}

impl DenseTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one time")
    }

    /// Step endpoints `0 = t_0 < ... < t_K = T`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// State stored at breakpoint `k`.
    pub fn state_at_breakpoint(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial_state(&self) -> &[f64] {
        self.state_at_breakpoint(0)
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state_at_breakpoint(self.times.len() - 1)
    }

    /// Interpolated state at `t`; breakpoints return the stored step values.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
        }
        let k = self.times.partition_point(|&s| s <= t);
        // `k` is the number of breakpoints <= t, so times[k - 1] <= t.
        let idx = k - 1;
        if self.times[idx] == t {
            return Ok(DVector::from_column_slice(self.state_at_breakpoint(idx)));
        }
        let n = self.dim;
        let c = &self.coeffs[idx * 5 * n..(idx + 1) * 5 * n];
        let t0 = self.times[idx];
        let h = self.times[idx + 1] - t0;
        let s = (t - t0) / h;
        let s1 = 1.0 - s;
        Ok(DVector::from_fn(n, |i, _| {
            c[i] + s * (c[n + i] + s1 * (c[2 * n + i] + s * (c[3 * n + i] + s1 * c[4 * n + i])))
        }))
    }
}

/// Integrates `rhs` from `z0` over `[0, horizon]` and keeps dense output.
pub fn integrate_fixed_horizon<F>(rhs: F, z0: &[f64], horizon: f64, tol: &Tolerances) -> Result<DenseTrajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = z0.len();
    let mut times = vec![0.0];
    let mut states = z0.to_vec();
    let mut coeffs = Vec::new();
    let (_, stats) = dopri5(rhs, z0, horizon, tol, true, |step| {
        debug_assert_eq!(step.y_old.len(), n);
        let t_end = if (step.t + step.h - horizon).abs() <= 4.0 * f64::EPSILON * horizon {
            horizon
        } else {
            step.t + step.h
        };
        times.push(t_end);
        states.extend_from_slice(step.y_new);
        coeffs.extend_from_slice(step.dense.expect("dense output requested"));
    })?;
    if let Some(t) = times.last_mut() {
        *t = horizon;
    }
    Ok(DenseTrajectory {
        dim: n,
        times,
        states,
        coeffs,
        stats,
    })
}

/// Terminal state and forward sensitivities of an integration.
#[derive(Debug, Clone)]
pub struct Sensitivities {
    pub z_t: DVector<f64>,
    /// `dz(T)/dz0`.
    pub s_z0: DMatrix<f64>,
    /// `dz(T)/dtheta`.
    pub s_theta: DMatrix<f64>,
    /// `dz(T)/dT`, i.e. the right-hand side at the terminal point.
    pub s_t: DVector<f64>,
    pub stats: StepStats,
}

/// Integrates `z' = rhs(t, z, theta)` together with its variational
/// equations. `jacobians` returns `(d rhs/dz, d rhs/dtheta)`.
///
/// Error control covers the sensitivities as well as the state.
pub fn integrate_with_sensitivities<F, J>(
    mut rhs: F,
    mut jacobians: J,
    z0: &[f64],
    theta: &[f64],
    horizon: f64,
    tol: &Tolerances,
) -> Result<Sensitivities>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]) -> Result<()>,
    J: FnMut(f64, &[f64], &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
{
    let n = z0.len();
    let m = theta.len();
    let aug_len = n + n * n + n * m;
    let mut aug0 = vec![0.0; aug_len];
    aug0[..n].copy_from_slice(z0);
    for i in 0..n {
        aug0[n + i * n + i] = 1.0;
    }

    let aug_rhs = |t: f64, w: &[f64], dw: &mut [f64]| -> Result<()> {
        let z = &w[..n];
        rhs(t, z, theta, &mut dw[..n])?;
        let (jz, jt) = jacobians(t, z, theta)?;
        if jz.shape() != (n, n) || jt.shape() != (n, m) {
            return Err(Error::Dimension {
                context: "sensitivity jacobians",
                expected: n * (n + m),
                got: jz.len() + jt.len(),
            });
        }
        // Column-major blocks: S_z0 then S_theta.
        let cols = n + m;
        for c in 0..cols {
            let s = &w[n + c * n..n + (c + 1) * n];
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += jz[(i, k)] * s[k];
                }
                if c >= n {
                    acc += jt[(i, c - n)];
                }
                dw[n + c * n + i] = acc;
            }
        }
        Ok(())
    };

    let (w_t, stats) = dopri5(aug_rhs, &aug0, horizon, tol, false, |_| {})?;
    let z_t = DVector::from_column_slice(&w_t[..n]);
    let s_z0 = DMatrix::from_column_slice(n, n, &w_t[n..n + n * n]);
    let s_theta = DMatrix::from_column_slice(n, m, &w_t[n + n * n..]);
    let mut s_t = vec![0.0; n];
    rhs(horizon, &w_t[..n], theta, &mut s_t)?;
    Ok(Sensitivities {
        z_t,
        s_z0,
        s_theta,
        s_t: DVector::from_vec(s_t),
        stats,
    })
}
