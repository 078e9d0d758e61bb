//! Dense linear-algebra helpers shared by the solvers: finite-difference
//! Jacobians, null vectors, pseudo-inverses and a damped Newton iteration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-difference scheme used for outer Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FdScheme {
    #[default]
    Forward,
    Central,
}

/// Settings for finite-difference Jacobians of residual functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Absolute perturbation applied to each coordinate.
    pub step: f64,
    pub scheme: FdScheme,
    /// Evaluate columns on the rayon pool.
    pub parallel: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-9,
            scheme: FdScheme::Forward,
            parallel: true,
        }
    }
}

/// Jacobian of `f` at `x` by finite differences. `f0` may carry an already
/// computed `f(x)`, which the forward scheme reuses.
pub fn fd_jacobian<F>(f: &F, x: &DVector<f64>, f0: Option<&DVector<f64>>, cfg: &FdConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let base = match (cfg.scheme, f0) {
        (FdScheme::Forward, Some(v)) => Some(v.clone()),
        (FdScheme::Forward, None) => Some(f(x)?),
        (FdScheme::Central, _) => None,
    };
    let h = cfg.step;
    let column = |j: usize| -> Result<DVector<f64>> {
        let eval = |delta: f64| {
            let mut xp = x.clone();
            xp[j] += delta;
            f(&xp)
        };
        let col = match &base {
            Some(b) => (eval(h)? - b) / h,
            None => (eval(h)? - eval(-h)?) / (2.0 * h),
        };
        Ok(col)
    };
    let wrap = |j: usize| {
        column(j).map_err(|e| Error::JacobianColumn {
            column: j,
            source: Box::new(e),
        })
    };
    let cols: Vec<DVector<f64>> = if cfg.parallel {
        (0..x.len()).into_par_iter().map(wrap).collect::<Result<_>>()?
    } else {
        (0..x.len()).map(wrap).collect::<Result<_>>()?
    };
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

/// Solves the square system `a x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::LinearSolve(format!(
            "shape {}x{} against rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::LinearSolve("matrix is singular".into()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::LinearSolve("solution is not finite".into()))
    }
}

pub fn determinant(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant()
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// 2-norm condition number; infinite for rank-deficient matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis of the null space of `a` (columns), using the SVD of
/// `a` padded to a square matrix. Singular values below `rtol * s_max`
/// count as zero.
pub fn null_space(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let size = m.max(n);
    let mut padded = DMatrix::zeros(size, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let cut = rtol * s_max.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..n).filter(|&i| s[i] <= cut).collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Unit vector spanning the null space of a full-row-rank `N x (N+1)`
/// matrix, together with the ratio of the smallest nonzero singular value
/// to the largest (a measure of distance from rank deficiency).
pub fn null_vector(a: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let (m, n) = a.shape();
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (m.min(n), n)).copy_from(&a.rows(0, m.min(n)));
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let smallest = order[n - 1];
    let gap = if n >= 2 && s[order[0]] > 0.0 {
        s[order[n - 2]] / s[order[0]]
    } else {
        0.0
    };
    let v = v_t.row(smallest).transpose();
    (v.normalize(), gap)
}

/// Moore–Penrose pseudo-inverse with relative rank tolerance. Returns the
/// pseudo-inverse and the numerical rank.
pub fn pseudo_inverse(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = rtol * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut && s > 0.0).count();
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut pinv = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            pinv += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    (pinv, rank)
}

/// Settings for [`damped_newton`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub fd: FdConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 50,
            max_halvings: 8,
            fd: FdConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton iteration on a square system with a finite-difference
/// Jacobian; steps are halved until the infinity norm of the residual
/// decreases.
pub fn damped_newton<F>(f: &F, x0: &DVector<f64>, cfg: &NewtonConfig) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let mut x = x0.clone();
    let mut r = f(&x)?;
    let mut norm = r.amax();
    for it in 0..cfg.max_iterations {
        if norm <= cfg.tol {
            return Ok(NewtonOutcome {
                x,
                residual: r,
                iterations: it,
                converged: true,
            });
        }
        let jac = fd_jacobian(f, &x, Some(&r), &cfg.fd)?;
        let dx = solve(&jac, &(-&r))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = f(&trial) {
                let nt = rt.amax();
                if nt.is_finite() && nt < norm {
                    x = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(NewtonOutcome {
                x,
                residual: r,
                iterations: it + 1,
                converged: false,
            });
        }
    }
    let converged = norm <= cfg.tol;
    Ok(NewtonOutcome {
        x,
        residual: r,
        iterations: cfg.max_iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_vector_of_identity_block_is_last_axis() {
        let mut a = DMatrix::zeros(3, 4);
        a.view_mut((0, 0), (3, 3)).fill_with_identity();
        let (v, gap) = null_vector(&a);
        assert!((v[3].abs() - 1.0).abs() < 1e-14);
        assert!(gap > 0.5);
    }

    #[test]
    fn pseudo_inverse_of_tall_identity() {
        let mut a = DMatrix::zeros(4, 2);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let (p, rank) = pseudo_inverse(&a, 1e-10);
        assert_eq!(rank, 2);
        assert_eq!(p.shape(), (2, 4));
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15 && (p[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_space_of_row() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d = null_space(&a, 1e-10);
        assert_eq!(d.shape(), (2, 1));
        assert!((d[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn newton_finds_square_root() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] * x[0] - 2.0]));
        let out = damped_newton(&f, &DVector::from_vec(vec![1.0]), &NewtonConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn central_and_forward_jacobians_agree_on_smooth_map() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0].sin() * x[1], x[1].exp()]));
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let fw = fd_jacobian(&f, &x, None, &FdConfig { step: 1e-7, ..Default::default() }).unwrap();
        let ce = fd_jacobian(&f, &x, None, &FdConfig { step: 1e-6, scheme: FdScheme::Central, parallel: false }).unwrap();
        assert!((fw - ce).amax() < 1e-6);
    }
}
