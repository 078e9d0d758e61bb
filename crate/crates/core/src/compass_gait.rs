//! The compass-gait walker.
//!
//! Two rigid legs joined at a point-mass hip with a torque actuator between
//! them. State order is `(theta_sw, theta_st, dtheta_sw, dtheta_st)`, with
//! angles measured from the world vertical. The parameter vector is
//! `sigma = (gamma, v_avg)`: slope angle in radians and average speed. The
//! step length `2 sin(theta_sw(T) + gamma)` is measured in leg lengths, so
//! it carries an implicit factor `l_o`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ocp::{BoundaryPartials, CostPartials, PeriodicOcp};

/// Index of the slope angle in `sigma`.
pub const GAMMA: usize = 0;
/// Index of the average speed in `sigma`.
pub const V_AVG: usize = 1;

/// Physical constants in normalized units (time unit `sqrt(l_o / g)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    /// Total mass.
    pub m: f64,
    /// Hip mass.
    pub m_h: f64,
    /// Mass of one leg.
    pub m_l: f64,
    /// Foot to leg center of mass.
    pub a: f64,
    /// Leg center of mass to hip.
    pub b: f64,
    pub l_o: f64,
    pub g: f64,
    /// Torque cost weight.
    pub k: f64,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            m_h: 0.5,
            m_l: 0.25,
            a: 0.5,
            b: 0.5,
            l_o: 1.0,
            g: 1.0,
            k: 1.0,
        }
    }
}

impl WalkerParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.m, self.m_h, self.m_l, self.a, self.b, self.l_o, self.g, self.k];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("walker parameters must be positive and finite".into()));
        }
        if (self.m_h + 2.0 * self.m_l - self.m).abs() > 1e-12 * self.m {
            return Err(Error::Config("m_h + 2 m_l must equal m".into()));
        }
        if (self.a + self.b - self.l_o).abs() > 1e-12 * self.l_o {
            return Err(Error::Config("a + b must equal l_o".into()));
        }
        Ok(())
    }
}

/// How the diagonal of the mass matrix is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMatrixReading {
    /// `M11 = m_l b^2`, `M22 = (m_h + m_l) l^2 + m_l a^2`.
    #[default]
    LegMass,
    /// `M11 = m_h b^2`, `M22 = (m_h + m_l) l^2 + m a^2`.
    Verbatim,
}

/// Angles and rates of the two legs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub theta_sw: f64,
    pub theta_st: f64,
    pub dtheta_sw: f64,
    pub dtheta_st: f64,
}

impl WalkerState {
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        check_len("walker state", 4, x.len())?;
        Ok(Self {
            theta_sw: x[0],
            theta_st: x[1],
            dtheta_sw: x[2],
            dtheta_st: x[3],
        })
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.theta_sw, self.theta_st, self.dtheta_sw, self.dtheta_st])
    }

    /// Inter-leg angle `theta_st - theta_sw`.
    pub fn alpha(&self) -> f64 {
        self.theta_st - self.theta_sw
    }

    fn rates(&self) -> Vector2<f64> {
        Vector2::new(self.dtheta_sw, self.dtheta_st)
    }
}

/// Known passive gaits at `v_avg = 0.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Short,
    Long,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Short => "short",
            Branch::Long => "long",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Branch::Short),
            "long" => Ok(Branch::Long),
            other => Err(Error::Config(format!("unknown branch '{other}' (short|long)"))),
        }
    }
}

/// Starting guess `(T, x0, gamma)` for the passive gait search at
/// `v_avg = 0.1`, accurate to about five digits.
pub fn passive_guess(branch: Branch) -> (f64, [f64; 4], f64) {
    match branch {
        Branch::Short => (1.94902, [-0.10144, 0.09377, -0.16339, -0.16474], 0.219877f64.to_radians()),
        Branch::Long => (2.15869, [-0.11157, 0.10472, -0.15579, -0.17228], 0.196331f64.to_radians()),
    }
}

const DET_TOL: f64 = 1e-12;

/// The compass-gait walker as a periodic optimal control problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompassGait {
    pub params: WalkerParams,
    pub reading: MassMatrixReading,
}

impl CompassGait {
    pub fn new(params: WalkerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            reading: MassMatrixReading::default(),
        })
    }

    pub fn with_reading(mut self, reading: MassMatrixReading) -> Self {
        self.reading = reading;
        self
    }

    fn kp(&self) -> f64 {
        self.params.m_l * self.params.l_o * self.params.b
    }

    fn gravity_st(&self) -> f64 {
        let p = &self.params;
        (p.m_h * p.l_o + p.m_l * p.a + p.m_l * p.l_o) * p.g
    }

    pub fn mass_matrix(&self, alpha: f64) -> Matrix2<f64> {
        let p = &self.params;
        let (m11, m22_tail) = match self.reading {
            MassMatrixReading::LegMass => (p.m_l * p.b * p.b, p.m_l * p.a * p.a),
            MassMatrixReading::Verbatim => (p.m_h * p.b * p.b, p.m * p.a * p.a),
        };
        let off = -self.kp() * alpha.cos();
        Matrix2::new(m11, off, off, (p.m_h + p.m_l) * p.l_o * p.l_o + m22_tail)
    }

    /// Coriolis and centrifugal force `C(q, dq) dq`.
    pub fn coriolis(&self, s: &WalkerState) -> Vector2<f64> {
        let ks = self.kp() * s.alpha().sin();
        Vector2::new(ks * s.dtheta_st * s.dtheta_st, -ks * s.dtheta_sw * s.dtheta_sw)
    }

    pub fn gravity(&self, s: &WalkerState) -> Vector2<f64> {
        let p = &self.params;
        Vector2::new(p.m_l * p.b * p.g * s.theta_sw.sin(), -self.gravity_st() * s.theta_st.sin())
    }

    /// Input direction of the hip torque.
    pub fn input_matrix(&self) -> Vector2<f64> {
        Vector2::new(-1.0, 1.0)
    }

    fn inverse_mass(&self, alpha: f64) -> Result<Matrix2<f64>> {
        let m = self.mass_matrix(alpha);
        let det = m.determinant();
        if det.abs() < DET_TOL {
            return Err(Error::SingularMassMatrix { det: det.abs() });
        }
        m.try_inverse().ok_or(Error::SingularMassMatrix { det: det.abs() })
    }

    /// Angular accelerations.
    pub fn accelerations(&self, s: &WalkerState, u: f64) -> Result<Vector2<f64>> {
        let m_inv = self.inverse_mass(s.alpha())?;
        Ok(m_inv * (self.input_matrix() * u - self.coriolis(s) - self.gravity(s)))
    }

    /// Pre- and post-impact momentum matrices `(Q-, Q+)`.
    pub fn impact_matrices(&self, alpha: f64) -> (Matrix2<f64>, Matrix2<f64>) {
        let p = &self.params;
        let (l, a, b) = (p.l_o, p.a, p.b);
        let q_minus = Matrix2::new(0.0, (p.m_h * l * l + 2.0 * p.m_l * a * l) * alpha.cos(), 0.0, 0.0)
            - p.m_l * a * b * Matrix2::new(1.0, 1.0, 0.0, 1.0);
        let q_plus = Matrix2::new(p.m_l * b * b, p.m_l * l * l + p.m_l * a * a + p.m_h * l * l, p.m_l * b * b, 0.0)
            - p.m_l * b * l * alpha.cos() * Matrix2::new(1.0, 1.0, 0.0, 1.0);
        (q_minus, q_plus)
    }

    fn impact_velocity(&self, s: &WalkerState) -> Result<(Vector2<f64>, Matrix2<f64>, Matrix2<f64>)> {
        let (q_minus, q_plus) = self.impact_matrices(s.alpha());
        let det = q_plus.determinant();
        if det.abs() < DET_TOL {
            return Err(Error::SingularImpact { det: det.abs() });
        }
        let qp_inv = q_plus.try_inverse().ok_or(Error::SingularImpact { det: det.abs() })?;
        Ok((qp_inv * q_minus * s.rates(), qp_inv, q_minus))
    }

    /// Mechanical energy `(kinetic, potential)`.
    pub fn energy(&self, x: &[f64]) -> Result<(f64, f64)> {
        let s = WalkerState::from_slice(x)?;
        let p = &self.params;
        let v = s.rates();
        let kinetic = 0.5 * v.dot(&(self.mass_matrix(s.alpha()) * v));
        let potential = self.gravity_st() * s.theta_st.cos() - p.m_l * p.b * p.g * s.theta_sw.cos();
        Ok((kinetic, potential))
    }

    /// Residual `Q+ dq+ - Q- dq-` of angular momentum conservation.
    pub fn momentum_residual(&self, pre: &[f64], post: &[f64]) -> Result<Vector2<f64>> {
        let s = WalkerState::from_slice(pre)?;
        let post = WalkerState::from_slice(post)?;
        let (q_minus, q_plus) = self.impact_matrices(s.alpha());
        Ok(q_plus * post.rates() - q_minus * s.rates())
    }

    fn sigma_parts(sigma: &DVector<f64>) -> Result<(f64, f64)> {
        check_len("compass gait sigma", 2, sigma.len())?;
        Ok((sigma[GAMMA], sigma[V_AVG]))
    }
}

impl PeriodicOcp for CompassGait {
    fn n_x(&self) -> usize {
        4
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_omega(&self) -> usize {
        1
    }
    fn n_sigma(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "compass-gait"
    }

    fn sigma_names(&self) -> Vec<String> {
        vec!["gamma".into(), "v_avg".into()]
    }

    fn f(&self, x: &DVector<f64>, u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("f: u", 1, u.len())?;
        let s = WalkerState::from_slice(x.as_slice())?;
        let acc = self.accelerations(&s, u[0])?;
        Ok(DVector::from_vec(vec![s.dtheta_sw, s.dtheta_st, acc[0], acc[1]]))
    }

    fn g(&self, x: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DVector<f64>> {
        let s = WalkerState::from_slice(x.as_slice())?;
        let (v, _, _) = self.impact_velocity(&s)?;
        Ok(DVector::from_vec(vec![s.theta_st, s.theta_sw, v[0], v[1]]))
    }

    fn event(&self, _t: f64, x_t: &DVector<f64>, _x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<f64> {
        check_len("e: x(T)", 4, x_t.len())?;
        let (gamma, _) = Self::sigma_parts(sigma)?;
        Ok(x_t[0] + x_t[1] + 2.0 * gamma)
    }

    fn operating(&self, t: f64, x_t: &DVector<f64>, _x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("omega: x(T)", 4, x_t.len())?;
        let (gamma, v_avg) = Self::sigma_parts(sigma)?;
        Ok(DVector::from_element(1, 2.0 * (x_t[0] + gamma).sin() - v_avg * t))
    }

    fn stage_cost(&self, _x: &DVector<f64>, u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<f64> {
        check_len("l: u", 1, u.len())?;
        Ok(0.5 * self.params.k * u[0] * u[0])
    }

    fn terminal_cost(&self, t: f64, _x_t: &DVector<f64>, y_t: f64, sigma: &DVector<f64>) -> Result<f64> {
        let (_, v_avg) = Self::sigma_parts(sigma)?;
        let denom = self.params.m * self.params.g * v_avg * t;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SingularCost(format!("m g v_avg T = {denom}")));
        }
        Ok(y_t / denom)
    }

    fn input_weight(&self, _sigma: &DVector<f64>) -> Option<f64> {
        Some(self.params.k)
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-0.6, 0.6), (-0.6, 0.6), (-1.0, 1.0), (-1.0, 1.0)]
    }

    fn nominal_sigma(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.003, 0.1])
    }

    fn f_x(&self, x: &DVector<f64>, u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("f_x: u", 1, u.len())?;
        let s = WalkerState::from_slice(x.as_slice())?;
        let alpha = s.alpha();
        let m_inv = self.inverse_mass(alpha)?;
        let acc = self.accelerations(&s, u[0])?;
        let kp = self.kp();
        let (sa, ca) = alpha.sin_cos();
        let p = &self.params;
        let (wsw, wst) = (s.dtheta_sw, s.dtheta_st);

        // d(B u - C dq - G)/d(state) and dM/dalpha.
        let dr_sw = Vector2::new(kp * ca * wst * wst - p.m_l * p.b * p.g * s.theta_sw.cos(), -kp * ca * wsw * wsw);
        let dr_st = Vector2::new(-kp * ca * wst * wst, kp * ca * wsw * wsw + self.gravity_st() * s.theta_st.cos());
        let dr_dsw = Vector2::new(0.0, 2.0 * kp * sa * wsw);
        let dr_dst = Vector2::new(-2.0 * kp * sa * wst, 0.0);
        let dm_da = Matrix2::new(0.0, kp * sa, kp * sa, 0.0);

        let d_sw = m_inv * (dr_sw + dm_da * acc);
        let d_st = m_inv * (dr_st - dm_da * acc);
        let d_dsw = m_inv * dr_dsw;
        let d_dst = m_inv * dr_dst;

        let mut j = DMatrix::zeros(4, 4);
        j[(0, 2)] = 1.0;
        j[(1, 3)] = 1.0;
        for i in 0..2 {
            j[(2 + i, 0)] = d_sw[i];
            j[(2 + i, 1)] = d_st[i];
            j[(2 + i, 2)] = d_dsw[i];
            j[(2 + i, 3)] = d_dst[i];
        }
        Ok(j)
    }

    fn f_u(&self, x: &DVector<f64>, u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("f_u: u", 1, u.len())?;
        let s = WalkerState::from_slice(x.as_slice())?;
        let col = self.inverse_mass(s.alpha())? * self.input_matrix();
        Ok(DMatrix::from_column_slice(4, 1, &[0.0, 0.0, col[0], col[1]]))
    }

    fn l_x(&self, x: &DVector<f64>, _u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(x.len()))
    }

    fn l_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(u * self.params.k)
    }

    fn g_x(&self, x: &DVector<f64>, _sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        let s = WalkerState::from_slice(x.as_slice())?;
        let (v_plus, qp_inv, q_minus) = self.impact_velocity(&s)?;
        let p = &self.params;
        let (l, a, b) = (p.l_o, p.a, p.b);
        let sa = s.alpha().sin();
        let dqm = Matrix2::new(0.0, -(p.m_h * l * l + 2.0 * p.m_l * a * l) * sa, 0.0, 0.0);
        let dqp = p.m_l * b * l * sa * Matrix2::new(1.0, 1.0, 0.0, 1.0);
        let dv_da = qp_inv * (dqm * s.rates() - dqp * v_plus);
        let dv_dq = qp_inv * q_minus;

        let mut j = DMatrix::zeros(4, 4);
        j[(0, 1)] = 1.0;
        j[(1, 0)] = 1.0;
        for i in 0..2 {
            j[(2 + i, 0)] = -dv_da[i];
            j[(2 + i, 1)] = dv_da[i];
            j[(2 + i, 2)] = dv_dq[(i, 0)];
            j[(2 + i, 3)] = dv_dq[(i, 1)];
        }
        Ok(j)
    }

    fn h_partials(&self, _t: f64, x_t: &DVector<f64>, _x_0: &DVector<f64>, sigma: &DVector<f64>) -> Result<BoundaryPartials> {
        check_len("h partials: x(T)", 4, x_t.len())?;
        let (gamma, v_avg) = Self::sigma_parts(sigma)?;
        let mut x_t_part = DMatrix::zeros(2, 4);
        x_t_part[(0, 0)] = 1.0;
        x_t_part[(0, 1)] = 1.0;
        x_t_part[(1, 0)] = 2.0 * (x_t[0] + gamma).cos();
        Ok(BoundaryPartials {
            t: DVector::from_vec(vec![0.0, -v_avg]),
            x_t: x_t_part,
            x_0: DMatrix::zeros(2, 4),
        })
    }

    fn c_partials(&self, t: f64, _x_t: &DVector<f64>, y_t: f64, sigma: &DVector<f64>) -> Result<CostPartials> {
        let (_, v_avg) = Self::sigma_parts(sigma)?;
        let w = self.params.m * self.params.g * v_avg;
        if w * t == 0.0 || !(w * t).is_finite() {
            return Err(Error::SingularCost(format!("m g v_avg T = {}", w * t)));
        }
        Ok(CostPartials {
            t: -y_t / (w * t * t),
            x_t: DVector::zeros(4),
            y_t: 1.0 / (w * t),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{validate_ocp, ValidationConfig};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn verbatim_mass_matrix_at_zero_alpha() {
        let cg = CompassGait::default().with_reading(MassMatrixReading::Verbatim);
        let m = cg.mass_matrix(0.0);
        assert_eq!(m, Matrix2::new(0.125, -0.125, -0.125, 1.0));
    }

    #[test]
    fn leg_mass_matrix_at_zero_alpha() {
        let m = CompassGait::default().mass_matrix(0.0);
        assert_eq!(m, Matrix2::new(0.0625, -0.125, -0.125, 0.8125));
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let cg = CompassGait::default();
        let dx = cg.f(&v(&[0.0; 4]), &v(&[0.0]), &cg.nominal_sigma()).unwrap();
        assert_eq!(dx.amax(), 0.0);
    }

    #[test]
    fn coriolis_is_quadratic_in_rates() {
        let cg = CompassGait::default();
        let s = WalkerState::from_slice(&[0.1, -0.2, 0.3, -0.4]).unwrap();
        let s2 = WalkerState {
            dtheta_sw: 0.6,
            dtheta_st: -0.8,
            ..s
        };
        assert!((cg.coriolis(&s2) - 4.0 * cg.coriolis(&s)).amax() < 1e-15);
    }

    #[test]
    fn impact_at_rest_swaps_angles() {
        let cg = CompassGait::default();
        let x = cg.g(&v(&[0.2, -0.15, 0.0, 0.0]), &cg.nominal_sigma()).unwrap();
        assert_eq!(x.as_slice(), &[-0.15, 0.2, 0.0, 0.0]);
    }

    #[test]
    fn event_and_operating_examples() {
        let cg = CompassGait::default();
        let sigma = v(&[0.0, 0.1]);
        let xt = v(&[0.12, -0.12, 0.0, 0.0]);
        assert_eq!(cg.event(1.0, &xt, &xt, &sigma).unwrap(), 0.0);
        let sigma = v(&[0.05, 0.1]);
        let xt = v(&[-0.05, 0.3, 0.0, 0.0]);
        assert_eq!(cg.operating(2.0, &xt, &xt, &sigma).unwrap()[0], -0.2);
    }

    #[test]
    fn costs() {
        let cg = CompassGait::default();
        let sigma = v(&[0.0, 0.1]);
        assert_eq!(cg.stage_cost(&v(&[0.0; 4]), &v(&[1.0]), &sigma).unwrap(), 0.5);
        assert_eq!(cg.terminal_cost(2.0, &v(&[0.0; 4]), 0.0, &sigma).unwrap(), 0.0);
        assert!((cg.terminal_cost(2.0, &v(&[0.0; 4]), 0.2, &sigma).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cg.terminal_cost(0.0, &v(&[0.0; 4]), 0.2, &sigma), Err(Error::SingularCost(_))));
    }

    #[test]
    fn analytic_partials_validate() {
        for reading in [MassMatrixReading::LegMass, MassMatrixReading::Verbatim] {
            let cg = CompassGait::default().with_reading(reading);
            let report = validate_ocp(&cg, &ValidationConfig::default());
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn parameters_are_checked() {
        let bad = WalkerParams {
            m_h: 0.6,
            ..WalkerParams::default()
        };
        assert!(CompassGait::new(bad).is_err());
    }
}
