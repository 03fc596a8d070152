//! Desk-scale rendezvous testbed.
//!
//! Frame: chief-centered rotating Hill frame, `x` radial, `y` along-track,
//! `z` cross-track. The deputy approaches along the +V-bar (positive `y`)
//! toward a hold point outside the keep-out sphere.

use std::io::Write;

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat63 = SMatrix<f64, 6, 3>;
pub type Mat36 = SMatrix<f64, 3, 6>;
pub type Mat3 = SMatrix<f64, 3, 3>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub r: [f64; 3],
    pub v: [f64; 3],
    pub t: f64,
}

impl RelativeState {
    pub fn new(r: [f64; 3], v: [f64; 3], t: f64) -> Self {
        Self { r, v, t }
    }

    pub fn vector(&self) -> Vec6 {
        Vec6::new(self.r[0], self.r[1], self.r[2], self.v[0], self.v[1], self.v[2])
    }

    pub fn from_vector(x: &Vec6, t: f64) -> Self {
        Self {
            r: [x[0], x[1], x[2]],
            v: [x[3], x[4], x[5]],
            t,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.r)
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(&self.v).all(|c| c.is_finite()) && self.t.is_finite()
    }
}

/// Diagonal LQR weights: `Q = diag(q_position I, q_velocity I)`, `R = r_control I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q_position: f64,
    pub q_velocity: f64,
    pub r_control: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q_position: 1.0,
            q_velocity: 5600.0,
            r_control: 1.0e8,
        }
    }
}

/// Straight-line V-bar approach from `(0, y_start, 0)` to `(0, y_hold, 0)` at
/// constant closing speed, held at the end points outside that span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbarReference {
    pub y_start: f64,
    pub y_hold: f64,
    pub closing_speed: f64,
}

impl Default for VbarReference {
    fn default() -> Self {
        Self {
            y_start: 1500.0,
            y_hold: 400.0,
            closing_speed: 2.0,
        }
    }
}

impl VbarReference {
    pub fn duration(&self) -> f64 {
        (self.y_start - self.y_hold) / self.closing_speed
    }

    /// Position and velocity along the approach at reference time `tau`.
    pub fn at(&self, tau: f64) -> Vec6 {
        let end = self.duration();
        let (y, vy) = if tau <= 0.0 {
            (self.y_start, 0.0)
        } else if tau >= end {
            (self.y_hold, 0.0)
        } else {
            (self.y_start - self.closing_speed * tau, -self.closing_speed)
        };
        Vec6::new(0.0, y, 0.0, 0.0, vy, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mean_motion: f64,
    pub dt: f64,
    pub horizon_steps: usize,
    pub keep_out_radius: f64,
    /// Radians.
    pub cone_half_angle: f64,
    /// Per-axis acceleration bound, m/s^2.
    pub u_max: f64,
    pub lqr_weights: LqrWeights,
    pub initial_state: RelativeState,
    pub reference: VbarReference,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mean_motion: 0.00113,
            dt: 10.0,
            horizon_steps: 120,
            keep_out_radius: 200.0,
            cone_half_angle: 20f64.to_radians(),
            u_max: 0.05,
            lqr_weights: LqrWeights::default(),
            // Starts 400 s behind the nominal schedule.
            initial_state: RelativeState::new([-100.0, 1500.0, 20.0], [0.0, 0.0, 0.0], 400.0),
            reference: VbarReference::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Scenario(m.into()));
        if !(self.mean_motion >= 0.0 && self.mean_motion.is_finite()) {
            return bad("mean_motion must be >= 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if self.horizon_steps == 0 {
            return bad("horizon_steps must be >= 1");
        }
        if !(self.keep_out_radius > 0.0) {
            return bad("keep_out_radius must be > 0");
        }
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle < std::f64::consts::FRAC_PI_2) {
            return bad("cone_half_angle must be in (0, pi/2)");
        }
        if !(self.u_max > 0.0) {
            return bad("u_max must be > 0");
        }
        let w = self.lqr_weights;
        if !(w.q_position >= 0.0 && w.q_velocity >= 0.0 && w.r_control > 0.0) {
            return bad("LQR weights must be q >= 0, r > 0");
        }
        let r = self.reference;
        if !(r.closing_speed > 0.0 && r.y_start >= r.y_hold) {
            return bad("reference needs closing_speed > 0 and y_start >= y_hold");
        }
        if !self.initial_state.is_finite() {
            return bad("initial_state must be finite");
        }
        Ok(())
    }

    /// Prediction horizon length in seconds.
    pub fn horizon_duration(&self) -> f64 {
        self.dt * self.horizon_steps as f64
    }
}

/// Continuous HCW system matrices.
pub fn hcw_continuous(n: f64) -> (Mat6, Mat63) {
    let mut a = Mat6::zeros();
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    a[(3, 0)] = 3.0 * n * n;
    a[(3, 4)] = 2.0 * n;
    a[(4, 3)] = -2.0 * n;
    a[(5, 2)] = -n * n;
    let mut b = Mat63::zeros();
    b[(3, 0)] = 1.0;
    b[(4, 1)] = 1.0;
    b[(5, 2)] = 1.0;
    (a, b)
}

/// Zero-order-hold discretization through the exponential of `[A B; 0 0] dt`.
pub fn discretize(a: &Mat6, b: &Mat63, dt: f64) -> (Mat6, Mat63) {
    let mut m = SMatrix::<f64, 9, 9>::zeros();
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&(a * dt));
    m.fixed_view_mut::<6, 3>(0, 6).copy_from(&(b * dt));
    let e = m.exp();
    (e.fixed_view::<6, 6>(0, 0).into_owned(), e.fixed_view::<6, 3>(0, 6).into_owned())
}

/// Stabilizing solution of the discrete algebraic Riccati equation via the
/// structured doubling algorithm.
pub fn solve_dare(a: &Mat6, b: &Mat63, q: &Mat6, r: &Mat3) -> Result<Mat6, SimError> {
    let r_inv = r.try_inverse().ok_or(SimError::Riccati(0))?;
    let mut ak = *a;
    let mut gk = b * r_inv * b.transpose();
    let mut hk = *q;
    let id = Mat6::identity();
    for iter in 1..=100 {
        let w = (id + gk * hk).try_inverse().ok_or(SimError::Riccati(iter))?;
        let a_w = ak * w;
        let a_next = a_w * ak;
        let g_next = gk + a_w * gk * ak.transpose();
        let h_next = hk + ak.transpose() * hk * w * ak;
        let delta = (h_next - hk).norm();
        let scale = h_next.norm().max(1e-300);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-15 * scale {
            // Symmetrize away round-off.
            return Ok((hk + hk.transpose()) * 0.5);
        }
        if !hk.iter().all(|v| v.is_finite()) {
            return Err(SimError::Riccati(iter));
        }
    }
    Err(SimError::Riccati(100))
}

/// Discrete LQR gain `K = (R + B'PB)^-1 B'PA` for the Riccati solution `P`.
pub fn lqr_gain(a: &Mat6, b: &Mat63, p: &Mat6, r: &Mat3) -> Result<Mat36, SimError> {
    let s = r + b.transpose() * p * b;
    let s_inv = s.try_inverse().ok_or(SimError::Riccati(0))?;
    Ok(s_inv * b.transpose() * p * a)
}

/// Which constraints a state/control pair satisfies, evaluated independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintTerms {
    pub keep_out: f64,
    pub cone: f64,
    pub control: f64,
}

impl ConstraintTerms {
    pub fn min(&self) -> f64 {
        self.keep_out.min(self.cone).min(self.control)
    }
}

/// Scenario with its precomputed discrete plant and LQR gain.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    ad: Mat6,
    bd: Mat63,
    gain: Mat36,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `steps + 1` states starting at the initial one.
    pub states: Vec<RelativeState>,
    /// Control applied at each of the first `steps` states.
    pub controls: Vec<[f64; 3]>,
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let (a, b) = hcw_continuous(scenario.mean_motion);
        let (ad, bd) = discretize(&a, &b, scenario.dt);
        let w = scenario.lqr_weights;
        let mut q = Mat6::zeros();
        for i in 0..3 {
            q[(i, i)] = w.q_position;
            q[(i + 3, i + 3)] = w.q_velocity;
        }
        let r = Mat3::identity() * w.r_control;
        let p = solve_dare(&ad, &bd, &q, &r)?;
        let gain = lqr_gain(&ad, &bd, &p, &r)?;
        Ok(Self {
            scenario,
            ad,
            bd,
            gain,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn gain(&self) -> &Mat36 {
        &self.gain
    }

    pub fn discrete_plant(&self) -> (&Mat6, &Mat63) {
        (&self.ad, &self.bd)
    }

    pub fn step_dynamics(&self, state: &RelativeState, u: [f64; 3]) -> Result<RelativeState, SimError> {
        let x = self.ad * state.vector() + self.bd * Vector3::from(u);
        let next = RelativeState::from_vector(&x, state.t + self.scenario.dt);
        if !next.is_finite() {
            return Err(SimError::NonFinite { t: next.t });
        }
        Ok(next)
    }

    /// Reference evaluated at `t_query + t_shift`.
    pub fn reference_state(&self, t_query: f64, t_shift: f64) -> RelativeState {
        let tau = t_query + t_shift;
        RelativeState::from_vector(&self.scenario.reference.at(tau), t_query)
    }

    fn control_vec(&self, x: &Vec6, t: f64, t_shift: f64) -> Vector3<f64> {
        let err = x - self.scenario.reference.at(t + t_shift);
        let u_max = self.scenario.u_max;
        (-(self.gain * err)).map(|c| c.clamp(-u_max, u_max))
    }

    /// Saturated LQR tracking control toward the shifted reference.
    pub fn nominal_control(&self, state: &RelativeState, t_shift: f64) -> [f64; 3] {
        self.control_vec(&state.vector(), state.t, t_shift).into()
    }

    pub fn constraint_terms(&self, r: &Vector3<f64>, u: &[f64; 3]) -> ConstraintTerms {
        let s = &self.scenario;
        let dist = r.norm();
        // Angle between the position and the +y approach axis.
        let angle = if dist > 0.0 {
            (r[1] / dist).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        let u_abs = u.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        ConstraintTerms {
            keep_out: dist - s.keep_out_radius,
            cone: (s.cone_half_angle - angle) * dist,
            control: s.u_max - u_abs,
        }
    }

    /// Smallest constraint slack; strictly positive means every constraint holds.
    pub fn constraint_margin(&self, state: &RelativeState, u: &[f64; 3]) -> f64 {
        self.constraint_terms(&state.position(), u).min()
    }

    fn margin_vec(&self, x: &Vec6, u: &Vector3<f64>) -> f64 {
        let r = x.fixed_rows::<3>(0).into_owned();
        self.constraint_terms(&r, &[u[0], u[1], u[2]]).min()
    }

    /// Closed-loop simulation with a fixed shift; margins are taken at each
    /// `(state_j, u_j)` pair for `j < steps`.
    pub fn rollout(&self, state0: &RelativeState, t_shift: f64, steps: usize) -> Result<Rollout, SimError> {
        let mut states = Vec::with_capacity(steps + 1);
        let mut controls = Vec::with_capacity(steps);
        let mut margins = Vec::with_capacity(steps);
        let mut state = *state0;
        if !state.is_finite() {
            return Err(SimError::NonFinite { t: state.t });
        }
        states.push(state);
        for _ in 0..steps {
            let u = self.nominal_control(&state, t_shift);
            margins.push(self.constraint_margin(&state, &u));
            controls.push(u);
            state = self.step_dynamics(&state, u)?;
            states.push(state);
        }
        let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Rollout {
            states,
            controls,
            margins,
            min_margin,
        })
    }

    /// Whether the horizon rollout with `t_shift` keeps every margin positive.
    /// Stops at the first violation, so it is much cheaper than [`Self::rollout`].
    pub fn is_feasible(&self, state0: &RelativeState, t_shift: f64) -> Result<bool, SimError> {
        let mut x = state0.vector();
        let mut t = state0.t;
        for _ in 0..self.scenario.horizon_steps {
            let u = self.control_vec(&x, t, t_shift);
            if !(self.margin_vec(&x, &u) > 0.0) {
                return Ok(false);
            }
            x = self.ad * x + self.bd * u;
            t += self.scenario.dt;
            if !x.iter().all(|c| c.is_finite()) {
                return Err(SimError::NonFinite { t });
            }
        }
        Ok(true)
    }
}

/// Writes `t,r_x,r_y,r_z,v_x,v_y,v_z,u_x,u_y,u_z,margin` rows; the final state
/// of a trajectory has no control and is written with empty control columns.
pub fn write_trajectory_csv<W: Write>(
    states: &[RelativeState],
    controls: &[[f64; 3]],
    margins: &[f64],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "u_x", "u_y", "u_z", "margin"])?;
    for (i, s) in states.iter().enumerate() {
        let mut rec: Vec<String> = std::iter::once(s.t)
            .chain(s.r)
            .chain(s.v)
            .map(|v| v.to_string())
            .collect();
        match (controls.get(i), margins.get(i)) {
            (Some(u), Some(m)) => {
                rec.extend(u.iter().map(|v| v.to_string()));
                rec.push(m.to_string());
            }
            _ => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
