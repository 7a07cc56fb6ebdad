//! Planar two-rotor drone dynamics and a receding-horizon LQ tracker.
//!
//! ```text
//! ẍ = −K1 (Ω1² + Ω2²) sin θ + K2 (Ω1 + Ω2) ẋ
//! ÿ =  K1 (Ω1² + Ω2²) cos θ − g + K2 (Ω1 + Ω2) ẏ
//! θ̈ =  K3 (Ω2² − Ω1²)
//! ```

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub g: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        DroneParams {
            k1: 1e-4,
            k2: 5e-5,
            k3: 5.5e-3,
            g: 9.81,
        }
    }
}

impl DroneParams {
    /// Rotor speed holding the drone level and still: `sqrt(g / (2 K1))`.
    pub fn hover_speed(&self) -> f64 {
        (self.g / (2.0 * self.k1)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    /// Angular rate θ̇.
    pub omega: f64,
    /// Rotor speeds (Ω1, Ω2) applied during the last step.
    pub rotors: [f64; 2],
}

type Vec6 = SVector<f64, 6>;

impl DroneState {
    pub fn at_rest(x: f64, y: f64) -> Self {
        DroneState {
            x,
            y,
            ..Default::default()
        }
    }

    fn vector(&self) -> Vec6 {
        Vec6::new(self.x, self.y, self.theta, self.vx, self.vy, self.omega)
    }

    fn from_vector(s: &Vec6, rotors: [f64; 2]) -> Self {
        DroneState {
            x: s[0],
            y: s[1],
            theta: s[2],
            vx: s[3],
            vy: s[4],
            omega: s[5],
            rotors,
        }
    }
}

/// Time derivative of `(x, y, θ, ẋ, ẏ, θ̇)` under rotor speeds `w`.
pub fn drone_derivative(s: &Vec6, w: [f64; 2], p: &DroneParams) -> Vec6 {
    let thrust = p.k1 * (w[0] * w[0] + w[1] * w[1]);
    let drag = p.k2 * (w[0] + w[1]);
    Vec6::new(
        s[3],
        s[4],
        s[5],
        -thrust * s[2].sin() + drag * s[3],
        thrust * s[2].cos() - p.g + drag * s[4],
        p.k3 * (w[1] * w[1] - w[0] * w[0]),
    )
}

/// One RK4 step with the rotor speeds held over the step.
pub fn drone_step(state: &DroneState, rotors: [f64; 2], dt: f64, params: &DroneParams) -> DroneState {
    let s = state.vector();
    let f = |s: &Vec6| drone_derivative(s, rotors, params);
    let k1 = f(&s);
    let k2 = f(&(s + k1 * (dt / 2.0)));
    let k3 = f(&(s + k2 * (dt / 2.0)));
    let k4 = f(&(s + k3 * dt));
    DroneState::from_vector(&(s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)), rotors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub dt: f64,
    /// Lookahead steps of each LQ solve.
    pub horizon: usize,
    /// Diagonal state weights on `(x, y, θ, ẋ, ẏ, θ̇)`.
    pub state_weights: [f64; 6],
    pub command_weight: f64,
    /// Position error (m) treated as divergence.
    pub max_error: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            dt: 1.0 / 30.0,
            horizon: 20,
            state_weights: [10.0, 10.0, 1.0, 1.0, 1.0, 1.0],
            command_weight: 1e-4,
            max_error: 10.0,
        }
    }
}

/// States (one more than commands) produced by tracking a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub states: Vec<DroneState>,
    pub commands: Vec<[f64; 2]>,
}

type Mat6 = SMatrix<f64, 6, 6>;
type Mat62 = SMatrix<f64, 6, 2>;
type Mat2 = SMatrix<f64, 2, 2>;

/// Zero-order-hold discretization of the dynamics linearized at hover,
/// in deviations of the rotor speeds from the hover speed.
fn hover_model(p: &DroneParams, dt: f64) -> (Mat6, Mat62) {
    let w = p.hover_speed();
    let damp = 2.0 * p.k2 * w;
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    m[(0, 3)] = 1.0;
    m[(1, 4)] = 1.0;
    m[(2, 5)] = 1.0;
    m[(3, 2)] = -p.g;
    m[(3, 3)] = damp;
    m[(4, 4)] = damp;
    m[(4, 6)] = 2.0 * p.k1 * w;
    m[(4, 7)] = 2.0 * p.k1 * w;
    m[(5, 6)] = -2.0 * p.k3 * w;
    m[(5, 7)] = 2.0 * p.k3 * w;
    let e = (m * dt).exp();
    (
        e.fixed_view::<6, 6>(0, 0).into_owned(),
        e.fixed_view::<6, 2>(0, 6).into_owned(),
    )
}

/// Receding-horizon LQ tracking of `reference` (positions at times
/// `k·dt`). Each step solves the finite-horizon tracking problem on the
/// hover linearization by a backward Riccati sweep, applies the first
/// command clamped to `Ω ≥ 0`, and integrates the nonlinear dynamics.
pub fn track_trajectory(
    reference: &[[f64; 2]],
    initial: DroneState,
    params: &DroneParams,
    config: &TrackingConfig,
) -> Result<TrackResult> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("tracking horizon must be at least 1".into()));
    }
    if !(config.dt > 0.0) || reference.is_empty() {
        return Err(Error::InvalidArgument("need dt > 0 and a non-empty reference".into()));
    }
    let dt = config.dt;
    let (a, b) = hover_model(params, dt);
    let q = Mat6::from_diagonal(&Vec6::from_row_slice(&config.state_weights));
    let r = Mat2::identity() * config.command_weight;
    let hover = params.hover_speed();
    let target = |k: usize| -> Vec6 {
        let at = |k: usize| reference[k.min(reference.len() - 1)];
        let (p, n) = (at(k), at(k + 1));
        Vec6::new(p[0], p[1], 0.0, (n[0] - p[0]) / dt, (n[1] - p[1]) / dt, 0.0)
    };

    let mut state = initial;
    let mut states = vec![state];
    let mut commands = Vec::with_capacity(reference.len().saturating_sub(1));
    for k in 0..reference.len() - 1 {
        let n = config.horizon;
        let mut p = q;
        let mut lin = q * target(k + n);
        let mut first = (SMatrix::<f64, 2, 6>::zeros(), SVector::<f64, 2>::zeros());
        for j in (0..n).rev() {
            let m = r + b.transpose() * p * b;
            let m_inv = m
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular LQ step matrix".into()))?;
            let gain = m_inv * b.transpose() * p * a;
            let feed = m_inv * b.transpose() * lin;
            let closed = a - b * gain;
            if j == 0 {
                first = (gain, feed);
            } else {
                p = q + a.transpose() * p * closed;
                p = (p + p.transpose()) * 0.5;
                lin = q * target(k + j) + closed.transpose() * lin;
            }
        }
        let u = first.1 - first.0 * state.vector();
        let cmd = [(hover + u[0]).max(0.0), (hover + u[1]).max(0.0)];
        state = drone_step(&state, cmd, dt, params);
        let err = (state.x - reference[k + 1][0]).hypot(state.y - reference[k + 1][1]);
        if !err.is_finite() || err > config.max_error {
            return Err(Error::Numerical(format!(
                "tracking diverged at step {} (position error {err:.3} m, state {state:?})",
                k + 1
            )));
        }
        commands.push(cmd);
        states.push(state);
    }
    Ok(TrackResult { states, commands })
}
