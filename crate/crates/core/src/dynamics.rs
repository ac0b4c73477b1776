//! Joint player dynamics, their RK4 discretization, and the exact Jacobians of
//! the discrete-time step map.
//!
//! Controls are held constant over a step (zero-order hold). Headings are kept
//! unwrapped so that linearizations stay smooth across full turns.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::trajectory::{
    JointControl, JointState, Trajectory, CONTROL_PER_PLAYER, STATE_PER_PLAYER,
};

/// Continuous-time joint dynamics `x' = f(t, x, u_1, ..., u_N)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Dimension of the stacked joint control.
    fn control_dim(&self) -> usize;

    /// Slice of the joint control owned by `player`.
    fn control_range(&self, player: usize) -> Range<usize>;

    fn players(&self) -> usize;

    /// State derivative. `step` is threaded through for time-varying models.
    fn flow(&self, step: usize, x: &JointState, u: &JointControl) -> DVector<f64>;

    /// Continuous-time Jacobians `(df/dx, df/du)`.
    fn flow_jacobians(
        &self,
        step: usize,
        x: &JointState,
        u: &JointControl,
    ) -> (DMatrix<f64>, DMatrix<f64>);

    fn check_dims(&self, x: &JointState, u: &JointControl) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "joint state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "joint control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }
}

/// Product of independent 4D unicycles, one per player.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unicycles {
    players: usize,
}

impl Unicycles {
    pub fn new(players: usize) -> Self {
        assert!(players > 0, "need at least one player");
        Self { players }
    }

    /// Checked version of [`Dynamics::flow`].
    pub fn unicycle_flow(&self, x: &JointState, u: &JointControl) -> Result<DVector<f64>> {
        self.check_dims(x, u)?;
        Ok(self.flow(0, x, u))
    }
}

impl Dynamics for Unicycles {
    fn state_dim(&self) -> usize {
        STATE_PER_PLAYER * self.players
    }

    fn control_dim(&self) -> usize {
        CONTROL_PER_PLAYER * self.players
    }

    fn control_range(&self, player: usize) -> Range<usize> {
        CONTROL_PER_PLAYER * player..CONTROL_PER_PLAYER * (player + 1)
    }

    fn players(&self) -> usize {
        self.players
    }

    fn flow(&self, _step: usize, x: &JointState, u: &JointControl) -> DVector<f64> {
        let mut dx = DVector::zeros(x.len());
        for i in 0..self.players {
            let s = STATE_PER_PLAYER * i;
            let c = CONTROL_PER_PLAYER * i;
            let (theta, v) = (x[s + 2], x[s + 3]);
            dx[s] = v * theta.cos();
            dx[s + 1] = v * theta.sin();
            dx[s + 2] = u[c];
            dx[s + 3] = u[c + 1];
        }
        dx
    }

    fn flow_jacobians(
        &self,
        _step: usize,
        x: &JointState,
        _u: &JointControl,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let mut fx = DMatrix::zeros(n, n);
        let mut fu = DMatrix::zeros(n, self.control_dim());
        for i in 0..self.players {
            let s = STATE_PER_PLAYER * i;
            let c = CONTROL_PER_PLAYER * i;
            let (sin, cos) = x[s + 2].sin_cos();
            let v = x[s + 3];
            fx[(s, s + 2)] = -v * sin;
            fx[(s, s + 3)] = cos;
            fx[(s + 1, s + 2)] = v * cos;
            fx[(s + 1, s + 3)] = sin;
            fu[(s + 2, c)] = 1.0;
            fu[(s + 3, c + 1)] = 1.0;
        }
        (fx, fu)
    }
}

/// One classical Runge-Kutta step with the control held constant.
pub fn integrate<D: Dynamics + ?Sized>(
    dynamics: &D,
    step: usize,
    x: &JointState,
    u: &JointControl,
    dt: f64,
) -> Result<JointState> {
    dynamics.check_dims(x, u)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("control"));
    }
    Ok(rk4(dynamics, step, x, u, dt))
}

fn rk4<D: Dynamics + ?Sized>(
    dynamics: &D,
    step: usize,
    x: &JointState,
    u: &JointControl,
    dt: f64,
) -> JointState {
    let h2 = 0.5 * dt;
    let k1 = dynamics.flow(step, x, u);
    let k2 = dynamics.flow(step, &(x + &k1 * h2), u);
    let k3 = dynamics.flow(step, &(x + &k2 * h2), u);
    let k4 = dynamics.flow(step, &(x + &k3 * dt), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Discrete-time linear model of one step, in deviation coordinates:
/// `dx_{t+1} = A dx_t + sum_i B_i du_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    /// One `n x m_i` block per player.
    pub b: Vec<DMatrix<f64>>,
}

impl LinearizedDynamics {
    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite()) && self.b.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Exact Jacobians of the RK4 step map with respect to state and joint control.
pub fn step_jacobians<D: Dynamics + ?Sized>(
    dynamics: &D,
    step: usize,
    x: &JointState,
    u: &JointControl,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let h2 = 0.5 * dt;
    let eye = DMatrix::<f64>::identity(n, n);

    let k1 = dynamics.flow(step, x, u);
    let x2 = x + &k1 * h2;
    let k2 = dynamics.flow(step, &x2, u);
    let x3 = x + &k2 * h2;
    let k3 = dynamics.flow(step, &x3, u);
    let x4 = x + &k3 * dt;

    let (a1, b1) = dynamics.flow_jacobians(step, x, u);
    let (a2, b2) = dynamics.flow_jacobians(step, &x2, u);
    let (a3, b3) = dynamics.flow_jacobians(step, &x3, u);
    let (a4, b4) = dynamics.flow_jacobians(step, &x4, u);

    let k1x = a1;
    let k2x = &a2 * (&eye + &k1x * h2);
    let k3x = &a3 * (&eye + &k2x * h2);
    let k4x = &a4 * (&eye + &k3x * dt);

    let k1u = b1;
    let k2u = &a2 * &k1u * h2 + b2;
    let k3u = &a3 * &k2u * h2 + b3;
    let k4u = &a4 * &k3u * dt + b4;

    let sixth = dt / 6.0;
    let ax = eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * sixth;
    let bu = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * sixth;
    (ax, bu)
}

/// Per-step discrete-time linearization about a nominal trajectory.
pub fn linearize<D: Dynamics + ?Sized>(
    dynamics: &D,
    nominal: &Trajectory,
    dt: f64,
) -> Result<Vec<LinearizedDynamics>> {
    let mut out = Vec::with_capacity(nominal.steps());
    for (t, (x, u)) in nominal.states.iter().zip(&nominal.controls).enumerate() {
        dynamics.check_dims(x, u)?;
        let (a, bu) = step_jacobians(dynamics, t, x, u, dt);
        let b = (0..dynamics.players())
            .map(|i| {
                let r = dynamics.control_range(i);
                bu.columns(r.start, r.len()).into_owned()
            })
            .collect();
        out.push(LinearizedDynamics { a, b });
    }
    Ok(out)
}

/// Open-loop simulation of a control sequence from `x0`.
pub fn simulate<D: Dynamics + ?Sized>(
    dynamics: &D,
    x0: &JointState,
    controls: &[JointControl],
    dt: f64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (t, u) in controls.iter().enumerate() {
        let next = integrate(dynamics, t, &states[t], u, dt)?;
        states.push(next);
    }
    Trajectory::new(states, controls.to_vec())
}
