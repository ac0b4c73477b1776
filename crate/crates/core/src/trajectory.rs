use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint state of all players: per player `[p_x, p_y, theta, v]`.
pub type JointState = DVector<f64>;
/// Joint control of all players: per player `[omega, a]`.
pub type JointControl = DVector<f64>;

pub const STATE_PER_PLAYER: usize = 4;
pub const CONTROL_PER_PLAYER: usize = 2;

/// Time-indexed joint states `x_0..=x_T` and joint controls `u_0..u_{T-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<JointState>,
    pub controls: Vec<JointControl>,
}

impl Trajectory {
    pub fn new(states: Vec<JointState>, controls: Vec<JointControl>) -> Result<Self> {
        if states.len() != controls.len() + 1 {
            return Err(Error::HorizonMismatch {
                expected: controls.len() + 1,
                got: states.len(),
            });
        }
        Ok(Self { states, controls })
    }

    /// Constant trajectory at `x` with zero controls.
    pub fn constant(x: &JointState, control_dim: usize, steps: usize) -> Self {
        Self {
            states: vec![x.clone(); steps + 1],
            controls: vec![DVector::zeros(control_dim); steps],
        }
    }

    /// Number of control steps.
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn initial_state(&self) -> &JointState {
        &self.states[0]
    }

    pub fn final_state(&self) -> &JointState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Maximum absolute elementwise difference between the state sequences.
    pub fn max_state_change(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    /// Stacked positions `[p_x1, p_y1, p_x2, ...]` at step `t`.
    pub fn positions_at(&self, t: usize) -> DVector<f64> {
        positions(&self.states[t])
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self.controls.iter().all(|u| u.iter().all(|v| v.is_finite()))
    }
}

/// Extracts the stacked planar positions of every player from a joint state.
pub fn positions(x: &JointState) -> DVector<f64> {
    let players = x.len() / STATE_PER_PLAYER;
    DVector::from_fn(2 * players, |k, _| x[(k / 2) * STATE_PER_PLAYER + k % 2])
}

/// Number of players encoded in a joint state vector.
pub fn player_count(x: &JointState) -> usize {
    x.len() / STATE_PER_PLAYER
}
