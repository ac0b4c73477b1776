use serde::{Deserialize, Serialize};

use crate::cost::{PlayerCost, Regularization};
use crate::dynamics::{linearize, Dynamics, Unicycles};
use crate::error::{Error, Result};
use crate::lqgame::{LqGame, LqGameStage};
use crate::trajectory::{JointState, Trajectory};

/// Joint dynamics, per-player costs, and the discretized horizon of a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDefinition {
    pub players: usize,
    pub costs: Vec<PlayerCost>,
    pub dt: f64,
    /// Horizon length in steps (`T / dt`).
    pub steps: usize,
}

impl GameDefinition {
    pub fn new(costs: Vec<PlayerCost>, dt: f64, steps: usize) -> Result<Self> {
        let players = costs.len();
        if players == 0 {
            return Err(Error::EmptyInput("player costs"));
        }
        if costs.iter().enumerate().any(|(i, c)| c.player != i || c.players != players) {
            return Err(Error::InvalidArgument("costs must be ordered by player index".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(Error::InvalidArgument("need a positive time step and horizon".into()));
        }
        Ok(Self { players, costs, dt, steps })
    }

    pub fn dynamics(&self) -> Unicycles {
        Unicycles::new(self.players)
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics().state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics().control_dim()
    }

    pub fn check_state(&self, x: &JointState) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { what: "joint state", expected: self.state_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Total cost of every player along `traj`.
    pub fn total_costs(&self, traj: &Trajectory) -> Vec<f64> {
        self.costs.iter().map(|c| c.total_cost(traj, self.dt)).collect()
    }

    /// LQ approximation along `nominal`; running costs are weighted by `dt`.
    pub fn approximate(&self, nominal: &Trajectory, reg: Regularization) -> Result<LqGame> {
        if nominal.steps() != self.steps {
            return Err(Error::HorizonMismatch { expected: self.steps, got: nominal.steps() });
        }
        let dynamics = linearize(&self.dynamics(), nominal, self.dt)?;
        let mut expansions = self
            .costs
            .iter()
            .map(|c| c.quadraticize_with(nominal, reg))
            .collect::<Result<Vec<_>>>()?;
        let terminal = expansions.iter().map(|e| e.terminal.clone()).collect();
        let stages = dynamics
            .into_iter()
            .enumerate()
            .map(|(t, dynamics)| {
                let costs = expansions
                    .iter_mut()
                    .map(|e| {
                        let mut c = std::mem::replace(&mut e.running[t], crate::cost::QuadraticCost::zeros(0, 0));
                        c.scale(self.dt);
                        c
                    })
                    .collect();
                LqGameStage { dynamics, costs }
            })
            .collect();
        Ok(LqGame { stages, terminal })
    }
}
