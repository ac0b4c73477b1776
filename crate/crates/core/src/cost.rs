//! Per-player navigation costs and their local quadratic models.
//!
//! Player `i` pays for control effort, speed, pairwise proximity to every other
//! player (a one-sided quadratic below `proximity_threshold`), and a terminal
//! quadratic on the distance to its goal state.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{JointControl, JointState, Trajectory, CONTROL_PER_PLAYER, STATE_PER_PLAYER};

/// Tunable weights shared by the players of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub terminal: f64,
    /// Diagonal of the control weight, `[omega, a]`.
    pub control: [f64; 2],
    pub velocity: f64,
    #[serde(default)]
    pub reference_speed: f64,
    pub proximity: f64,
    pub proximity_threshold: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            terminal: 10.0,
            control: [1.0, 1.0],
            velocity: 0.1,
            reference_speed: 0.0,
            proximity: 50.0,
            proximity_threshold: 0.75,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.terminal, self.velocity, self.proximity, self.control[0], self.control[1]];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("cost weights must be finite and non-negative".into()));
        }
        if self.control.iter().any(|w| *w <= 0.0) {
            return Err(Error::Config("control weights must be strictly positive".into()));
        }
        if !(self.proximity_threshold > 0.0 && self.proximity_threshold.is_finite()) {
            return Err(Error::Config("proximity threshold must be positive".into()));
        }
        if !self.reference_speed.is_finite() {
            return Err(Error::Config("reference speed must be finite".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            terminal: self.terminal * c,
            control: [self.control[0] * c, self.control[1] * c],
            velocity: self.velocity * c,
            proximity: self.proximity * c,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerCost {
    pub player: usize,
    pub players: usize,
    /// Goal `[p_x, p_y, theta, v]`.
    pub goal: [f64; 4],
    pub weights: CostWeights,
}

/// Second-order model of one player's running cost at one step, in deviation
/// coordinates about the nominal point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    /// Cost at the nominal point.
    pub value: f64,
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    /// `R_ij` for every player `j` (only `j == i` is nonzero for navigation costs).
    pub control_hessians: Vec<DMatrix<f64>>,
    /// `r_ij` for every player `j`.
    pub control_gradients: Vec<DVector<f64>>,
}

impl QuadraticCost {
    pub fn zeros(state_dim: usize, players: usize) -> Self {
        Self {
            value: 0.0,
            q: DMatrix::zeros(state_dim, state_dim),
            l: DVector::zeros(state_dim),
            control_hessians: vec![DMatrix::zeros(CONTROL_PER_PLAYER, CONTROL_PER_PLAYER); players],
            control_gradients: vec![DVector::zeros(CONTROL_PER_PLAYER); players],
        }
    }

    /// Model value `value + 1/2 dx'Q dx + l'dx + sum_j (1/2 du_j'R_ij du_j + r_ij'du_j)`.
    pub fn evaluate(&self, dx: &DVector<f64>, du: &[DVector<f64>]) -> f64 {
        let mut c = self.value + 0.5 * dx.dot(&(&self.q * dx)) + self.l.dot(dx);
        for ((r, g), d) in self.control_hessians.iter().zip(&self.control_gradients).zip(du) {
            c += 0.5 * d.dot(&(r * d)) + g.dot(d);
        }
        c
    }

    pub fn scale(&mut self, c: f64) {
        self.value *= c;
        self.q *= c;
        self.l *= c;
        for r in &mut self.control_hessians {
            *r *= c;
        }
        for g in &mut self.control_gradients {
            *g *= c;
        }
    }
}

/// Terminal quadratic model `value + 1/2 dx'Q dx + l'dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub value: f64,
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
}

/// Full-horizon local model for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCostApprox {
    pub running: Vec<QuadraticCost>,
    pub terminal: TerminalCost,
}

/// How the raw Taylor expansion is made Riccati-safe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub project_state_hessian: bool,
    pub control: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { project_state_hessian: true, control: 1e-6 }
    }
}

impl Regularization {
    pub fn none() -> Self {
        Self { project_state_hessian: false, control: 0.0 }
    }
}

fn pos(x: &JointState, j: usize) -> Vector2<f64> {
    Vector2::new(x[STATE_PER_PLAYER * j], x[STATE_PER_PLAYER * j + 1])
}

impl PlayerCost {
    pub fn new(player: usize, players: usize, goal: [f64; 4], weights: CostWeights) -> Result<Self> {
        weights.validate()?;
        if player >= players {
            return Err(Error::InvalidArgument(format!("player {player} out of range for {players} players")));
        }
        Ok(Self { player, players, goal, weights })
    }

    fn check(&self, x: &JointState) -> Result<()> {
        if x.len() != STATE_PER_PLAYER * self.players {
            return Err(Error::DimensionMismatch {
                what: "joint state",
                expected: STATE_PER_PLAYER * self.players,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn proximity_penalty(&self, x: &JointState) -> f64 {
        let w = &self.weights;
        let pi = pos(x, self.player);
        (0..self.players)
            .filter(|&j| j != self.player)
            .map(|j| {
                let gap = (w.proximity_threshold - (pi - pos(x, j)).norm()).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            * w.proximity
    }

    /// Running cost rate `g_i(x, u)`.
    pub fn running_cost(&self, x: &JointState, u: &JointControl) -> f64 {
        let w = &self.weights;
        let c = CONTROL_PER_PLAYER * self.player;
        let s = STATE_PER_PLAYER * self.player;
        let dv = x[s + 3] - w.reference_speed;
        w.control[0] * u[c] * u[c] + w.control[1] * u[c + 1] * u[c + 1] + w.velocity * dv * dv + self.proximity_penalty(x)
    }

    /// Checked running cost.
    pub fn try_running_cost(&self, x: &JointState, u: &JointControl) -> Result<f64> {
        self.check(x)?;
        if u.len() != CONTROL_PER_PLAYER * self.players {
            return Err(Error::DimensionMismatch {
                what: "joint control",
                expected: CONTROL_PER_PLAYER * self.players,
                got: u.len(),
            });
        }
        Ok(self.running_cost(x, u))
    }

    /// Goal penalty on the final state.
    pub fn terminal_cost(&self, x: &JointState) -> f64 {
        let s = STATE_PER_PLAYER * self.player;
        let e: f64 = (0..STATE_PER_PLAYER).map(|k| (x[s + k] - self.goal[k]).powi(2)).sum();
        self.weights.terminal * e
    }

    /// `dt`-weighted sum of running costs plus the terminal cost.
    pub fn total_cost(&self, traj: &Trajectory, dt: f64) -> f64 {
        let running: f64 = traj
            .states
            .iter()
            .zip(&traj.controls)
            .map(|(x, u)| self.running_cost(x, u))
            .sum();
        running * dt + self.terminal_cost(traj.final_state())
    }

    /// Gradient and Hessian of `g_i` with respect to the joint state (no regularization).
    fn state_derivatives(&self, x: &JointState) -> (DVector<f64>, DMatrix<f64>, bool) {
        let n = x.len();
        let w = &self.weights;
        let s = STATE_PER_PLAYER * self.player;
        let mut l = DVector::zeros(n);
        let mut q = DMatrix::zeros(n, n);
        l[s + 3] = 2.0 * w.velocity * (x[s + 3] - w.reference_speed);
        q[(s + 3, s + 3)] = 2.0 * w.velocity;

        let mut active = false;
        let pi = pos(x, self.player);
        for j in (0..self.players).filter(|&j| j != self.player) {
            let delta = pi - pos(x, j);
            let d = delta.norm();
            let gap = w.proximity_threshold - d;
            if gap <= 0.0 {
                continue;
            }
            active = true;
            let (nrm, curvature) = if d > 1e-12 { (delta / d, gap / d) } else { (Vector2::new(1.0, 0.0), 0.0) };
            let grad = nrm * (-2.0 * gap * w.proximity);
            let outer = nrm * nrm.transpose();
            let m: Matrix2<f64> = (outer * 2.0 - (Matrix2::identity() - outer) * (2.0 * curvature)) * w.proximity;
            let sj = STATE_PER_PLAYER * j;
            for a in 0..2 {
                l[s + a] += grad[a];
                l[sj + a] -= grad[a];
                for b in 0..2 {
                    q[(s + a, s + b)] += m[(a, b)];
                    q[(sj + a, sj + b)] += m[(a, b)];
                    q[(s + a, sj + b)] -= m[(a, b)];
                    q[(sj + a, s + b)] -= m[(a, b)];
                }
            }
        }
        (l, q, active)
    }

    /// Local model of the running cost at `(x, u)`.
    pub fn quadraticize_step(&self, x: &JointState, u: &JointControl, reg: Regularization) -> QuadraticCost {
        let (l, mut q, active) = self.state_derivatives(x);
        if active && reg.project_state_hessian {
            q = project_psd(q);
        }
        let mut out = QuadraticCost::zeros(x.len(), self.players);
        out.value = self.running_cost(x, u);
        out.q = q;
        out.l = l;
        let c = CONTROL_PER_PLAYER * self.player;
        let w = &self.weights;
        let i = self.player;
        out.control_hessians[i][(0, 0)] = 2.0 * w.control[0] + reg.control;
        out.control_hessians[i][(1, 1)] = 2.0 * w.control[1] + reg.control;
        out.control_gradients[i][0] = 2.0 * w.control[0] * u[c];
        out.control_gradients[i][1] = 2.0 * w.control[1] * u[c + 1];
        out
    }

    pub fn quadraticize_terminal(&self, x: &JointState) -> TerminalCost {
        let n = x.len();
        let s = STATE_PER_PLAYER * self.player;
        let mut q = DMatrix::zeros(n, n);
        let mut l = DVector::zeros(n);
        for k in 0..STATE_PER_PLAYER {
            q[(s + k, s + k)] = 2.0 * self.weights.terminal;
            l[s + k] = 2.0 * self.weights.terminal * (x[s + k] - self.goal[k]);
        }
        TerminalCost { value: self.terminal_cost(x), q, l }
    }

    /// Second-order expansion along a nominal trajectory with the default
    /// regularization.
    pub fn quadraticize(&self, nominal: &Trajectory) -> Result<QuadraticCostApprox> {
        self.quadraticize_with(nominal, Regularization::default())
    }

    pub fn quadraticize_with(&self, nominal: &Trajectory, reg: Regularization) -> Result<QuadraticCostApprox> {
        self.check(nominal.initial_state())?;
        let running = nominal
            .states
            .iter()
            .zip(&nominal.controls)
            .map(|(x, u)| self.quadraticize_step(x, u, reg))
            .collect();
        Ok(QuadraticCostApprox { running, terminal: self.quadraticize_terminal(nominal.final_state()) })
    }
}

/// Nearest (Frobenius) positive semidefinite matrix by eigenvalue clamping.
pub fn project_psd(q: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&e| e >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|e| e.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_player_cost() -> PlayerCost {
        PlayerCost::new(0, 2, [1.0, 0.0, 0.0, 0.0], CostWeights::default()).unwrap()
    }

    #[test]
    fn zero_input_at_rest_far_apart_is_free() {
        let c = two_player_cost();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.3, 0.0, 5.0, 5.0, 1.0, 0.0]);
        assert_eq!(c.running_cost(&x, &DVector::zeros(4)), 0.0);
    }

    #[test]
    fn coincident_players_pay_full_threshold() {
        let c = two_player_cost();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let w = c.weights;
        let expected = w.proximity * w.proximity_threshold.powi(2);
        assert!((c.running_cost(&x, &DVector::zeros(4)) - expected).abs() < 1e-12);
    }

    #[test]
    fn proximity_penalty_is_shared() {
        let w = CostWeights::default();
        let a = PlayerCost::new(0, 2, [0.0; 4], w).unwrap();
        let b = PlayerCost::new(1, 2, [0.0; 4], w).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.3, 0.2, 2.0, 0.0]);
        let u = DVector::zeros(4);
        assert_eq!(a.running_cost(&x, &u), b.running_cost(&x, &u));
    }

    #[test]
    fn control_block_is_exact() {
        let c = two_player_cost();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 0.0, 0.0]);
        let u = DVector::from_vec(vec![0.4, -0.7, 3.0, 3.0]);
        let m = c.quadraticize_step(&x, &u, Regularization::none());
        assert_eq!(m.control_hessians[0], DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])));
        assert_eq!(m.control_gradients[0].as_slice(), &[0.8, -1.4]);
        assert!(m.control_hessians[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inactive_proximity_contributes_nothing() {
        let c = two_player_cost();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 0.0, 0.0]);
        let m = c.quadraticize_step(&x, &DVector::zeros(4), Regularization::default());
        for r in 0..8 {
            for k in 0..8 {
                if (r, k) != (3, 3) {
                    assert_eq!(m.q[(r, k)], 0.0);
                }
            }
        }
        assert!(m.l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn projection_yields_psd() {
        let c = two_player_cost();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.4, 0.1, 0.0, 1.0]);
        let m = c.quadraticize_step(&x, &DVector::zeros(4), Regularization::default());
        let eig = SymmetricEigen::new(m.q.clone());
        assert!(eig.eigenvalues.iter().all(|e| *e >= -1e-12));
        assert_eq!(m.q, m.q.transpose());
        assert!(m.control_hessians[0][(0, 0)] > 2.0);
    }

    #[test]
    fn stationary_at_goal_costs_nothing() {
        let c = PlayerCost::new(0, 1, [2.0, 3.0, 0.5, 0.0], CostWeights::default()).unwrap();
        let x = DVector::from_vec(vec![2.0, 3.0, 0.5, 0.0]);
        let traj = Trajectory::constant(&x, 2, 10);
        assert_eq!(c.total_cost(&traj, 0.1), 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut w = CostWeights::default();
        w.control = [0.0, 1.0];
        assert!(PlayerCost::new(0, 2, [0.0; 4], w).is_err());
        let mut w = CostWeights::default();
        w.proximity_threshold = 0.0;
        assert!(PlayerCost::new(0, 2, [0.0; 4], w).is_err());
    }
}
