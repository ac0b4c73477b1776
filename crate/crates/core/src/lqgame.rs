//! Feedback Nash equilibria of finite-horizon, discrete-time, N-player
//! general-sum LQ games via the coupled Riccati recursion.
//!
//! Strategies live in deviation coordinates: `du_i = -P_i dx - alpha_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{QuadraticCost, TerminalCost};
use crate::dynamics::LinearizedDynamics;
use crate::error::{Error, Result};

/// Time-varying affine feedback law of one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineStrategy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
}

impl AffineStrategy {
    pub fn zeros(steps: usize, control_dim: usize, state_dim: usize) -> Self {
        Self {
            gains: vec![DMatrix::zeros(control_dim, state_dim); steps],
            offsets: vec![DVector::zeros(control_dim); steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.offsets.len()
    }

    /// `-P_t dx - scale * alpha_t`.
    pub fn deviation_control(&self, t: usize, dx: &DVector<f64>, scale: f64) -> DVector<f64> {
        -(&self.gains[t] * dx) - &self.offsets[t] * scale
    }

    pub fn is_finite(&self) -> bool {
        self.gains.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.offsets.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Drops the first step and repeats the last one, keeping the horizon.
    pub fn shifted(&self) -> Self {
        let mut gains: Vec<_> = self.gains.iter().skip(1).cloned().collect();
        let mut offsets: Vec<_> = self.offsets.iter().skip(1).cloned().collect();
        if let (Some(g), Some(a)) = (self.gains.last(), self.offsets.last()) {
            gains.push(g.clone());
            offsets.push(a.clone());
        }
        Self { gains, offsets }
    }
}

/// Linear dynamics plus every player's quadratic cost for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LqGameStage {
    pub dynamics: LinearizedDynamics,
    pub costs: Vec<QuadraticCost>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqGame {
    pub stages: Vec<LqGameStage>,
    pub terminal: Vec<TerminalCost>,
}

impl LqGame {
    pub fn players(&self) -> usize {
        self.terminal.len()
    }

    pub fn state_dim(&self) -> usize {
        self.terminal[0].l.len()
    }

    pub fn control_dims(&self) -> Vec<usize> {
        self.stages[0].dynamics.b.iter().map(|b| b.ncols()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::EmptyInput("LQ game stages"));
        }
        let n = self.players();
        for stage in &self.stages {
            if stage.costs.len() != n || stage.dynamics.b.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "players in LQ stage",
                    expected: n,
                    got: stage.costs.len().min(stage.dynamics.b.len()),
                });
            }
        }
        Ok(())
    }
}

/// Equilibrium strategies together with the players' quadratic value functions
/// `V_i(dx) = 1/2 dx'Z_i dx + zeta_i'dx` at every step.
#[derive(Debug, Clone)]
pub struct LqSolution {
    pub strategies: Vec<AffineStrategy>,
    /// `value_hessians[t][i]`, including the terminal step at `t = T`.
    pub value_hessians: Vec<Vec<DMatrix<f64>>>,
    pub value_gradients: Vec<Vec<DVector<f64>>>,
    /// Largest relative asymmetry of a value matrix before symmetrization.
    pub max_asymmetry: f64,
}

/// Feedback Nash strategies of the LQ game.
pub fn solve_lq_game(game: &LqGame) -> Result<Vec<AffineStrategy>> {
    solve_lq_game_detailed(game).map(|s| s.strategies)
}

pub fn solve_lq_game_detailed(game: &LqGame) -> Result<LqSolution> {
    game.validate()?;
    let players = game.players();
    let n = game.state_dim();
    let dims = game.control_dims();
    let offsets: Vec<usize> = dims.iter().scan(0, |acc, &m| {
        let o = *acc;
        *acc += m;
        Some(o)
    }).collect();
    let total: usize = dims.iter().sum();
    let steps = game.stages.len();

    let mut z: Vec<DMatrix<f64>> = game.terminal.iter().map(|c| c.q.clone()).collect();
    let mut zeta: Vec<DVector<f64>> = game.terminal.iter().map(|c| c.l.clone()).collect();

    let mut strategies: Vec<AffineStrategy> = dims.iter().map(|&m| AffineStrategy::zeros(steps, m, n)).collect();
    let mut value_hessians = vec![Vec::new(); steps + 1];
    let mut value_gradients = vec![Vec::new(); steps + 1];
    value_hessians[steps] = z.clone();
    value_gradients[steps] = zeta.clone();
    let mut max_asymmetry: f64 = 0.0;

    for t in (0..steps).rev() {
        let stage = &game.stages[t];
        let a = &stage.dynamics.a;
        let mut b_all = DMatrix::zeros(n, total);
        for (i, b) in stage.dynamics.b.iter().enumerate() {
            b_all.columns_mut(offsets[i], dims[i]).copy_from(b);
        }

        let mut lhs = DMatrix::zeros(total, total);
        let mut rhs = DMatrix::zeros(total, n + 1);
        for i in 0..players {
            let bi = &stage.dynamics.b[i];
            let bt_z = bi.transpose() * &z[i];
            let row = offsets[i];
            lhs.rows_mut(row, dims[i]).copy_from(&(&bt_z * &b_all));
            let mut diag = lhs.view_mut((row, row), (dims[i], dims[i]));
            diag += &stage.costs[i].control_hessians[i];
            rhs.view_mut((row, 0), (dims[i], n)).copy_from(&(&bt_z * a));
            let ff = bi.transpose() * &zeta[i] + &stage.costs[i].control_gradients[i];
            rhs.view_mut((row, n), (dims[i], 1)).copy_from(&ff);
        }

        let sol = lhs
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularStage { step: t })?;
        let p_all = sol.columns(0, n).into_owned();
        let alpha_all = sol.column(n).into_owned();

        let f = a - &b_all * &p_all;
        let beta = -(&b_all * &alpha_all);

        let gains: Vec<DMatrix<f64>> = (0..players).map(|j| p_all.rows(offsets[j], dims[j]).into_owned()).collect();
        let alphas: Vec<DVector<f64>> = (0..players).map(|j| alpha_all.rows(offsets[j], dims[j]).into_owned()).collect();

        for i in 0..players {
            let cost = &stage.costs[i];
            let zb = &zeta[i] + &z[i] * &beta;
            let mut new_zeta = &cost.l + f.transpose() * zb;
            let mut new_z = &cost.q + f.transpose() * &z[i] * &f;
            for j in 0..players {
                let rij = &cost.control_hessians[j];
                if rij.iter().all(|v| *v == 0.0) && cost.control_gradients[j].iter().all(|v| *v == 0.0) {
                    continue;
                }
                let pt = gains[j].transpose();
                new_z += &pt * rij * &gains[j];
                new_zeta += &pt * (rij * &alphas[j] - &cost.control_gradients[j]);
            }
            let asym = (&new_z - new_z.transpose()).amax() / new_z.amax().max(1e-300);
            max_asymmetry = max_asymmetry.max(asym);
            z[i] = (&new_z + new_z.transpose()) * 0.5;
            zeta[i] = new_zeta;
        }

        for (j, s) in strategies.iter_mut().enumerate() {
            s.gains[t] = gains[j].clone();
            s.offsets[t] = alphas[j].clone();
        }
        value_hessians[t] = z.clone();
        value_gradients[t] = zeta.clone();
    }

    Ok(LqSolution { strategies, value_hessians, value_gradients, max_asymmetry })
}

/// Per-player outcome of a unilateral-deviation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerNashCheck {
    pub player: usize,
    pub equilibrium_cost: f64,
    /// Smallest observed `J_i(perturbed) - J_i(equilibrium)`.
    pub min_cost_change: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub players: Vec<PlayerNashCheck>,
    pub passed: bool,
}

impl NashReport {
    pub fn from_players(players: Vec<PlayerNashCheck>) -> Self {
        let passed = players.iter().all(|p| p.passed);
        Self { players, passed }
    }
}

/// Player costs of the linear-quadratic rollout from `dx_0 = 0`.
pub fn lq_costs(game: &LqGame, strategies: &[AffineStrategy]) -> Vec<f64> {
    let players = game.players();
    let mut dx = DVector::zeros(game.state_dim());
    let mut costs = vec![0.0; players];
    for (t, stage) in game.stages.iter().enumerate() {
        let du: Vec<DVector<f64>> = strategies.iter().map(|s| s.deviation_control(t, &dx, 1.0)).collect();
        for (i, c) in stage.costs.iter().enumerate() {
            costs[i] += c.evaluate(&dx, &du);
        }
        let mut next = &stage.dynamics.a * &dx;
        for (b, d) in stage.dynamics.b.iter().zip(&du) {
            next += b * d;
        }
        dx = next;
    }
    for (i, c) in game.terminal.iter().enumerate() {
        costs[i] += c.value + 0.5 * dx.dot(&(&c.q * &dx)) + c.l.dot(&dx);
    }
    costs
}

/// Returns a copy of `strategy` with every gain and offset entry shifted by a
/// uniform draw in `[-scale, scale]`.
pub fn perturb_strategy<R: Rng + ?Sized>(strategy: &AffineStrategy, scale: f64, rng: &mut R) -> AffineStrategy {
    let mut out = strategy.clone();
    for g in &mut out.gains {
        g.iter_mut().for_each(|v| *v += rng.random_range(-scale..=scale));
    }
    for a in &mut out.offsets {
        a.iter_mut().for_each(|v| *v += rng.random_range(-scale..=scale));
    }
    out
}

/// Checks that no sampled unilateral perturbation improves any player's LQ
/// cost by more than `1e-6`.
pub fn verify_lq_nash<R: Rng + ?Sized>(
    game: &LqGame,
    strategies: &[AffineStrategy],
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> NashReport {
    const TOL: f64 = 1e-6;
    let base = lq_costs(game, strategies);
    let checks = (0..game.players())
        .map(|i| {
            let mut min_change = f64::INFINITY;
            let mut profile = strategies.to_vec();
            for _ in 0..trials {
                profile[i] = perturb_strategy(&strategies[i], scale, rng);
                let c = lq_costs(game, &profile)[i];
                min_change = min_change.min(c - base[i]);
            }
            PlayerNashCheck {
                player: i,
                equilibrium_cost: base[i],
                min_cost_change: min_change,
                passed: min_change >= -TOL,
            }
        })
        .collect();
    NashReport::from_players(checks)
}
