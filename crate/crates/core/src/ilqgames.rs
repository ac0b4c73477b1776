//! Iterative LQ game solver.
//!
//! Each outer iteration simulates the current strategies, builds the LQ
//! approximation of the game along the resulting trajectory, solves it with the
//! coupled Riccati recursion, and applies the new feedforward terms with a
//! backtracked step size. The fixed points are approximate local Nash
//! equilibria; from a given warm start the solver is deterministic.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::Regularization;
use crate::dynamics::{integrate, Dynamics};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::lqgame::{perturb_strategy, solve_lq_game, AffineStrategy, NashReport, PlayerNashCheck};
use crate::trajectory::{JointControl, JointState, Trajectory};

/// State magnitude above which a rollout counts as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Threshold on the max elementwise state change between iterations.
    pub convergence_tol: f64,
    pub step_size: f64,
    pub backtracking_shrink: f64,
    pub max_backtracks: usize,
    /// Relative increase of the summed player cost that triggers backtracking.
    #[serde(default = "default_cost_increase_tolerance")]
    pub cost_increase_tolerance: f64,
    /// Added to every player's own control Hessian.
    pub regularization: f64,
    /// Regularization is multiplied by 10 this many times on singular stages.
    #[serde(default = "default_regularization_attempts")]
    pub max_regularization_attempts: usize,
}

fn default_cost_increase_tolerance() -> f64 {
    0.1
}

fn default_regularization_attempts() -> usize {
    4
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_tol: 1e-2,
            step_size: 0.5,
            backtracking_shrink: 0.5,
            max_backtracks: 8,
            cost_increase_tolerance: default_cost_increase_tolerance(),
            regularization: 1e-6,
            max_regularization_attempts: default_regularization_attempts(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.convergence_tol > 0.0
            && self.step_size > 0.0
            && self.step_size <= 1.0
            && self.backtracking_shrink > 0.0
            && self.backtracking_shrink < 1.0
            && self.regularization >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver settings: {self:?}")))
        }
    }
}

/// Feedback strategies of all players in deviation form about a reference
/// trajectory: `u_i(t, x) = u_ref_i(t) - P_i(t) (x - x_ref(t)) - alpha_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub reference: Trajectory,
    pub strategies: Vec<AffineStrategy>,
}

impl StrategyProfile {
    /// Open-loop profile applying `controls[t]` regardless of the state.
    pub fn open_loop(game: &GameDefinition, controls: &[JointControl]) -> Result<Self> {
        if controls.len() != game.steps {
            return Err(Error::HorizonMismatch { expected: game.steps, got: controls.len() });
        }
        let dynamics = game.dynamics();
        let n = game.state_dim();
        let reference = Trajectory::constant(&DVector::zeros(n), game.control_dim(), game.steps);
        let strategies = (0..game.players)
            .map(|i| {
                let r = dynamics.control_range(i);
                let mut s = AffineStrategy::zeros(game.steps, r.len(), n);
                for (a, u) in s.offsets.iter_mut().zip(controls) {
                    *a = -u.rows(r.start, r.len()).into_owned();
                }
                s
            })
            .collect();
        Ok(Self { reference, strategies })
    }

    pub fn steps(&self) -> usize {
        self.reference.steps()
    }

    /// Joint control at step `t`, with feedforward terms scaled by `step_size`.
    pub fn control<D: Dynamics + ?Sized>(&self, dynamics: &D, t: usize, x: &JointState, step_size: f64) -> JointControl {
        let dx = x - &self.reference.states[t];
        let mut u = self.reference.controls[t].clone();
        for (i, s) in self.strategies.iter().enumerate() {
            let r = dynamics.control_range(i);
            let du = s.deviation_control(t, &dx, step_size);
            let mut block = u.rows_mut(r.start, r.len());
            block += du;
        }
        u
    }

    /// Control of one player at step `t`.
    pub fn player_control<D: Dynamics + ?Sized>(&self, dynamics: &D, player: usize, t: usize, x: &JointState) -> DVector<f64> {
        let r = dynamics.control_range(player);
        let dx = x - &self.reference.states[t];
        self.reference.controls[t].rows(r.start, r.len()) + self.strategies[player].deviation_control(t, &dx, 1.0)
    }

    /// Receding-horizon warm start one step later: drops the first step and
    /// extends the tail by repeating the last control.
    pub fn shifted<D: Dynamics + ?Sized>(&self, dynamics: &D, dt: f64) -> Result<Self> {
        let steps = self.steps();
        let mut states: Vec<_> = self.reference.states.iter().skip(1).cloned().collect();
        let mut controls: Vec<_> = self.reference.controls.iter().skip(1).cloned().collect();
        let last_u = self.reference.controls[steps - 1].clone();
        let tail = integrate(dynamics, steps, self.reference.final_state(), &last_u, dt)?;
        states.push(tail);
        controls.push(last_u);
        Ok(Self {
            reference: Trajectory::new(states, controls)?,
            strategies: self.strategies.iter().map(AffineStrategy::shifted).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.reference.is_finite() && self.strategies.iter().all(AffineStrategy::is_finite)
    }
}

/// Closed-loop simulation of `strategies` in deviation form about `reference`.
pub fn rollout<D: Dynamics + ?Sized>(
    dynamics: &D,
    dt: f64,
    x0: &JointState,
    strategies: &[AffineStrategy],
    reference: &Trajectory,
    step_size: f64,
) -> Result<Trajectory> {
    let steps = reference.steps();
    if let Some(s) = strategies.iter().find(|s| s.steps() != steps) {
        return Err(Error::HorizonMismatch { expected: steps, got: s.steps() });
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(x0.clone());
    for t in 0..steps {
        let x = &states[t];
        let dx = x - &reference.states[t];
        let mut u = reference.controls[t].clone();
        for (i, s) in strategies.iter().enumerate() {
            let r = dynamics.control_range(i);
            let mut block = u.rows_mut(r.start, r.len());
            block += s.deviation_control(t, &dx, step_size);
        }
        let next = integrate(dynamics, t, x, &u, dt).map_err(|_| Error::Divergence { step: t })?;
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence { step: t });
        }
        states.push(next);
        controls.push(u);
    }
    Ok(Trajectory { states, controls })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Converged strategies expressed about their own closed-loop trajectory.
    pub profile: StrategyProfile,
    pub converged: bool,
    pub iterations: usize,
    pub costs: Vec<f64>,
}

impl SolveResult {
    pub fn trajectory(&self) -> &Trajectory {
        &self.profile.reference
    }

    pub fn strategies(&self) -> &[AffineStrategy] {
        &self.profile.strategies
    }
}

/// Runs the iterative LQ game solver from `x0`, warm-started at `warm_start`.
pub fn ilq_solve(
    game: &GameDefinition,
    x0: &JointState,
    warm_start: &StrategyProfile,
    settings: &SolverSettings,
) -> Result<SolveResult> {
    game.check_state(x0)?;
    if warm_start.steps() != game.steps {
        return Err(Error::HorizonMismatch { expected: game.steps, got: warm_start.steps() });
    }
    let dynamics = game.dynamics();
    let mut current = rollout(&dynamics, game.dt, x0, &warm_start.strategies, &warm_start.reference, 1.0)?;
    let mut current_cost: f64 = game.total_costs(&current).iter().sum();
    let mut gains: Vec<AffineStrategy> = warm_start.strategies.clone();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let lq = solve_with_regularization(game, &current, settings)?;

        let mut step = settings.step_size;
        let mut accepted: Option<(Trajectory, f64)> = None;
        let mut fallback: Option<(Trajectory, f64)> = None;
        let mut backtracked = false;
        for attempt in 0..=settings.max_backtracks {
            if attempt > 0 {
                step *= settings.backtracking_shrink;
                backtracked = true;
            }
            let Ok(candidate) = rollout(&dynamics, game.dt, x0, &lq, &current, step) else {
                continue;
            };
            let cost: f64 = game.total_costs(&candidate).iter().sum();
            if cost.is_finite() && cost <= current_cost * (1.0 + settings.cost_increase_tolerance) {
                accepted = Some((candidate, cost));
                break;
            }
            if cost.is_finite() {
                fallback = Some((candidate, cost));
            }
        }
        let (next, next_cost) = match accepted.or(fallback) {
            Some(c) => c,
            None => return Err(Error::Divergence { step: 0 }),
        };

        let change = next.max_state_change(&current);
        gains = lq;
        // The nominal whose own update is below tolerance is the one returned,
        // so re-solving from it reproduces this last step.
        if change < settings.convergence_tol && !backtracked {
            converged = true;
            break;
        }
        current = next;
        current_cost = next_cost;
    }

    // Re-expressed about their own rollout the feedforward terms vanish.
    for s in &mut gains {
        s.offsets.iter_mut().for_each(|a| a.fill(0.0));
    }
    let costs = game.total_costs(&current);
    Ok(SolveResult {
        profile: StrategyProfile { reference: current, strategies: gains },
        converged,
        iterations,
        costs,
    })
}

fn solve_with_regularization(
    game: &GameDefinition,
    nominal: &Trajectory,
    settings: &SolverSettings,
) -> Result<Vec<AffineStrategy>> {
    let mut reg = Regularization { project_state_hessian: true, control: settings.regularization };
    let mut attempt = 0;
    loop {
        let lq = game.approximate(nominal, reg)?;
        match solve_lq_game(&lq) {
            Ok(s) => return Ok(s),
            Err(Error::SingularStage { step }) if attempt < settings.max_regularization_attempts => {
                let _ = step;
                attempt += 1;
                reg.control = (reg.control * 10.0).max(1e-6);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Relative improvement bound for the nonlinear unilateral-deviation test.
pub const NASH_TOLERANCE: f64 = 1e-3;

/// Samples unilateral perturbations of each player's strategy, simulates them
/// on the nonlinear dynamics, and checks that none lowers that player's total
/// cost by more than [`NASH_TOLERANCE`] relative.
pub fn verify_local_nash<R: Rng + ?Sized>(
    game: &GameDefinition,
    result: &SolveResult,
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> NashReport {
    let dynamics = game.dynamics();
    let profile = &result.profile;
    let x0 = profile.reference.initial_state();
    let checks = (0..game.players)
        .map(|i| {
            let base = result.costs[i];
            let mut min_change = f64::INFINITY;
            let mut strategies = profile.strategies.clone();
            for _ in 0..trials {
                strategies[i] = perturb_strategy(&profile.strategies[i], scale, rng);
                let change = match rollout(&dynamics, game.dt, x0, &strategies, &profile.reference, 1.0) {
                    Ok(traj) => game.costs[i].total_cost(&traj, game.dt) - base,
                    Err(_) => f64::INFINITY,
                };
                min_change = min_change.min(change);
            }
            PlayerNashCheck {
                player: i,
                equilibrium_cost: base,
                min_cost_change: min_change,
                passed: -min_change <= NASH_TOLERANCE * base.abs(),
            }
        })
        .collect();
    NashReport::from_players(checks)
}
