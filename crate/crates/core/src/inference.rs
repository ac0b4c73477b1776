//! Particle approximation of the belief over which equilibrium the other
//! players are following, and the MAP-aligned controller built on it.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, Dynamics};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::ilqgames::{ilq_solve, SolveResult, SolverSettings, StrategyProfile};
use crate::lqgame::AffineStrategy;
use crate::trajectory::{positions, JointControl, JointState, Trajectory};

/// Uniform ranges of the cosine seed-strategy amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedDistribution {
    pub turn_rate: [f64; 2],
    pub acceleration: [f64; 2],
    /// Period parameter `T` of the cosine; the game horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl Default for SeedDistribution {
    fn default() -> Self {
        Self { turn_rate: [-0.5, 0.5], acceleration: [-0.3, 0.3], horizon: None }
    }
}

impl SeedDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ok(self.turn_rate) || !ok(self.acceleration) {
            return Err(Error::Config("seed ranges must be finite and ordered".into()));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::Config("seed horizon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Amplitudes `[beta_omega, beta_a]` per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedParams {
    pub amplitudes: Vec<[f64; 2]>,
}

impl SeedParams {
    /// Seed control of `player` at time `t` for period `horizon`.
    pub fn control_at(&self, player: usize, t: f64, horizon: f64) -> [f64; 2] {
        let c = (t / horizon * PI).cos();
        let [w, a] = self.amplitudes[player];
        [w * c, a * c]
    }

    pub fn controls(&self, game: &GameDefinition, horizon: f64) -> Vec<JointControl> {
        (0..game.steps)
            .map(|k| {
                let t = k as f64 * game.dt;
                DVector::from_iterator(
                    2 * game.players,
                    (0..game.players).flat_map(|i| self.control_at(i, t, horizon)),
                )
            })
            .collect()
    }

    pub fn profile(&self, game: &GameDefinition, dist: &SeedDistribution) -> Result<StrategyProfile> {
        let horizon = dist.horizon.unwrap_or(game.steps as f64 * game.dt);
        StrategyProfile::open_loop(game, &self.controls(game, horizon))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Draws `count` independent seed parameter sets.
pub fn sample_seed_params<R: Rng + ?Sized>(dist: &SeedDistribution, players: usize, count: usize, rng: &mut R) -> Vec<SeedParams> {
    (0..count)
        .map(|_| SeedParams {
            amplitudes: (0..players)
                .map(|_| {
                    let w = uniform(rng, dist.turn_rate);
                    let a = uniform(rng, dist.acceleration);
                    [w, a]
                })
                .collect(),
        })
        .collect()
}

/// `count` open-loop seed profiles, deterministic in `rng_seed`.
pub fn sample_seeds(
    dist: &SeedDistribution,
    game: &GameDefinition,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<(SeedParams, StrategyProfile)>> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut rng = crate::rng::stream(rng_seed, crate::rng::streams::SEEDS);
    sample_seed_params(dist, game.players, count, &mut rng)
        .into_iter()
        .map(|p| {
            let profile = p.profile(game, dist)?;
            Ok((p, profile))
        })
        .collect()
}

/// Total order used wherever a log-weight has to be compared; `-inf` sorts last.
fn weight_key(p: &Particle) -> (f64, std::cmp::Reverse<usize>) {
    (p.log_weight, std::cmp::Reverse(p.id))
}

/// One equilibrium hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: usize,
    /// Ids of every original particle merged into this one (including `id`).
    pub members: Vec<usize>,
    pub result: SolveResult,
    /// Simulation step of the state the current solution starts from.
    pub solved_at: usize,
    pub log_weight: f64,
    /// Last one-step prediction `x_hat`.
    pub predicted_state: Option<JointState>,
}

impl Particle {
    pub fn profile(&self) -> &StrategyProfile {
        &self.result.profile
    }

    /// Planned trajectory of the current solution.
    pub fn trajectory(&self) -> &Trajectory {
        self.result.trajectory()
    }

    /// Re-solves from `x` at simulation step `step`, warm-started from the
    /// current solution advanced to that step. A solution already anchored at
    /// `step` is kept as is.
    pub fn resolve(&mut self, game: &GameDefinition, x: &JointState, step: usize, settings: &SolverSettings) -> Result<()> {
        if self.solved_at == step {
            return Ok(());
        }
        if step < self.solved_at {
            return Err(Error::InvalidArgument(format!(
                "particle {} is solved at step {}, cannot re-solve at earlier step {step}",
                self.id, self.solved_at
            )));
        }
        let dynamics = game.dynamics();
        let mut warm = self.result.profile.clone();
        for _ in self.solved_at..step {
            warm = warm.shifted(&dynamics, game.dt)?;
        }
        self.result = ilq_solve(game, x, &warm, settings)?;
        self.solved_at = step;
        Ok(())
    }
}

/// Particle belief over equilibria with log-domain weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub particles: Vec<Particle>,
}

/// Particles whose log-weight falls this far below the maximum are dropped.
pub const PRUNE_LOG_RATIO: f64 = 700.0;

impl Belief {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn max_log_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `log(sum_k exp(log_weight_k))`.
    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(self.particles.iter().map(|p| p.log_weight))
    }

    /// Weights normalized to sum to one, in particle order.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let z = self.log_normalizer();
        if !z.is_finite() {
            return Err(Error::EstimatorCollapse);
        }
        Ok(self.particles.iter().map(|p| (p.log_weight - z).exp()).collect())
    }

    /// Normalized weight of the particle whose members include `original_id`.
    pub fn weight_of_member(&self, original_id: usize) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self
            .particles
            .iter()
            .zip(w)
            .find(|(p, _)| p.members.contains(&original_id))
            .map_or(0.0, |(_, w)| w))
    }

    /// Removes eliminated particles and those negligible relative to the best.
    pub fn prune(&mut self) {
        let max = self.max_log_weight();
        self.particles.retain(|p| p.log_weight > f64::NEG_INFINITY && p.log_weight >= max - PRUNE_LOG_RATIO);
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles.iter().any(|p| p.log_weight.is_nan() || p.log_weight == f64::INFINITY) {
            return Err(Error::NonFinite("particle log-weight"));
        }
        if !(self.max_log_weight() > f64::NEG_INFINITY) {
            return Err(Error::EstimatorCollapse);
        }
        Ok(())
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Solves the game from `x0` at every seed; all particles start with weight 1.
pub fn initialize_belief(
    game: &GameDefinition,
    x0: &JointState,
    seeds: &[StrategyProfile],
    settings: &SolverSettings,
) -> Result<Belief> {
    let results: Vec<Result<SolveResult>> = seeds.par_iter().map(|s| ilq_solve(game, x0, s, settings)).collect();
    let particles: Vec<Particle> = results
        .into_iter()
        .enumerate()
        .filter_map(|(id, r)| {
            r.ok().map(|result| Particle {
                id,
                members: vec![id],
                result,
                solved_at: 0,
                log_weight: 0.0,
                predicted_state: None,
            })
        })
        .collect();
    let belief = Belief { particles };
    belief.validate()?;
    Ok(belief)
}

/// A control that was actually applied by `player` and is therefore known.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownControl {
    pub player: usize,
    pub control: DVector<f64>,
}

/// One-step prediction from `x_prev` when every player without a known
/// control follows the particle's strategies, evaluated on the actual state.
pub fn predict_step(game: &GameDefinition, particle: &Particle, x_prev: &JointState, known: &[KnownControl]) -> Result<JointState> {
    let dynamics = game.dynamics();
    let mut u = particle.profile().control(&dynamics, 0, x_prev, 1.0);
    for k in known {
        let r = dynamics.control_range(k.player);
        u.rows_mut(r.start, r.len()).copy_from(&k.control);
    }
    let next = integrate(&dynamics, 0, x_prev, &u, game.dt).map_err(|_| Error::Divergence { step: 0 })?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(next)
}

/// Log-density of `N(x_hat, eps * I)` at `x`.
pub fn likelihood(x: &JointState, x_hat: &JointState, observation_noise: f64) -> f64 {
    let d = x.len() as f64;
    let r2 = (x - x_hat).norm_squared();
    -0.5 * d * (2.0 * PI * observation_noise).ln() - r2 / (2.0 * observation_noise)
}

/// Max over time of the Euclidean distance between stacked joint positions.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (positions(x) - positions(y)).norm())
        .fold(0.0, f64::max)
}

/// Greedily merges particles whose planned trajectories lie within
/// `merge_tol` of a higher-weight representative; weights are summed.
pub fn combine_duplicates(belief: Belief, merge_tol: f64) -> Belief {
    let mut order: Vec<Particle> = belief.particles;
    order.sort_by(|a, b| weight_key(b).partial_cmp(&weight_key(a)).unwrap_or(std::cmp::Ordering::Equal));
    let mut reps: Vec<(Particle, Vec<f64>)> = Vec::new();
    for p in order {
        match reps.iter_mut().find(|(r, _)| trajectory_distance(r.trajectory(), p.trajectory()) <= merge_tol) {
            Some((rep, weights)) => {
                weights.push(p.log_weight);
                rep.members.extend(p.members);
            }
            None => {
                let w = vec![p.log_weight];
                reps.push((p, w));
            }
        }
    }
    let mut particles: Vec<Particle> = reps
        .into_iter()
        .map(|(mut rep, weights)| {
            if weights.len() > 1 {
                rep.log_weight = log_sum_exp(weights.into_iter());
            }
            rep.members.sort_unstable();
            rep
        })
        .collect();
    particles.sort_by_key(|p| p.id);
    Belief { particles }
}

/// Highest-weight particle, ties broken by lowest id.
pub fn map_particle(belief: &Belief) -> Result<&Particle> {
    belief
        .particles
        .iter()
        .filter(|p| p.log_weight > f64::NEG_INFINITY)
        .max_by(|a, b| weight_key(a).partial_cmp(&weight_key(b)).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(Error::EstimatorCollapse)
}

/// Id of the MAP particle and the robot's strategy in it.
pub fn map_strategy(belief: &Belief, robot: usize) -> Result<(usize, AffineStrategy)> {
    let p = map_particle(belief)?;
    Ok((p.id, p.profile().strategies[robot].clone()))
}

/// Belief update for observation `x_t` at simulation step `step`: every
/// particle is re-solved from `x_prev`, predicts `x_t`, and is reweighted by
/// the observation likelihood; duplicates are then merged.
#[allow(clippy::too_many_arguments)]
pub fn update_belief(
    mut belief: Belief,
    game: &GameDefinition,
    settings: &SolverSettings,
    step: usize,
    x_t: &JointState,
    x_prev: &JointState,
    known: &[KnownControl],
    observation_noise: f64,
    merge_tol: f64,
) -> Result<Belief> {
    if step == 0 {
        return Err(Error::InvalidArgument("belief updates start at step 1".into()));
    }
    belief.particles.par_iter_mut().for_each(|p| {
        if p.log_weight == f64::NEG_INFINITY {
            return;
        }
        let outcome = p
            .resolve(game, x_prev, step - 1, settings)
            .and_then(|_| predict_step(game, p, x_prev, known));
        match outcome {
            Ok(x_hat) => {
                p.log_weight += likelihood(x_t, &x_hat, observation_noise);
                p.predicted_state = Some(x_hat);
            }
            Err(_) => {
                p.log_weight = f64::NEG_INFINITY;
                p.predicted_state = None;
            }
        }
    });
    belief.validate()?;
    belief.prune();
    Ok(combine_duplicates(belief, merge_tol))
}

/// Settings of the MAP-aligned controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerSettings {
    pub robot: usize,
    pub observation_noise: f64,
    pub merge_tol: f64,
    pub solver: SolverSettings,
}

/// What the planner decided at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerStep {
    pub control: DVector<f64>,
    pub map_id: usize,
}

/// One iteration of MAP-aligned control at simulation step `step >= 1`:
/// update the belief with `x_t`, pick the MAP equilibrium, and apply the
/// robot's strategy from it at `x_t`.
pub fn map_planner_step(
    belief: Belief,
    step: usize,
    x_t: &JointState,
    x_prev: &JointState,
    u_applied: &DVector<f64>,
    game: &GameDefinition,
    settings: &PlannerSettings,
) -> Result<(PlannerStep, Belief)> {
    let known = [KnownControl { player: settings.robot, control: u_applied.clone() }];
    let belief = update_belief(
        belief,
        game,
        &settings.solver,
        step,
        x_t,
        x_prev,
        &known,
        settings.observation_noise,
        settings.merge_tol,
    )?;
    let decision = robot_control(&belief, game, settings.robot, step, x_t)?;
    Ok((decision, belief))
}

/// Robot control at `x_t` from the MAP particle, whose solution may start at
/// an earlier step.
pub fn robot_control(belief: &Belief, game: &GameDefinition, robot: usize, step: usize, x_t: &JointState) -> Result<PlannerStep> {
    let p = map_particle(belief)?;
    let offset = step.checked_sub(p.solved_at).ok_or_else(|| Error::InvalidArgument("particle solved in the future".into()))?;
    let index = offset.min(game.steps - 1);
    let control = p.profile().player_control(&game.dynamics(), robot, index, x_t);
    Ok(PlannerStep { control, map_id: p.id })
}
