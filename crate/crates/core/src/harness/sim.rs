//! Closed-loop simulations: a world in which the humans follow a secret
//! equilibrium, observed by a predictor or shared with a planning robot.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, Dynamics};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::harness::config::ScenarioConfig;
use crate::inference::{
    initialize_belief, map_particle, robot_control, sample_seeds, update_belief, Belief, KnownControl, Particle,
    SeedParams,
};
use crate::rng::{run_seed, stream, streams};
use crate::trajectory::{positions, JointControl, JointState, Trajectory};

/// How the observer or robot forms its belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full particle belief with reweighting (`inference` / `map-aligned`).
    Inference,
    /// A single randomly sampled equilibrium, re-solved every step.
    RandomBaseline,
}

impl Mode {
    pub fn parse_predict(s: &str) -> Result<Self> {
        match s {
            "inference" => Ok(Self::Inference),
            "random-baseline" => Ok(Self::RandomBaseline),
            _ => Err(Error::InvalidArgument(format!("unknown predict mode {s:?}; expected inference or random-baseline"))),
        }
    }

    pub fn parse_plan(s: &str) -> Result<Self> {
        match s {
            "map-aligned" => Ok(Self::Inference),
            "random-baseline" => Ok(Self::RandomBaseline),
            _ => Err(Error::InvalidArgument(format!("unknown plan mode {s:?}; expected map-aligned or random-baseline"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleRecord {
    pub id: usize,
    pub members: Vec<usize>,
    pub log_weight: f64,
    pub weight: f64,
    pub predicted_state: Option<Vec<f64>>,
    /// Joint positions of the particle's planned trajectory, subsampled.
    pub trajectory: Vec<Vec<f64>>,
}

/// Everything that happened at one simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub state: Vec<f64>,
    pub controls: Vec<f64>,
    pub particles: Vec<ParticleRecord>,
    pub map_id: Option<usize>,
    /// Joint positions predicted from this step over the game horizon.
    pub prediction: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub mode: Mode,
    pub run_seed: u64,
    pub truth_seed: SeedParams,
    /// Per-player total cost of the executed closed-loop trajectory.
    pub total_costs: Vec<f64>,
    /// Steps during which the observer or robot was active.
    pub active_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

/// Positions along a trajectory every `stride` steps, always including the end.
pub fn subsample_positions(traj: &Trajectory, stride: usize) -> Vec<Vec<f64>> {
    let stride = stride.max(1);
    let last = traj.steps();
    (0..=last)
        .filter(|t| t % stride == 0 || *t == last)
        .map(|t| positions(&traj.states[t]).iter().copied().collect())
        .collect()
}

fn particle_records(belief: &Belief, stride: usize) -> Result<Vec<ParticleRecord>> {
    let weights = belief.normalized_weights()?;
    Ok(belief
        .particles
        .iter()
        .zip(weights)
        .map(|(p, weight)| ParticleRecord {
            id: p.id,
            members: p.members.clone(),
            log_weight: p.log_weight,
            weight,
            predicted_state: p.predicted_state.as_ref().map(|x| x.iter().copied().collect()),
            trajectory: subsample_positions(p.trajectory(), stride),
        })
        .collect())
}

/// The humans' side of the world: a secret equilibrium re-solved from the
/// actual state every step, plus optional Gaussian execution noise.
pub struct HumanWorld<R> {
    pub truth: Particle,
    noise: Option<Normal<f64>>,
    rng: R,
}

impl<R: Rng> HumanWorld<R> {
    pub fn new(truth: Particle, execution_noise: f64, rng: R) -> Result<Self> {
        let noise = if execution_noise > 0.0 {
            Some(Normal::new(0.0, execution_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { truth, noise, rng })
    }

    /// Joint control the humans' equilibrium prescribes at `x`, noise included.
    pub fn controls(&mut self, game: &GameDefinition, step: usize, x: &JointState, settings: &crate::ilqgames::SolverSettings) -> Result<JointControl> {
        self.truth.resolve(game, x, step, settings)?;
        let mut u = self.truth.profile().control(&game.dynamics(), 0, x, 1.0);
        if let Some(n) = &self.noise {
            for v in u.iter_mut() {
                *v += n.sample(&mut self.rng);
            }
        }
        Ok(u)
    }
}

fn solve_truth(cfg: &ScenarioConfig, game: &GameDefinition, seed: u64) -> Result<(SeedParams, Particle)> {
    let (params, profile) = sample_seeds(&cfg.seeds, game, 1, seed)?.remove(0);
    let belief = initialize_belief(game, &cfg.initial_state(), &[profile], &cfg.solver)?;
    Ok((params, belief.particles.into_iter().next().ok_or(Error::EstimatorCollapse)?))
}

fn observer_belief(cfg: &ScenarioConfig, game: &GameDefinition, mode: Mode, seed: u64) -> Result<Belief> {
    let (count, s) = match mode {
        Mode::Inference => (cfg.particles, stream_seed(seed, streams::SEEDS)),
        Mode::RandomBaseline => (1, stream_seed(seed, streams::BASELINE)),
    };
    let seeds: Vec<_> = sample_seeds(&cfg.seeds, game, count, s)?.into_iter().map(|(_, p)| p).collect();
    initialize_belief(game, &cfg.initial_state(), &seeds, &cfg.solver)
}

/// Independent 64-bit seed for one consumer within a run.
pub fn stream_seed(run_seed: u64, id: u64) -> u64 {
    use rand::RngCore;
    stream(run_seed, id).next_u64()
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Index of the MAP particle, re-solved from `x` at `step`.
fn refresh_map(belief: &mut Belief, game: &GameDefinition, x: &JointState, step: usize, cfg: &ScenarioConfig) -> Result<usize> {
    let id = map_particle(belief)?.id;
    let idx = belief.particles.iter().position(|p| p.id == id).expect("map particle present");
    belief.particles[idx].resolve(game, x, step, &cfg.solver)?;
    Ok(idx)
}

/// Secret equilibrium and initial belief of one run.
pub struct RunSetup {
    pub game: GameDefinition,
    pub run_seed: u64,
    pub truth_seed: SeedParams,
    pub truth: Particle,
    pub belief: Belief,
}

/// Draws the humans' equilibrium and the observer's belief for `run`.
pub fn setup_run(cfg: &ScenarioConfig, run: usize, mode: Mode) -> Result<RunSetup> {
    let game = cfg.game()?;
    let seed = run_seed(cfg.rng_seed, run);
    let (truth_seed, truth) = solve_truth(cfg, &game, stream_seed(seed, streams::TRUTH))?;
    let belief = observer_belief(cfg, &game, mode, seed)?;
    Ok(RunSetup { game, run_seed: seed, truth_seed, truth, belief })
}

fn finish(cfg: &ScenarioConfig, setup: RunSetup, run: usize, mode: Mode, sim: Simulated) -> RunOutput {
    let summary = RunSummary {
        run,
        mode,
        run_seed: setup.run_seed,
        truth_seed: setup.truth_seed,
        total_costs: setup.game.total_costs(&sim.executed),
        active_steps: cfg.simulation_steps(),
    };
    RunOutput { records: sim.records, summary }
}

/// Records of a simulation and the executed trajectory over the active window.
pub struct Simulated {
    pub records: Vec<StepRecord>,
    pub executed: Trajectory,
}

/// One prediction run: all players follow the secret equilibrium and the
/// observer predicts the joint trajectory over the horizon at every step of
/// the simulation window.
pub fn run_prediction(cfg: &ScenarioConfig, run: usize, mode: Mode) -> Result<RunOutput> {
    let setup = setup_run(cfg, run, mode)?;
    let mut world = HumanWorld::new(setup.truth.clone(), cfg.execution_noise, stream(setup.run_seed, streams::EXECUTION_NOISE))?;
    let sim = simulate_prediction(cfg, &setup.game, &mut world, setup.belief.clone())?;
    Ok(finish(cfg, setup, run, mode, sim))
}

/// The world keeps running one horizon past the simulation window so that
/// every prediction has ground truth.
pub fn simulate_prediction<R: Rng>(
    cfg: &ScenarioConfig,
    game: &GameDefinition,
    world: &mut HumanWorld<R>,
    mut belief: Belief,
) -> Result<Simulated> {
    let dynamics = game.dynamics();
    let active = cfg.simulation_steps();
    let total = active + game.steps;
    let mut x = cfg.initial_state();
    let mut x_prev = x.clone();
    let mut records = Vec::with_capacity(total + 1);
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(total);
    for t in 0..=total {
        let mut record = StepRecord { step: t, state: to_vec(&x), controls: Vec::new(), particles: Vec::new(), map_id: None, prediction: None };
        if t < active {
            if t > 0 {
                belief = update_belief(belief, game, &cfg.solver, t, &x, &x_prev, &[], cfg.observation_noise, cfg.merge_tolerance)?;
            }
            let idx = refresh_map(&mut belief, game, &x, t, cfg)?;
            let map = &belief.particles[idx];
            record.map_id = Some(map.id);
            record.prediction = Some(map.trajectory().states.iter().map(|s| to_vec(&positions(s))).collect());
            record.particles = particle_records(&belief, cfg.archive_stride)?;
        }
        if t < total {
            let u = world.controls(game, t, &x, &cfg.solver)?;
            record.controls = to_vec(&u);
            x_prev = x.clone();
            x = integrate(&dynamics, t, &x_prev, &u, game.dt)?;
            states.push(x.clone());
            controls.push(u);
        }
        records.push(record);
    }
    let executed = Trajectory::new(states[..=active].to_vec(), controls[..active].to_vec())?;
    Ok(Simulated { records, executed })
}

/// One planning run: the robot acts on its belief while the humans follow
/// their secret equilibrium.
pub fn run_planning(cfg: &ScenarioConfig, run: usize, mode: Mode) -> Result<RunOutput> {
    let setup = setup_run(cfg, run, mode)?;
    let mut world = HumanWorld::new(setup.truth.clone(), cfg.execution_noise, stream(setup.run_seed, streams::EXECUTION_NOISE))?;
    let sim = simulate_planning(cfg, &setup.game, &mut world, setup.belief.clone())?;
    Ok(finish(cfg, setup, run, mode, sim))
}

pub fn simulate_planning<R: Rng>(
    cfg: &ScenarioConfig,
    game: &GameDefinition,
    world: &mut HumanWorld<R>,
    mut belief: Belief,
) -> Result<Simulated> {
    let dynamics = game.dynamics();
    let robot = cfg.robot;
    let range = dynamics.control_range(robot);
    let steps = cfg.simulation_steps();
    let mut x = cfg.initial_state();
    let mut x_prev = x.clone();
    let mut u_robot_prev = DVector::zeros(range.len());
    let mut records = Vec::with_capacity(steps + 1);
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(steps);
    for t in 0..=steps {
        let mut record = StepRecord { step: t, state: to_vec(&x), controls: Vec::new(), particles: Vec::new(), map_id: None, prediction: None };
        if t < steps {
            if t > 0 {
                let known = [KnownControl { player: robot, control: u_robot_prev.clone() }];
                belief = update_belief(belief, game, &cfg.solver, t, &x, &x_prev, &known, cfg.observation_noise, cfg.merge_tolerance)?;
            }
            let decision = robot_control(&belief, game, robot, t, &x)?;
            record.map_id = Some(decision.map_id);
            record.particles = particle_records(&belief, cfg.archive_stride)?;
            let mut u = world.controls(game, t, &x, &cfg.solver)?;
            u.rows_mut(range.start, range.len()).copy_from(&decision.control);
            record.controls = to_vec(&u);
            u_robot_prev = decision.control;
            x_prev = x.clone();
            x = integrate(&dynamics, t, &x_prev, &u, game.dt)?;
            states.push(x.clone());
            controls.push(u);
        }
        records.push(record);
    }
    Ok(Simulated { records, executed: Trajectory::new(states, controls)? })
}

/// Filter consistency trial: the observer's belief is built from the
/// scenario's seeds, one of its particles is chosen at random as the humans'
/// noise-free equilibrium, and the belief is updated for `max_steps` steps.
/// Returns the first step at which the chosen particle (or the merged particle
/// containing it) holds posterior weight above `threshold`.
pub fn filter_consistency_trial(cfg: &ScenarioConfig, trial: usize, max_steps: usize, threshold: f64) -> Result<Option<usize>> {
    let game = cfg.game()?;
    let dynamics = game.dynamics();
    let seed = run_seed(cfg.rng_seed, trial);
    let mut belief = observer_belief(cfg, &game, Mode::Inference, seed)?;
    let mut pick = stream(seed, streams::TRUTH);
    let chosen = belief.particles[pick.random_range(0..belief.len())].clone();
    let chosen_id = chosen.id;
    let mut world = HumanWorld::new(chosen, 0.0, pick)?;
    let mut x = cfg.initial_state();
    for t in 0..max_steps {
        let u = world.controls(&game, t, &x, &cfg.solver)?;
        let x_prev = x.clone();
        x = integrate(&dynamics, t, &x_prev, &u, game.dt)?;
        belief = update_belief(belief, &game, &cfg.solver, t + 1, &x, &x_prev, &[], cfg.observation_noise, cfg.merge_tolerance)?;
        if belief.weight_of_member(chosen_id)? > threshold {
            return Ok(Some(t + 1));
        }
    }
    Ok(None)
}
