//! Scenario configuration, read from a TOML file.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{CostWeights, PlayerCost};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::ilqgames::SolverSettings;
use crate::inference::SeedDistribution;
use crate::trajectory::JointState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub players: usize,
    /// Per player `[p_x, p_y, theta, v]`.
    pub initial_states: Vec<[f64; 4]>,
    pub goal_states: Vec<[f64; 4]>,
    pub weights: CostWeights,
    pub dt: f64,
    /// Closed-loop simulation length `T_s` in seconds.
    pub simulation_horizon: f64,
    /// Game and prediction horizon `T_p` in seconds.
    pub prediction_horizon: f64,
    pub particles: usize,
    pub observation_noise: f64,
    pub merge_tolerance: f64,
    #[serde(default)]
    pub execution_noise: f64,
    pub seeds: SeedDistribution,
    pub solver: SolverSettings,
    pub rng_seed: u64,
    /// Index of the autonomous agent.
    #[serde(default)]
    pub robot: usize,
    /// Particle trajectories are archived every this many steps.
    #[serde(default = "default_archive_stride")]
    pub archive_stride: usize,
}

fn default_archive_stride() -> usize {
    10
}

fn steps_of(horizon: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = horizon / dt;
    let steps = ratio.round();
    if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!("{what} {horizon} is not a positive multiple of dt {dt}")));
    }
    Ok(steps as usize)
}

impl ScenarioConfig {
    /// Players evenly spaced on a circle of `radius`, facing the center, with
    /// antipodal goals; player 0 starts at angle `phase`.
    pub fn circle_geometry(players: usize, radius: f64, phase: f64, speed: f64) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
        let mut starts = Vec::with_capacity(players);
        let mut goals = Vec::with_capacity(players);
        for i in 0..players {
            let angle = phase + 2.0 * PI * i as f64 / players as f64;
            let (s, c) = angle.sin_cos();
            let heading = angle + PI;
            starts.push([radius * c, radius * s, heading, speed]);
            goals.push([-radius * c, -radius * s, heading, 0.0]);
        }
        (starts, goals)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.players < 2 {
            return Err(Error::Config("a scenario needs at least two players".into()));
        }
        if self.initial_states.len() != self.players || self.goal_states.len() != self.players {
            return Err(Error::Config("need one initial and one goal state per player".into()));
        }
        if self.robot >= self.players {
            return Err(Error::Config("robot index out of range".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        steps_of(self.simulation_horizon, self.dt, "simulation horizon")?;
        steps_of(self.prediction_horizon, self.dt, "prediction horizon")?;
        if self.particles == 0 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if !(self.observation_noise > 0.0) {
            return Err(Error::Config("observation noise must be positive".into()));
        }
        if !(self.merge_tolerance >= 0.0) || !(self.execution_noise >= 0.0) {
            return Err(Error::Config("tolerances must be non-negative".into()));
        }
        self.weights.validate()?;
        self.seeds.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    pub fn simulation_steps(&self) -> usize {
        steps_of(self.simulation_horizon, self.dt, "simulation horizon").expect("validated")
    }

    pub fn horizon_steps(&self) -> usize {
        steps_of(self.prediction_horizon, self.dt, "prediction horizon").expect("validated")
    }

    pub fn initial_state(&self) -> JointState {
        JointState::from_iterator(4 * self.players, self.initial_states.iter().flatten().copied())
    }

    /// Game over the receding prediction horizon.
    pub fn game(&self) -> Result<GameDefinition> {
        self.game_with_steps(self.horizon_steps())
    }

    pub fn game_with_steps(&self, steps: usize) -> Result<GameDefinition> {
        let costs = (0..self.players)
            .map(|i| PlayerCost::new(i, self.players, self.goal_states[i], self.weights))
            .collect::<Result<Vec<_>>>()?;
        GameDefinition::new(costs, self.dt, steps)
    }

    /// Default two-player crossing scenario: orthogonal paths through the origin.
    pub fn two_player() -> Self {
        let (initial_states, goal_states) = Self::circle_geometry_with_angles(&[0.0, 0.5 * PI], 3.0, 1.0);
        Self::base("two_player", initial_states, goal_states, 50)
    }

    pub fn three_player() -> Self {
        let (initial_states, goal_states) = Self::circle_geometry(3, 3.0, 0.0, 1.0);
        Self::base("three_player", initial_states, goal_states, 50)
    }

    pub fn five_player() -> Self {
        let (initial_states, goal_states) = Self::circle_geometry(5, 3.0, 0.0, 1.0);
        Self::base("five_player", initial_states, goal_states, 150)
    }

    /// Like [`Self::circle_geometry`] with explicit start angles.
    pub fn circle_geometry_with_angles(angles: &[f64], radius: f64, speed: f64) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
        angles
            .iter()
            .map(|&angle| {
                let (s, c) = angle.sin_cos();
                let heading = angle + PI;
                ([radius * c, radius * s, heading, speed], [-radius * c, -radius * s, heading, 0.0])
            })
            .unzip()
    }

    fn base(name: &str, initial_states: Vec<[f64; 4]>, goal_states: Vec<[f64; 4]>, particles: usize) -> Self {
        Self {
            name: name.into(),
            players: initial_states.len(),
            initial_states,
            goal_states,
            weights: CostWeights::default(),
            dt: 0.1,
            simulation_horizon: 10.0,
            prediction_horizon: 10.0,
            particles,
            observation_noise: 0.1,
            merge_tolerance: 0.25,
            execution_noise: 0.0,
            seeds: SeedDistribution::default(),
            solver: SolverSettings::default(),
            rng_seed: 0,
            robot: 0,
            archive_stride: default_archive_stride(),
        }
    }
}
