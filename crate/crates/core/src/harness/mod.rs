//! Scenario configuration, closed-loop simulation, experiment commands and
//! run archives.

pub mod config;
pub mod experiment;
pub mod sim;

pub use config::ScenarioConfig;
