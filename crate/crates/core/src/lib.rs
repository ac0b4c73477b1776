//! Multi-player unicycle games solved by iterated LQ approximations, particle
//! inference over which local equilibrium the other players follow, and a
//! receding-horizon planner that aligns with the most likely one.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod harness;
pub mod ilqgames;
pub mod inference;
pub mod lqgame;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
