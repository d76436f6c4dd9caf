//! Quadrotor go-to-target control with soft actor-critic.
//!
//! `dynamics` simulates the airframe, `env` wraps it as an MDP, `nn` and
//! `sac` hold the learner, and `harness` runs experiments and writes CSVs.

pub mod dynamics;
pub mod env;
pub mod harness;
pub mod nn;
pub mod sac;
