//! Simulation, training and evaluation of a vision-guided docking
//! controller for a small robot mower.
//!
//! The pieces, bottom up:
//!
//! * [`sim`]: rear-axle unicycle kinematics.
//! * [`vision`]: pinhole projection of the two mower-top markers into the
//!   dock camera, standing in for an object detector.
//! * [`env`]: the episodic task with stacked observations, a discrete
//!   action table and the curriculum rewards.
//! * [`neural`]: the dual-head Q-network, backprop and optimizers.
//! * [`dqn`]: replay, Double DQN targets, soft target updates and the
//!   curriculum driver.
//! * [`eval`]: the 90-run evaluation grid and its report.

pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod neural;
pub mod sim;
pub mod vision;

pub use config::DockConfig;
pub use error::{DockError, Result};
