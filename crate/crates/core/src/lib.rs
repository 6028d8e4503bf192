//! Dynamic-window constrained reinforcement-learning local planner.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] differential-drive kinematics, dynamic windows and arc rollouts.
//! * [`world`] a deterministic 2-D scenario simulator with a planar range sensor.
//! * [`observation`] the sorted `(k² × n × 4)` cost-matrix observation and its action map.
//! * [`reward`] the shaped navigation reward with red/green zone steering.
//! * [`dwa`] the classic dynamic window planner used as baseline.
//! * [`policy`] the convolutional policy, PPO training and checkpoints.
//! * [`eval`] trial batteries, metrics and ablations.
//!
//! Everything runs in a single fixed odometry frame: the scenario's world frame.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dwa;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod observation;
pub mod policy;
pub mod reward;
pub mod world;

pub use error::{Error, Result};
pub use geometry::Point2;
