//! Planning for multi-agent stochastic linear systems under probabilistic
//! signal temporal logic specifications.

pub mod budget;
pub mod coordinator;
pub mod encode;
pub mod model;
pub mod plot;
pub mod reach;
pub mod scenario;
pub mod stl;
pub mod tighten;
pub mod verify;
