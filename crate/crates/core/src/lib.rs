//! Learning motor-sequence representations from sensorimotor prediction in
//! simulated 2D agents.

pub mod data;
pub mod env;
pub mod geom;
pub mod model;
pub mod nn;
pub mod analysis;
