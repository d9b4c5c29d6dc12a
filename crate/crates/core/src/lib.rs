//! Simulation and analysis toolkit for superparamagnetic tunnel junctions
//! (SMTJs) coupled through a programmable analog interaction circuit.
//!
//! The crate is organized bottom-up:
//!
//! - [`device`]: single-junction dwell times, occupancy and dwell sampling.
//! - [`analog`]: the threshold, gain, level-shift and transconductance stages
//!   and their composition into a two-level drive current.
//! - [`simnet`]: exact event-driven simulation of N coupled junctions with a
//!   propagation delay.
//! - [`markov`]: the four-state generator of a coupled pair, its steady
//!   state, spectrum and joint dwell times.
//! - [`stats`]: trace sampling analysis, joint dwell statistics and Pearson
//!   correlation.
//! - [`anneal`]: Ising energies, Boltzmann predictions and gain-schedule
//!   annealing runs.

pub mod analog;
pub mod anneal;
pub mod device;
mod error;
pub mod markov;
pub mod presets;
pub mod rng;
pub mod simnet;
pub mod stats;

pub use error::{Error, Result};
