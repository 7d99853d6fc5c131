//! Simulation of point-queue traffic networks with state-dependent outflow
//! controls, solved as a reflected fixed-point problem.

pub mod cli;
pub mod controllers;
pub mod error;
pub mod network;
pub mod reflection;
pub mod scenario;
pub mod oracle;
pub mod output;
pub mod solver;
pub mod verify;

pub use error::{FlowError, Result};
