//! Routing a fleet of connected automated vehicles (CAVs) for system-wide
//! travel time or energy, on top of selfish user-equilibrium traffic.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cost;
pub mod error;
pub mod experiments;
pub mod network;
mod paths;
pub mod selfcheck;
pub mod so;
pub mod stackelberg;
pub mod synthetic;
pub mod tntp;
pub mod ue;

pub use error::{Error, Result};
