//! Residence-mobility matrices from GPS pings, and a multi-patch SEIRS simulator.

pub mod bridge;
pub mod config;
pub mod error;
pub mod geo;
pub mod occupancy;
pub mod optimize;
pub mod pings;
pub mod pipeline;
pub mod residence;
pub mod rng;
pub mod seirs;
pub mod synth;

pub use error::{Error, Result};
