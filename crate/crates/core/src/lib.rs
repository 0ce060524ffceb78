//! Diffusion-training acceleration toolkit.
//!
//! The forward diffusion process spends most of its steps adding noise to
//! what is already noise. This crate computes closed-form bounds on the
//! per-step process increment, splits the time axis into acceleration,
//! deceleration and convergence bands, and derives two training-time
//! strategies from that analysis:
//!
//! * an asymmetric time-step sampler that suppresses draws from the
//!   convergence band, and
//! * change-aware loss weights that emphasize the steps where the process
//!   changes fastest.
//!
//! A self-contained toy trainer (2-D point clouds, explicit MLP
//! forward/backward, Adam, EMA) demonstrates the strategies end to end,
//! and the `diffusion-accel` binary exposes analysis, training, comparison
//! and sampling as subcommands.
//!
//! The numeric core is generic over the scalar type; the aliases below fix
//! `f64`, which is what the trainer and the CLI use.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod increment;
pub mod nn;
pub mod num;
pub mod schedule;
pub mod sde;
pub mod strategy;
pub mod trainer;

pub use error::{Error, Result};

/// `f64` schedule table, as used by the trainer and the CLI.
pub type Schedule = schedule::ScheduleTable<f64>;
/// `f64` increment-bound profile.
pub type Profile = increment::IncrementProfile<f64>;
/// `f64` time-step sampler.
pub type Sampler = strategy::TimeStepSampler<f64>;
/// `f64` weight table.
pub type Weights = strategy::WeightTable<f64>;
/// `f64` continuous scale-noise schedule.
pub type Sde = sde::SdeSchedule<f64>;
