//! Simulation and analysis of a heralded single-photon source with active
//! feed-forward: photon-number statistics, multi-pixel detector response,
//! analytic herald-conditioned statistics, an event-level Monte Carlo that
//! emits time tags, and offline coincidence analysis.

pub mod cli;
pub mod coincidence;
pub mod detector_model;
pub mod discriminator;
pub mod error;
pub mod event_sim;
pub mod feedforward;
pub mod photon_stats;
pub mod timetag;
pub mod units;

pub use error::{Error, Result};
