//! Control-loop synthesis and verification over lossy wireless links modeled
//! as finite-state Markov channels.
//!
//! The crate covers the full workflow for a linear plant whose actuation
//! commands travel over an unreliable link with channel-state-dependent
//! delivery probabilities and a generalized dropout compensator (on a loss the
//! actuators replay the last input scaled by a diagonal factor):
//!
//! * [`fsmc`] — channel model and the dropout-burst statistics derived from it;
//! * [`lqr`] — optimal finite- and infinite-horizon channel-state-dependent
//!   LQR synthesis, plus a channel-state-independent baseline;
//! * [`stability`] — mean-square stability verification for any stationary
//!   gain set via the spectral radius of a moment-propagation operator;
//! * [`sim`] — seeded Monte Carlo closed-loop simulation with reproducible,
//!   order-insensitive aggregation;
//! * [`config`] / [`export`] — TOML ingestion and CSV emission;
//! * [`pendulum`] — the bundled rotary inverted pendulum case study.

pub mod config;
pub mod error;
pub mod export;
pub mod fsmc;
pub mod linalg;
pub mod lqr;
pub mod pendulum;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
pub use fsmc::{BurstStats, FsmcModel};
pub use lqr::{GainSchedule, PlantSpec, StationaryPolicy};
pub use sim::{SimConfig, SimStats, SimTrace};
pub use stability::{Mode, ModeIndex, StabilityReport};




