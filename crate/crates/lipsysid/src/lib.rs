//! File formats, plotting and the experiment harness around
//! [`lipsysid_core`]. The `lipsysid` binary is a thin CLI over
//! [`experiment`].

pub mod config;
pub mod experiment;
pub mod io;
pub mod svg;

pub use config::{ExperimentConfig, Family};
pub use experiment::Experiment;
