//! Experiment runner for fractional belief propagation.
//!
//! Every subcommand is a function here taking its parsed configuration and
//! returning an [`Outcome`]; the `fracbp` binary only parses arguments and
//! maps outcomes to exit codes.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Cli, Command};
pub use experiments::{run, Outcome};
