//! Command-line front end: corpus preparation, training runs, evaluation,
//! prediction, sweeps and gradient checks.

pub mod commands;
pub mod error;
pub mod fixture;
pub mod run;
pub mod settings;
pub mod sweep;
