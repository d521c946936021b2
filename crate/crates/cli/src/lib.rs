//! Experiment orchestration for the steering-identification toolkit:
//! configuration files, dataset generation, model fitting, evaluation
//! reports and plots.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod plot;
