use alloc::string::String;
use core::fmt;

/// Error type shared by all modules in this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    InvalidArgument(String),
    /// A state left the physically valid domain (e.g. `v_x <= 0`).
    Domain(String),
    /// A regression problem was numerically rank deficient.
    IllConditioned { condition: f64 },
    /// The NRMSE denominator vanished (constant output signal).
    UndefinedMetric(String),
    /// An iterative fit diverged; carries the last finite loss value.
    OptimizationFailure { last_loss: f64 },
    /// A free-run simulation produced a non-finite value.
    SimulationFailure { index: usize },
    /// A model rollout produced a non-finite state.
    RolloutFailure { step: usize },
    /// No hyper-parameter candidate could be fitted.
    TuningFailure(String),
    /// A closed-loop experiment left its tracking envelope.
    ExperimentFailure { time: f64, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::IllConditioned { condition } => {
                write!(f, "ill-conditioned problem (condition number {condition:.3e})")
            }
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::OptimizationFailure { last_loss } => {
                write!(f, "optimization diverged (last finite loss {last_loss:.6e})")
            }
            Error::SimulationFailure { index } => {
                write!(f, "simulation produced a non-finite value at sample {index}")
            }
            Error::RolloutFailure { step } => {
                write!(f, "rollout produced a non-finite state at step {step}")
            }
            Error::TuningFailure(msg) => write!(f, "hyper-parameter tuning failed: {msg}"),
            Error::ExperimentFailure { time, reason } => {
                write!(f, "experiment failed at t = {time:.3} s: {reason}")
            }
        }
    }
}

impl core::error::Error for Error {}
