use thiserror::Error;

use crate::simnet::TelegraphTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A drive current reached the barrier-breakdown limit of a device.
    #[error("breakdown: device {device:?} driven at {current_a:.6e} A, limit {limit_a:.6e} A")]
    Breakdown {
        device: Option<usize>,
        current_a: f64,
        limit_a: f64,
    },

    /// Simulation stopped at a breakdown; the traces recorded so far are
    /// returned with `valid == false`.
    #[error("simulation aborted at t = {time_s:.6e} s: device {device} driven at {current_a:.6e} A, limit {limit_a:.6e} A")]
    SimulationAborted {
        time_s: f64,
        device: usize,
        current_a: f64,
        limit_a: f64,
        partial: Vec<TelegraphTrace>,
    },

    #[error("annealing step {step} (gain {gain}) exceeds breakdown: device {device} at {current_a:.6e} A, limit {limit_a:.6e} A")]
    ScheduleBreakdown {
        step: usize,
        gain: f64,
        device: usize,
        current_a: f64,
        limit_a: f64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub fn is_breakdown(&self) -> bool {
        matches!(
            self,
            Error::Breakdown { .. } | Error::SimulationAborted { .. } | Error::ScheduleBreakdown { .. }
        )
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {value}")))
    }
}
