use thiserror::Error;

/// Errors raised by the simulator and the analytical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid population state: {0}")]
    InvalidState(String),

    #[error("absorbing state: no composition-changing event is possible")]
    AbsorbingState,

    #[error("parameter regime not supported by this estimator: {0}")]
    RegimeMismatch(String),

    #[error("integrator step size underflow at t = {time}")]
    StepUnderflow { time: f64 },

    #[error("probability conservation violated at t = {time}: total mass {mass}")]
    ConservationViolation { time: f64, mass: f64 },

    #[error("grid refinement did not converge after {halvings} halvings (last relative change {change:e})")]
    RefinementFailed { halvings: u32, change: f64 },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, SweepError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SweepError::InvalidParameter(msg.into()))
}
