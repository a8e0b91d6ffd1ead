use crate::control::TrackingLog;

/// Errors shared across the toolkit's numerical modules.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// An argument violated a precondition (dimension mismatch, non-finite
    /// value, out-of-range parameter).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Pseudoinverse requested with zero damping on a rank-deficient
    /// Jacobian.
    #[error("jacobian is rank deficient; use a damping factor > 0")]
    SingularJacobian,
    /// Quintic fit over a time window too short to condition the linear
    /// system.
    #[error("degenerate trajectory duration {0} s")]
    DegenerateDuration(f64),
    /// A joint position fed to a planner lies outside the chain limits.
    #[error("joint limit violation: {0}")]
    JointLimit(String),
    /// The mass matrix is numerically singular; the inertial data does not
    /// describe a usable mechanism.
    #[error("degenerate dynamic model: {0}")]
    DegenerateModel(String),
    /// The closed-loop simulation produced a non-finite state. Carries the
    /// log collected up to the blow-up.
    #[error("tracking controller diverged at t = {t} s")]
    Diverged { t: f64, log: Box<TrackingLog> },
}

pub type Result<T> = std::result::Result<T, Error>;
