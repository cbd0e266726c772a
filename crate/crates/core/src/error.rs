use thiserror::Error;

use crate::simulator::Termination;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Hermite degree {0} is out of range (max {max})", max = crate::special::MAX_HERMITE_DEGREE)]
    DegreeOutOfRange(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate law: variance must be positive, got {0}")]
    DegenerateLaw(f64),

    #[error("environment length must be at least 1")]
    EmptyEnvironment,

    #[error("degenerate cumulant window [{start}, {end})")]
    DegenerateWindow { start: usize, end: usize },

    #[error("correction polynomial of order {order} needs lambda up to {needed}, have {available}")]
    InsufficientCoefficients {
        order: usize,
        needed: usize,
        available: usize,
    },

    #[error("unsupported order {0}")]
    UnsupportedOrder(usize),

    #[error("environment has {available} generations, {required} required")]
    EnvironmentTooShort { required: usize, available: usize },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("generation {generation} unavailable: trajectory terminated with {termination:?}")]
    Unavailable {
        generation: usize,
        termination: Termination,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("A + B identity violated: {0}")]
    IdentityViolation(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
}
