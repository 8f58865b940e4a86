use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid noise model: {0}")]
    NoiseModel(String),

    #[error("invalid phase series: {0}")]
    Series(String),

    #[error("lineic model passed where a lumped model is required; use fiber_noise_field")]
    LineicModel,

    #[error("span '{0}' has no lineic noise model")]
    NotLineic(String),

    #[error("noise field must have at least one cell")]
    NoCells,

    #[error("invalid link: {0}")]
    Link(String),

    #[error("position {position_km} km outside link [0, {length_km}] km")]
    PositionOutOfRange { position_km: f64, length_km: f64 },

    #[error("link has no add-drop multiplexer")]
    NoOadm,

    #[error("sampling mismatch: {0}")]
    SamplingMismatch(String),

    #[error("simulation too short: {duration_s} s < 100 x one-way delay ({min_s} s)")]
    DurationTooShort { duration_s: f64, min_s: f64 },

    #[error(
        "unstable servo: loop bandwidth {bandwidth_hz:.1} Hz exceeds the delay cap {cap_hz:.1} Hz"
    )]
    UnstableServo { bandwidth_hz: f64, cap_hz: f64 },

    #[error("servo loop diverged at t = {t_s} s")]
    Diverged { t_s: f64 },

    #[error("invalid servo configuration: {0}")]
    Servo(String),

    #[error("frequency {f_hz} Hz outside validity range (must be below {limit_hz} Hz)")]
    FrequencyOutOfRange { f_hz: f64, limit_hz: f64 },

    #[error("one-way delay must be positive, got {0} s")]
    NonPositiveDelay(f64),

    #[error("invalid analysis request: {0}")]
    Analysis(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("frequency bins do not match")]
    BinMismatch,

    #[error("{0}")]
    Unsatisfiable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
