//! Simulation and analysis of coherent optical frequency transfer over fiber
//! links with round-trip phase-noise cancellation.
//!
//! The crate is organised bottom-up:
//!
//! * [`noise`]: power-law phase-noise models, lumped and distributed synthesis
//! * [`link`]: spans, optical elements, delays, loss budget, WDM crosstalk
//! * [`servo`]: the delayed round-trip servo loop and its analytic limits
//! * [`metrology`]: Welch PSDs, counters, tracking filters, Allan deviation
//! * [`cascade`]: multi-segment planning and performance prediction
//! * [`scenario`]: configuration files, orchestration and CSV artifacts

pub mod cascade;
pub mod error;
pub mod link;
pub mod metrology;
pub mod noise;
pub mod scenario;
pub mod servo;

pub use error::{Error, Result};
