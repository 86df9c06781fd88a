//! Streaming detection of slope changes across many sensors.
//!
//! A fleet of sensors reports one reading each at every time step. At some
//! unknown time a subset of the sensors starts drifting linearly. The
//! detectors in this crate watch the standardized residual stream and raise
//! an alarm as soon as the evidence for an onset, accumulated over a sliding
//! window of candidate change points, crosses a threshold.
//!
//! The main procedure scores each candidate change point `k` by a mixture
//! likelihood ratio that is agnostic about which sensors drift: each sensor
//! contributes `log(1 - p0 + p0 * exp(U^2 / 2))`, where `U` is its
//! standardized slope score over the segment `(k, t]` and `p0` is the prior
//! fraction of affected sensors. Thresholds come either from a closed-form
//! average-run-length approximation ([`calibration`]) or from Monte Carlo
//! ([`montecarlo`]). Detected onsets feed a residual-life model
//! ([`prognostics`]).

pub mod calibration;
pub mod cli;
pub mod detectors;
mod error;
pub mod model;
pub mod montecarlo;
pub mod preprocess;
pub mod prognostics;
pub mod quad;
pub mod window;

pub use error::{Error, Result};
