//! Minimum-power identification input design for feed-forward disturbance
//! rejection.
//!
//! The crate designs excitation signals for identification experiments whose
//! resulting model-based feed-forward controller must keep the output
//! variance below 1/gamma with prescribed probability. It covers closed-form
//! solutions for first-order FIR subsystems, a generalized-moment SDP for
//! rational structures, spectrum realization into an implementable
//! identification controller, and a seeded Monte Carlo validation harness.

pub mod config;
pub mod error;
pub mod ffctrl;
pub mod filter;
pub mod fir;
pub mod model;
pub mod moments;
pub mod poly;
pub mod realization;
pub mod sdp;
pub mod spectrum;
pub mod stats;
pub mod sysid;

pub use error::{Error, Result};
