//! Complex-Gaussian phase-space calculus for subquantum relaxation models.
//!
//! The crate is organized bottom-up:
//!
//! * [`quadratics`] evaluates, multiplies and integrates quadratic exponentials.
//! * [`kernels`] builds the closed-form propagators.
//! * [`detqm`] transports grid wave functions along classical flows.
//! * [`evolution`] drives Gaussian states through kernels and slits.
//! * [`crf`] handles the correlated-force many-particle model.
//! * [`experiments`] runs Monte-Carlo detector experiments and regime checks.
//! * [`cli`] parses configurations and writes reports.

pub mod cli;
pub mod crf;
pub mod detqm;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod kernels;
pub mod quadratics;

pub use error::{Error, Result};
pub use quadratics::{QuadForm, C64};
