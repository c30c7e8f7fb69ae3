//! Voltage-stability screening for N-1 branch outages.
//!
//! The screening engine predicts, for every foreseen single-branch outage,
//! the sensitivity-based Thevenin index at each monitored load bus without
//! re-solving the power flow: the post-contingency state and its PV-to-PQ
//! generator transitions are estimated linearly from the current operating
//! point, and the index follows from one sensitivity solve per bus. An
//! exact Newton-Raphson benchmark path validates the predictions.
//!
//! Modules:
//! - [`model`] / [`parse`]: the immutable network case and its MATPOWER
//!   file format;
//! - [`ybus`]: admittance construction and connectivity checks;
//! - [`pf`]: Newton-Raphson power flow with reactive-limit enforcement;
//! - [`sti`]: the Thevenin index, both the sensitivity limit form and the
//!   two-point finite form used for validation;
//! - [`estimate`]: linear post-contingency state estimation with the
//!   K-factor switching loop;
//! - [`engine`]: the N-1 screen, alarms, and benchmark comparison.

pub mod cases;
pub mod engine;
pub mod error;
pub mod estimate;
pub mod model;
pub mod parse;
pub mod pf;
pub mod sti;
pub mod ybus;

pub use engine::{
    average_relative_error, benchmark, scale_operating_level, screen, ScreeningConfig, StiRecord,
    StiReport,
};
pub use error::{Error, Result};
pub use estimate::{estimate_post_contingency, k_factor, EstimatedState};
pub use model::{BusKind, NetworkCase};
pub use parse::{parse_case, serialize_case};
pub use pf::{solve_power_flow, OperatingPoint, PfOptions, PfSolution};
pub use sti::{lti_finite, lti_ratio, solve_sensitivities, sti, StressDirection};
pub use ybus::{build_admittance, check_connectivity, AdmittanceMatrix, Connectivity};
