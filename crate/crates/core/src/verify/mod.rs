//! Finite-difference gradient checks, scan oracles and self tests.

pub mod gradcheck;
pub mod oracle;
pub mod suites;

pub use suites::{render_reports, selftest, CheckReport};
