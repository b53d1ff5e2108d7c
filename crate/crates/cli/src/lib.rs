//! Experiment driver for the damped MHD solver: configuration, subcommands
//! and the exit-status contract.
//!
//! | status | meaning |
//! |--------|---------|
//! | 0 | every requested check PASS or NOT-APPLICABLE |
//! | 1 | usage, configuration or I/O error |
//! | 2 | a requested check failed |
//! | 3 | the solution blew up |

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
    BlowUp,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::CheckFailed => 2,
            Status::BlowUp => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "PASS",
            Status::CheckFailed => "FAIL",
            Status::BlowUp => "BLOW-UP",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub const CODE: i32 = 1;
}
