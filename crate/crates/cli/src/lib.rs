//! Command-line front end for the engine: dataset synthesis, training,
//! evaluation, k-fold experiments, parameter/shape audits, and the
//! negative-image preview. Owns the on-disk formats (run directories and
//! ADLT checkpoints).

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataio;
pub mod rundir;

use adlite_core::Error;

/// Headline numbers a command hands back for printing and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CliReport {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Process exit codes, one per error family.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Dataset(_) => 3,
        Error::Format { .. } => 4,
        Error::Numeric(_) => 5,
        Error::Io(_) => 6,
        _ => 1,
    }
}
