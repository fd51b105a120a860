//! Process exit codes. These are the scripting contract; stdout carries
//! data only.

use std::fmt;

use dcshare::Error;

pub const MISMATCH: u8 = 1;
pub const INFEASIBLE: u8 = 2;
pub const GATE: u8 = 3;
pub const INPUT: u8 = 4;
pub const NUMERICAL: u8 = 5;
pub const ORACLE: u8 = 6;
pub const FIT: u8 = 7;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(INPUT, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(code_for(&e), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

pub fn code_for(e: &Error) -> u8 {
    match e {
        Error::Invalid(_)
        | Error::InvalidInput(_)
        | Error::LoadVoltageOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::MissingInductance { .. } => INPUT,
        Error::GateFailed { .. } => GATE,
        Error::Infeasible { .. } | Error::InfeasibleBounds { .. } => INFEASIBLE,
        Error::IterLimit { .. }
        | Error::NumericalFailure(_)
        | Error::NonPhysicalPoint { .. }
        | Error::GainBelowOne { .. }
        | Error::DivideByZeroVoltage { .. }
        | Error::NotTight { .. } => NUMERICAL,
        Error::NoConvergence(_) | Error::NegativeBranchCurrent { .. } | Error::AllInfeasible => {
            ORACLE
        }
        Error::DegenerateFit | Error::NegativeAlpha { .. } => FIT,
    }
}
