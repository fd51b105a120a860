use thiserror::Error;

use crate::netmodel::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("network failed validation: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("branch `{branch}` fails the convexity gate (margins {margin_quadratic:.6}, {margin_output:.6})")]
    GateFailed {
        branch: String,
        margin_quadratic: f64,
        margin_output: f64,
    },

    #[error("branch `{branch}`: no positive output current satisfies the CCM bound")]
    InfeasibleBounds { branch: String },

    #[error("load voltage {v_load} V outside [{v_min}, {v_max}] V")]
    LoadVoltageOutOfRange { v_load: f64, v_min: f64, v_max: f64 },

    #[error("program is infeasible (max violation {max_violation:.3e})")]
    Infeasible { max_violation: f64 },

    #[error("solver stopped at the iteration limit ({iterations})")]
    IterLimit { iterations: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-physical operating point: {reason}")]
    NonPhysicalPoint { reason: String },

    #[error("branch `{branch}` has no inductance")]
    MissingInductance { branch: String },

    #[error("degenerate least-squares fit")]
    DegenerateFit,

    #[error("measured loss is below the conduction loss; alpha would be {alpha:.3e}")]
    NegativeAlpha { alpha: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("branch {branch}: gain {gain} below one after VI restoration")]
    GainBelowOne { branch: usize, gain: f64 },

    #[error("branch {branch}: zero input voltage")]
    DivideByZeroVoltage { branch: usize },

    #[error("branch {branch}: power-balance slack {slack:.3e} exceeds the tightness bound")]
    NotTight { branch: usize, slack: f64 },

    #[error("steady state did not converge: {0}")]
    NoConvergence(String),

    #[error("branch {branch} would back-feed at the operating load voltage")]
    NegativeBranchCurrent { branch: usize },

    #[error("no grid vertex is feasible")]
    AllInfeasible,
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
