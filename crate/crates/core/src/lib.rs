//! Loss-minimising load sharing for islanded DC microgrids.
//!
//! Sources with concave piecewise-linear VI curves feed one resistive load
//! through boost converters. [`relaxation`] builds a convex program at a
//! fixed load voltage, [`conicsolver`] solves it, [`posttighten`] recovers
//! converter gains and duty ratios, and [`oracle`] checks the result against
//! an averaged steady-state circuit model.
//!
//! ```no_run
//! use dcshare::{document, optimize, KeyPolicy, SolveRequest};
//!
//! let text = std::fs::read_to_string("case_i.json").unwrap();
//! let (_, net, _) = document::load_network(&text, KeyPolicy::Strict).unwrap();
//! let out = optimize(&SolveRequest::at_min_voltage(net), false).unwrap();
//! println!("gains {:?}", out.plan.gains);
//! ```

// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conicsolver;
pub mod document;
pub mod error;
pub mod lossmodel;
pub mod netmodel;
pub mod oracle;
pub mod par;
pub mod posttighten;
pub mod relaxation;
pub mod synth;

pub use conicsolver::{solve, Solution, SolverSettings};
pub use document::{KeyPolicy, NetworkDocument};
pub use error::{Error, Result};
pub use netmodel::{Branch, BranchPoint, NetworkSpec, OperatingPoint, Piece, PwlCurve};
pub use oracle::{grid_search, steady_state, GridOptions, SteadyStateResult};
pub use par::Execution;
pub use posttighten::{optimize, sweep, voltage_grid, DispatchPlan, Outcome};
pub use relaxation::{build_program, ConvexProgram, SolveRequest};
