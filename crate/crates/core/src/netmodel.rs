//! Microgrid domain types: source curves, converter branches, the network,
//! and steady-state operating points.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine piece `i -> beta * i + gamma` of a source VI characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub beta: f64,
    pub gamma: f64,
}

impl Piece {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self { beta, gamma }
    }

    #[inline]
    pub fn eval(&self, i: f64) -> f64 {
        self.beta * i + self.gamma
    }
}

/// Concave, non-increasing piecewise-linear source characteristic, stored as
/// the pointwise minimum of its pieces. Pieces are kept in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlCurve {
    pieces: Vec<Piece>,
}

impl PwlCurve {
    pub fn new(pieces: Vec<Piece>) -> Self {
        Self { pieces }
    }

    /// An ideal constant-voltage source.
    pub fn constant(v: f64) -> Self {
        Self::new(vec![Piece::new(0.0, v)])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Terminal voltage at current `i` together with the index of the active
    /// piece (first minimiser on ties).
    pub fn eval_with_piece(&self, i: f64) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (j, p) in self.pieces.iter().enumerate() {
            let v = p.eval(i);
            if v < best {
                best = v;
                arg = j;
            }
        }
        (best, arg)
    }

    pub fn eval(&self, i: f64) -> f64 {
        self.eval_with_piece(i).0
    }

    /// Voltage at zero current.
    pub fn open_circuit_voltage(&self) -> f64 {
        self.eval(0.0)
    }

    /// Source power `f(i) * i`, which is concave for `i >= 0`.
    pub fn power(&self, i: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.beta * i * i + p.gamma * i)
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of pieces that are never the minimum on `i >= 0`.
    pub fn redundant_pieces(&self) -> Vec<usize> {
        (0..self.pieces.len())
            .filter(|&j| !self.piece_is_active_somewhere(j))
            .collect()
    }

    fn piece_is_active_somewhere(&self, j: usize) -> bool {
        // Piece j is active on the interval where it undercuts every other
        // piece; intersect the half-lines {i >= 0 : p_j(i) <= p_k(i)}.
        let pj = self.pieces[j];
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        for (k, pk) in self.pieces.iter().enumerate() {
            if k == j {
                continue;
            }
            let db = pj.beta - pk.beta;
            let dg = pk.gamma - pj.gamma;
            // p_j(i) <= p_k(i)  <=>  db * i <= dg
            if db == 0.0 {
                if dg < 0.0 || (dg == 0.0 && k < j) {
                    return false;
                }
            } else if db > 0.0 {
                hi = hi.min(dg / db);
            } else {
                lo = lo.max(dg / db);
            }
        }
        lo < hi || (lo == hi && lo.is_finite())
    }
}

/// One source, its boost converter and the cable to the load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub curve: PwlCurve,
    /// Source internal resistance.
    pub rs: f64,
    /// Cable resistance from converter output to the load.
    pub r_cable: f64,
    /// Inductor DC resistance.
    pub r_inductor: f64,
    /// MOSFET on-state resistance.
    pub r_mosfet: f64,
    pub r_diode: f64,
    /// Diode forward bias.
    pub v_diode: f64,
    /// Switching-loss constant.
    pub alpha: f64,
    pub inductance: Option<f64>,
    /// Minimum average source current for continuous conduction.
    pub is_min: Option<f64>,
    /// Minimum average output current; overrides `is_min` when set.
    pub i_min: Option<f64>,
    pub g_max: Option<f64>,
    /// Loss weight.
    pub lambda: f64,
    /// Circulating-current weight.
    pub mu: f64,
}

impl Branch {
    /// A lossless branch with the given source curve and cable resistance.
    pub fn ideal(name: impl Into<String>, curve: PwlCurve, r_cable: f64) -> Self {
        Self {
            name: name.into(),
            curve,
            rs: 0.0,
            r_cable,
            r_inductor: 0.0,
            r_mosfet: 0.0,
            r_diode: 0.0,
            v_diode: 0.0,
            alpha: 0.0,
            inductance: None,
            is_min: None,
            i_min: None,
            g_max: None,
            lambda: 1.0,
            mu: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub branches: Vec<Branch>,
    pub r_load: f64,
    pub v_load_min: f64,
    pub v_load_max: f64,
    /// Switching frequency.
    pub f_s: f64,
}

impl NetworkSpec {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Load current demanded at `v_load`.
    pub fn demand(&self, v_load: f64) -> f64 {
        v_load / self.r_load
    }
}

/// Steady-state averages for one branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    /// Source terminal voltage.
    pub vs: f64,
    /// Converter input voltage.
    pub v_in: f64,
    /// Converter output voltage.
    pub v_out: f64,
    /// Source (inductor) current.
    pub i_s: f64,
    /// Converter output current.
    pub i_out: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub branches: Vec<BranchPoint>,
    pub v_load: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    EmptyNetwork,
    NonConcaveCurve,
    OpenCircuitAboveVloadMin,
    NonPositiveLoad,
    InvalidVoltageRange,
    NonPositiveSwitchingFrequency,
    NegativeResistance,
    NegativeDiodeBias,
    AlphaOutOfRange,
    NonPositiveLambda,
    NegativeMu,
    GainCapNotAboveOne,
    InvalidCurrentBound,
    NonPositiveInductance,
}

impl Rule {
    pub fn id(&self) -> &'static str {
        match self {
            Rule::EmptyNetwork => "EmptyNetwork",
            Rule::NonConcaveCurve => "NonConcaveCurve",
            Rule::OpenCircuitAboveVloadMin => "OpenCircuitAboveVloadMin",
            Rule::NonPositiveLoad => "NonPositiveLoad",
            Rule::InvalidVoltageRange => "InvalidVoltageRange",
            Rule::NonPositiveSwitchingFrequency => "NonPositiveSwitchingFrequency",
            Rule::NegativeResistance => "NegativeResistance",
            Rule::NegativeDiodeBias => "NegativeDiodeBias",
            Rule::AlphaOutOfRange => "AlphaOutOfRange",
            Rule::NonPositiveLambda => "NonPositiveLambda",
            Rule::NegativeMu => "NegativeMu",
            Rule::GainCapNotAboveOne => "GainCapNotAboveOne",
            Rule::InvalidCurrentBound => "InvalidCurrentBound",
            Rule::NonPositiveInductance => "NonPositiveInductance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Offending branch name, `None` for network-level rules.
    pub branch: Option<String>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.branch {
            Some(b) => write!(f, "[{}] branch `{}`: {}", self.rule.id(), b, self.detail),
            None => write!(f, "[{}] {}", self.rule.id(), self.detail),
        }
    }
}

/// Non-fatal findings, e.g. curve pieces that never bind.
#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub branch: String,
    pub detail: String,
}

/// Checks every type invariant and the standing assumptions on a network.
/// Returns the network untouched when it is valid, otherwise every violation.
pub fn validate_network(spec: &NetworkSpec) -> Result<&NetworkSpec> {
    let v = violations(spec);
    if v.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Invalid(v))
    }
}

pub fn violations(spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, branch: Option<&str>, detail: String| {
        out.push(Violation {
            rule,
            branch: branch.map(str::to_owned),
            detail,
        })
    };

    if spec.branches.is_empty() {
        push(Rule::EmptyNetwork, None, "network has no branches".into());
    }
    if !(spec.r_load > 0.0) {
        push(
            Rule::NonPositiveLoad,
            None,
            format!("load resistance {} must be positive", spec.r_load),
        );
    }
    if !(spec.v_load_min > 0.0 && spec.v_load_min <= spec.v_load_max) {
        push(
            Rule::InvalidVoltageRange,
            None,
            format!(
                "load voltage range [{}, {}] must satisfy 0 < min <= max",
                spec.v_load_min, spec.v_load_max
            ),
        );
    }
    if !(spec.f_s > 0.0) {
        push(
            Rule::NonPositiveSwitchingFrequency,
            None,
            format!("switching frequency {} must be positive", spec.f_s),
        );
    }

    for b in &spec.branches {
        let name = Some(b.name.as_str());
        let curve = &b.curve;
        if curve.is_empty() {
            push(Rule::NonConcaveCurve, name, "curve has no pieces".into());
        }
        for (j, p) in curve.pieces().iter().enumerate() {
            if !(p.beta <= 0.0) {
                push(
                    Rule::NonConcaveCurve,
                    name,
                    format!("piece {j} has slope {} > 0", p.beta),
                );
            }
            if !(p.gamma > 0.0) {
                push(
                    Rule::NonConcaveCurve,
                    name,
                    format!("piece {j} has intercept {} <= 0", p.gamma),
                );
            }
        }
        if !curve.is_empty() {
            let voc = curve.open_circuit_voltage();
            if voc >= spec.v_load_min {
                push(
                    Rule::OpenCircuitAboveVloadMin,
                    name,
                    format!(
                        "open-circuit voltage {voc} V is not below the minimum load voltage {} V",
                        spec.v_load_min
                    ),
                );
            }
        }
        for (label, r) in [
            ("rs", b.rs),
            ("r_cable", b.r_cable),
            ("r_inductor", b.r_inductor),
            ("r_mosfet", b.r_mosfet),
            ("r_diode", b.r_diode),
        ] {
            if !(r >= 0.0) {
                push(
                    Rule::NegativeResistance,
                    name,
                    format!("{label} = {r} must be non-negative"),
                );
            }
        }
        if !(b.v_diode >= 0.0) {
            push(
                Rule::NegativeDiodeBias,
                name,
                format!("diode bias {} must be non-negative", b.v_diode),
            );
        }
        if !(b.alpha >= 0.0 && b.alpha < 1.0) {
            push(
                Rule::AlphaOutOfRange,
                name,
                format!("alpha {} must lie in [0, 1)", b.alpha),
            );
        }
        if !(b.lambda > 0.0) {
            push(
                Rule::NonPositiveLambda,
                name,
                format!("lambda {} must be positive", b.lambda),
            );
        }
        if !(b.mu >= 0.0) {
            push(
                Rule::NegativeMu,
                name,
                format!("mu {} must be non-negative", b.mu),
            );
        }
        if let Some(g) = b.g_max {
            if !(g > 1.0) {
                push(
                    Rule::GainCapNotAboveOne,
                    name,
                    format!("g_max {g} must exceed one"),
                );
            }
        }
        for (label, c) in [("is_min", b.is_min), ("i_min", b.i_min)] {
            if let Some(c) = c {
                if !(c >= 0.0 && c.is_finite()) {
                    push(
                        Rule::InvalidCurrentBound,
                        name,
                        format!("{label} = {c} must be finite and non-negative"),
                    );
                }
            }
        }
        if let Some(l) = b.inductance {
            if !(l > 0.0) {
                push(
                    Rule::NonPositiveInductance,
                    name,
                    format!("inductance {l} must be positive"),
                );
            }
        }
    }
    out
}

/// Curve pieces that never bind on `i >= 0`, per branch.
pub fn curve_warnings(spec: &NetworkSpec) -> Vec<Warning> {
    spec.branches
        .iter()
        .flat_map(|b| {
            b.curve
                .redundant_pieces()
                .into_iter()
                .map(move |j| Warning {
                    branch: b.name.clone(),
                    detail: format!("piece {j} never binds"),
                })
        })
        .collect()
}
