//! Builds the convex load-sharing program for a fixed load voltage.
//!
//! Each branch contributes the variables `Vs, V', V'', Is, I`. The source
//! characteristic `Vs = f(Is)` is relaxed to `Vs <= beta_j·Is + gamma_j` for
//! every piece, and the power balance `Vs·Is = Q + V_load·I` is relaxed to
//! `Q(Is, I) + V_load·I <= beta_j·Is² + gamma_j·Is` per piece. Both are convex
//! under the convexity gate, and both are restored to equality afterwards.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conicsolver::SolverSettings;
use crate::error::{Error, Result};
use crate::lossmodel::{self, LossQuadratic};
use crate::netmodel::{validate_network, Branch, BranchPoint, NetworkSpec, OperatingPoint};
use crate::oracle::{golden_max, tight_source_current};

/// Sparse row `Σ coeff·x[idx]` paired with a right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * x[i]).sum()
    }

    /// `a·x - rhs`
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.dot(x) - self.rhs
    }
}

/// `xᵀPx + qᵀx + r` with `P` symmetric. Entries of `p` are stored once with
/// `i <= j`; an off-diagonal entry stands for both `P[i][j]` and `P[j][i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Quadratic {
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<(usize, f64)>,
    pub r: f64,
}

impl Quadratic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .p
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    v * x[i] * x[i]
                } else {
                    2.0 * v * x[i] * x[j]
                }
            })
            .sum();
        let lin: f64 = self.q.iter().map(|&(i, v)| v * x[i]).sum();
        quad + lin + self.r
    }

    /// Adds `scale·∇` at `x` into `g`.
    pub fn add_gradient(&self, x: &[f64], scale: f64, g: &mut [f64]) {
        for &(i, j, v) in &self.p {
            if i == j {
                g[i] += scale * 2.0 * v * x[i];
            } else {
                g[i] += scale * 2.0 * v * x[j];
                g[j] += scale * 2.0 * v * x[i];
            }
        }
        for &(i, v) in &self.q {
            g[i] += scale * v;
        }
    }

    /// Adds `scale·∇²` (that is `2·scale·P`) into `h`.
    pub fn add_hessian(&self, scale: f64, h: &mut DMatrix<f64>) {
        for &(i, j, v) in &self.p {
            h[(i, j)] += 2.0 * scale * v;
            if i != j {
                h[(j, i)] += 2.0 * scale * v;
            }
        }
    }

    /// `dᵀPd`
    pub fn curvature(&self, d: &[f64]) -> f64 {
        self.p
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    v * d[i] * d[i]
                } else {
                    2.0 * v * d[i] * d[j]
                }
            })
            .sum()
    }

    pub fn dense_p(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.p {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    fn is_psd(&self, n: usize) -> bool {
        if self.p.is_empty() {
            return true;
        }
        let eig = SymmetricEigen::new(self.dense_p(n));
        eig.eigenvalues.iter().all(|&e| e >= -1e-10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintKind {
    KvlInput,
    KvlOutput,
    ViCurve,
    PowerBalance,
    GainLower,
    GainUpper,
    OutputCurrentMin,
    InputFloor,
    SourceCurrentMax,
    NonNegative,
    CirculatingPos,
    CirculatingNeg,
    Kcl,
    Generic,
}

impl ConstraintKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintKind::KvlInput => "kvl_in",
            ConstraintKind::KvlOutput => "kvl_out",
            ConstraintKind::ViCurve => "vi_curve",
            ConstraintKind::PowerBalance => "power",
            ConstraintKind::GainLower => "gain_lo",
            ConstraintKind::GainUpper => "gain_hi",
            ConstraintKind::OutputCurrentMin => "i_min",
            ConstraintKind::InputFloor => "vin_floor",
            ConstraintKind::SourceCurrentMax => "is_max",
            ConstraintKind::NonNegative => "nonneg",
            ConstraintKind::CirculatingPos => "circ_pos",
            ConstraintKind::CirculatingNeg => "circ_neg",
            ConstraintKind::Kcl => "kcl",
            ConstraintKind::Generic => "generic",
        }
    }
}

/// Where a constraint came from: branch, kind and (for curve constraints)
/// the piece index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    pub branch: Option<usize>,
    pub kind: ConstraintKind,
    pub index: Option<usize>,
}

impl Tag {
    pub const GENERIC: Tag = Tag {
        branch: None,
        kind: ConstraintKind::Generic,
        index: None,
    };

    fn branch(k: usize, kind: ConstraintKind) -> Self {
        Self {
            branch: Some(k),
            kind,
            index: None,
        }
    }

    fn piece(k: usize, kind: ConstraintKind, j: usize) -> Self {
        Self {
            branch: Some(k),
            kind,
            index: Some(j),
        }
    }
}

/// Variable indices of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchVars {
    pub vs: usize,
    pub v_in: usize,
    pub v_out: usize,
    pub i_s: usize,
    pub i_out: usize,
    /// Epigraph variable for the circulating-current magnitude.
    pub aux: Option<usize>,
}

/// Convex QCQP: minimise `objective` subject to `A·x = b` (rows of
/// `equalities`), `G·x <= h` (rows of `inequalities`) and `quadratics <= 0`.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub n_vars: usize,
    pub var_names: Vec<String>,
    pub equalities: Vec<(Tag, LinearRow)>,
    pub inequalities: Vec<(Tag, LinearRow)>,
    pub quadratics: Vec<(Tag, Quadratic)>,
    pub objective: Quadratic,
    /// Empty for programs not built from a network.
    pub layout: Vec<BranchVars>,
    pub v_load: f64,
}

impl ConvexProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            var_names: (0..n_vars).map(|i| format!("x{i}")).collect(),
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.n_vars += 1;
        self.n_vars - 1
    }

    pub fn add_eq(&mut self, tag: Tag, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push((tag, LinearRow::new(coeffs, rhs)));
    }

    pub fn add_le(&mut self, tag: Tag, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push((tag, LinearRow::new(coeffs, rhs)));
    }

    pub fn add_quad(&mut self, tag: Tag, q: Quadratic) {
        self.quadratics.push((tag, q));
    }

    pub fn n_ineq(&self) -> usize {
        self.inequalities.len() + self.quadratics.len()
    }

    pub fn count(&self, kind: ConstraintKind) -> usize {
        self.equalities
            .iter()
            .chain(&self.inequalities)
            .map(|(t, _)| t)
            .chain(self.quadratics.iter().map(|(t, _)| t))
            .filter(|t| t.kind == kind)
            .count()
    }

    /// Every quadratic form (constraints and objective) is PSD.
    pub fn check_psd(&self) -> bool {
        self.objective.is_psd(self.n_vars)
            && self.quadratics.iter().all(|(_, q)| q.is_psd(self.n_vars))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_vars {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Packs an operating point into a variable vector. Aux variables are set
    /// to the circulating-current magnitudes so the epigraph rows are tight.
    pub fn pack(&self, point: &OperatingPoint, r_cable: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        for (v, p) in self.layout.iter().zip(&point.branches) {
            x[v.vs] = p.vs;
            x[v.v_in] = p.v_in;
            x[v.v_out] = p.v_out;
            x[v.i_s] = p.i_s;
            x[v.i_out] = p.i_out;
        }
        let v_out: Vec<f64> = point.branches.iter().map(|p| p.v_out).collect();
        let ic = lossmodel::circulating_currents(&v_out, r_cable);
        for (v, c) in self.layout.iter().zip(ic) {
            if let Some(a) = v.aux {
                x[a] = c.abs();
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> OperatingPoint {
        OperatingPoint {
            branches: self
                .layout
                .iter()
                .map(|v| BranchPoint {
                    vs: x[v.vs],
                    v_in: x[v.v_in],
                    v_out: x[v.v_out],
                    i_s: x[v.i_s],
                    i_out: x[v.i_out],
                })
                .collect(),
            v_load: self.v_load,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRequest {
    pub network: NetworkSpec,
    /// Fixed load voltage.
    pub v_load: f64,
    pub include_circulating: bool,
    /// Adds `V' >= 20·VD` per branch.
    pub vin_floor: bool,
    pub settings: SolverSettings,
}

impl SolveRequest {
    /// Request at the lowest admissible load voltage, which is where the
    /// loss minimum lies.
    pub fn at_min_voltage(network: NetworkSpec) -> Self {
        let v_load = network.v_load_min;
        Self {
            network,
            v_load,
            include_circulating: true,
            vin_floor: false,
            settings: SolverSettings::default(),
        }
    }
}

/// Per-branch bounds resolved from the network description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchBounds {
    pub i_min: f64,
    pub g_max: f64,
    pub v_in_min: f64,
}

/// Resolves `I_min` (explicit value, else from `Is_min`, else from the CCM
/// inductance bound, else zero) and `g_max` (explicit, else the averaged
/// gain bound).
pub fn branch_bounds(
    net: &NetworkSpec,
    k: usize,
    v_load: f64,
    vin_floor: bool,
) -> Result<BranchBounds> {
    let b = &net.branches[k];
    let i_min = match (b.i_min, b.is_min, b.inductance) {
        (Some(i), _, _) => i,
        (None, Some(is), _) => lossmodel::min_output_current(b, is, v_load)?,
        (None, None, Some(_)) => {
            let is = lossmodel::ccm_min_source_current(b, net.f_s)?;
            lossmodel::min_output_current(b, is, v_load)?
        }
        (None, None, None) => 0.0,
    };
    let g_max = b
        .g_max
        .unwrap_or_else(|| lossmodel::max_gain_bound(b, net.r_load));
    let v_in_min = if vin_floor { 20.0 * b.v_diode } else { 0.0 };
    Ok(BranchBounds {
        i_min,
        g_max,
        v_in_min,
    })
}

/// Validates the request and builds the relaxed program.
pub fn build_program(req: &SolveRequest) -> Result<ConvexProgram> {
    let net = validate_network(&req.network)?;
    for b in &net.branches {
        lossmodel::require_gate(b)?;
    }
    if !(req.v_load >= net.v_load_min && req.v_load <= net.v_load_max) {
        return Err(Error::LoadVoltageOutOfRange {
            v_load: req.v_load,
            v_min: net.v_load_min,
            v_max: net.v_load_max,
        });
    }
    let bounds = (0..net.len())
        .map(|k| branch_bounds(net, k, req.v_load, req.vin_floor))
        .collect::<Result<Vec<_>>>()?;

    let v = req.v_load;
    let n = net.len();
    let mut prog = ConvexProgram {
        v_load: v,
        ..Default::default()
    };
    for b in &net.branches {
        let base = prog.n_vars;
        for field in ["vs", "v_in", "v_out", "i_s", "i_out"] {
            prog.add_var(format!("{}.{}", b.name, field));
        }
        prog.layout.push(BranchVars {
            vs: base,
            v_in: base + 1,
            v_out: base + 2,
            i_s: base + 3,
            i_out: base + 4,
            aux: None,
        });
    }
    if req.include_circulating {
        for (k, b) in net.branches.iter().enumerate() {
            if b.mu > 0.0 {
                let a = prog.add_var(format!("{}.circ", b.name));
                prog.layout[k].aux = Some(a);
            }
        }
    }

    let r_cable: Vec<f64> = net.branches.iter().map(|b| b.r_cable).collect();
    let mut objective = Quadratic::default();

    for (k, b) in net.branches.iter().enumerate() {
        let x = prog.layout[k];
        let bd = bounds[k];
        use ConstraintKind as C;

        prog.add_eq(
            Tag::branch(k, C::KvlInput),
            vec![(x.v_in, 1.0), (x.vs, -1.0), (x.i_s, b.rs)],
            0.0,
        );
        prog.add_eq(
            Tag::branch(k, C::KvlOutput),
            vec![(x.v_out, 1.0), (x.i_out, -b.r_cable)],
            v,
        );

        let loss = LossQuadratic::new(b, v);
        for (j, p) in b.curve.pieces().iter().enumerate() {
            prog.add_le(
                Tag::piece(k, C::ViCurve, j),
                vec![(x.vs, 1.0), (x.i_s, -p.beta)],
                p.gamma,
            );
        }
        for (j, p) in b.curve.pieces().iter().enumerate() {
            prog.add_quad(
                Tag::piece(k, C::PowerBalance, j),
                Quadratic {
                    p: vec![
                        (x.i_s, x.i_s, loss.ss - p.beta),
                        (x.i_s, x.i_out, loss.si / 2.0),
                        (x.i_out, x.i_out, loss.ii),
                    ],
                    q: vec![(x.i_s, loss.s - p.gamma), (x.i_out, loss.i + v)],
                    r: 0.0,
                },
            );
        }
        prog.add_le(
            Tag::branch(k, C::GainLower),
            vec![(x.v_in, 1.0), (x.v_out, -1.0)],
            0.0,
        );
        prog.add_le(
            Tag::branch(k, C::GainUpper),
            vec![(x.v_out, 1.0), (x.v_in, -bd.g_max)],
            0.0,
        );
        prog.add_le(
            Tag::branch(k, C::OutputCurrentMin),
            vec![(x.i_out, -1.0)],
            -bd.i_min,
        );
        if req.vin_floor {
            prog.add_le(
                Tag::branch(k, C::InputFloor),
                vec![(x.v_in, -1.0)],
                -bd.v_in_min,
            );
        }
        if let Some(cap) = source_current_cap(b, v, net.demand(v)) {
            prog.add_le(Tag::branch(k, C::SourceCurrentMax), vec![(x.i_s, 1.0)], cap);
        }
        for (idx, var) in [x.vs, x.v_in, x.v_out, x.i_s, x.i_out]
            .into_iter()
            .enumerate()
        {
            prog.add_le(
                Tag {
                    branch: Some(k),
                    kind: C::NonNegative,
                    index: Some(idx),
                },
                vec![(var, -1.0)],
                0.0,
            );
        }
        if let Some(a) = x.aux {
            // Ic_k = Σ_{j≠k} (V''_k - V''_j) / (R_k + R_j), bounded by ±aux
            let mut ic: Vec<(usize, f64)> = Vec::new();
            let mut self_coeff = 0.0;
            for j in (0..n).filter(|&j| j != k) {
                let den = r_cable[k] + r_cable[j];
                if den > 0.0 {
                    self_coeff += 1.0 / den;
                    ic.push((prog.layout[j].v_out, -1.0 / den));
                }
            }
            ic.insert(0, (x.v_out, self_coeff));
            let mut pos = ic.clone();
            pos.push((a, -1.0));
            let mut neg: Vec<_> = ic.iter().map(|&(i, c)| (i, -c)).collect();
            neg.push((a, -1.0));
            prog.add_le(Tag::branch(k, C::CirculatingPos), pos, 0.0);
            prog.add_le(Tag::branch(k, C::CirculatingNeg), neg, 0.0);
            objective.q.push((a, b.mu));
        }

        let lam = b.lambda;
        objective.p.extend([
            (x.i_s, x.i_s, lam * loss.ss),
            (x.i_s, x.i_out, lam * loss.si / 2.0),
            (x.i_out, x.i_out, lam * loss.ii),
        ]);
        objective
            .q
            .extend([(x.i_s, lam * loss.s), (x.i_out, lam * loss.i)]);
    }

    prog.add_eq(
        Tag {
            branch: None,
            kind: ConstraintKind::Kcl,
            index: None,
        },
        prog.layout.iter().map(|x| (x.i_out, 1.0)).collect(),
        net.demand(v),
    );
    prog.objective = objective;

    if !prog.check_psd() {
        return Err(Error::NumericalFailure(
            "a quadratic form is not positive semidefinite".into(),
        ));
    }
    Ok(prog)
}

/// A strictly interior point of `prog` built from the circuit itself, so the
/// solver can skip its feasibility phase. `None` when the construction does
/// not find one (the solver then searches on its own).
///
/// Each branch gets the widest margin over its source current for a given
/// output current; the output currents are placed at a common fraction of
/// each branch's workable range so they add up to the load demand.
pub fn interior_start(req: &SolveRequest, prog: &ConvexProgram) -> Option<Vec<f64>> {
    let net = &req.network;
    let v = req.v_load;
    if prog.layout.len() != net.len() {
        return None;
    }
    let demand = net.demand(v);
    let mut ranges = Vec::with_capacity(net.len());
    for k in 0..net.len() {
        let bd = branch_bounds(net, k, v, req.vin_floor).ok()?;
        let m = BranchMargin::new(net, k, v, bd, demand);
        let best = golden_max(0.0, m.i_cap, &|i| m.best(i).1);
        if !(m.best(best).1 > 0.0) {
            return None;
        }
        let lo = if m.best(0.0).1 > 0.0 {
            0.0
        } else {
            zero_crossing(0.0, best, |i| m.best(i).1)
        };
        let hi = if m.best(m.i_cap).1 > 0.0 {
            m.i_cap
        } else {
            zero_crossing(m.i_cap, best, |i| m.best(i).1)
        };
        let lo = lo.max(bd.i_min).max(0.0);
        if !(lo < hi) {
            return None;
        }
        ranges.push((m, lo, hi));
    }
    let low: f64 = ranges.iter().map(|r| r.1).sum();
    let high: f64 = ranges.iter().map(|r| r.2).sum();
    if !(low < demand && demand < high) {
        return None;
    }
    let theta = (demand - low) / (high - low);

    let mut x = vec![0.0; prog.n_vars];
    let mut v_out = Vec::with_capacity(net.len());
    for (k, (m, lo, hi)) in ranges.iter().enumerate() {
        let i = lo + theta * (hi - lo);
        let (is, _) = m.best(i);
        let (v_lo, v_hi) = m.input_window(is, i);
        let l = prog.layout[k];
        let v_in = 0.5 * (v_lo + v_hi);
        x[l.i_out] = i;
        x[l.i_s] = is;
        x[l.v_out] = v + m.b().r_cable * i;
        x[l.v_in] = v_in;
        x[l.vs] = v_in + m.b().rs * is;
        v_out.push(x[l.v_out]);
    }
    let r: Vec<f64> = net.branches.iter().map(|b| b.r_cable).collect();
    let ic = lossmodel::circulating_currents(&v_out, &r);
    for (k, l) in prog.layout.iter().enumerate() {
        if let Some(a) = l.aux {
            x[a] = ic[k].abs() + 1.0;
        }
    }
    Some(x)
}
/// With a flat last piece and no source resistance nothing above limits `Is`,
/// and a lossless branch then leaves the barrier without a minimizer. Twice
/// the tight current at full demand never binds after restoration because
/// the loss grows with `Is`.
fn source_current_cap(b: &Branch, v: f64, demand: f64) -> Option<f64> {
    let last = b.curve.pieces().last()?;
    if last.beta < 0.0 || b.rs > 0.0 {
        return None;
    }
    let tight = tight_source_current(b, demand, v)?;
    Some(2.0 * tight.max(demand))
}

/// Per-branch feasibility margin as a function of `(Is, I)`. Concave in both,
/// which is what makes the nested searches in [`interior_start`] valid.
struct BranchMargin<'a> {
    net: &'a NetworkSpec,
    k: usize,
    v: f64,
    bd: BranchBounds,
    loss: LossQuadratic,
    is_cap: f64,
    i_cap: f64,
}

impl<'a> BranchMargin<'a> {
    fn new(net: &'a NetworkSpec, k: usize, v: f64, bd: BranchBounds, demand: f64) -> Self {
        let b = &net.branches[k];
        // Source current at which the converter input reaches zero.
        let head = |is: f64| b.curve.eval(is) - b.rs * is;
        let mut is_cap = 1.0;
        while head(is_cap) > 0.0 && is_cap < 1e9 {
            is_cap *= 2.0;
        }
        if head(is_cap) <= 0.0 {
            is_cap = zero_crossing(is_cap, 0.0, head);
        }
        if let Some(cap) = source_current_cap(b, v, demand) {
            is_cap = is_cap.min(cap);
        }
        Self {
            net,
            k,
            v,
            bd,
            loss: LossQuadratic::new(b, v),
            is_cap,
            i_cap: 2.0 * demand,
        }
    }

    fn b(&self) -> &crate::netmodel::Branch {
        &self.net.branches[self.k]
    }

    /// Bounds on `V'` from the gain limits and the input floor (low) and
    /// from the source curve and unit gain (high).
    fn input_window(&self, is: f64, i: f64) -> (f64, f64) {
        let b = self.b();
        let v_out = self.v + b.r_cable * i;
        let lo = (v_out / self.bd.g_max).max(self.bd.v_in_min).max(0.0);
        let hi = v_out.min(b.curve.eval(is) - b.rs * is);
        (lo, hi)
    }

    fn margin(&self, is: f64, i: f64) -> f64 {
        let b = self.b();
        let power = b.curve.power(is) - self.loss.eval(is, i) - self.v * i;
        let (lo, hi) = self.input_window(is, i);
        (power / (self.v * self.i_cap))
            .min((hi - lo) / self.v)
            .min(is / self.is_cap)
    }

    /// Source current with the largest margin at output current `i`.
    fn best(&self, i: f64) -> (f64, f64) {
        let is = golden_max(0.0, self.is_cap, &|is| self.margin(is, i));
        (is, self.margin(is, i))
    }
}

/// Root of `f` between `inside` (where `f > 0`) and `outside`.
fn zero_crossing(outside: f64, inside: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (outside, inside);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if f(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}

/// `xᵀP₀x + q₀ᵀx + r₀`
pub fn objective_value(prog: &ConvexProgram, x: &[f64]) -> Result<f64> {
    prog.check_dim(x)?;
    Ok(prog.objective.eval(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub max_equality: f64,
    /// Largest positive part over linear and quadratic inequalities.
    pub max_inequality: f64,
    /// `-g(x)` for every quadratic constraint; negative means violated.
    pub quadratic_slacks: Vec<f64>,
}

impl Residuals {
    pub const FEASIBILITY_TOL: f64 = 1e-7;

    pub fn is_feasible(&self) -> bool {
        self.is_feasible_within(Self::FEASIBILITY_TOL)
    }

    pub fn is_feasible_within(&self, tol: f64) -> bool {
        self.max_equality <= tol && self.max_inequality <= tol
    }
}

pub fn constraint_residuals(prog: &ConvexProgram, x: &[f64]) -> Result<Residuals> {
    prog.check_dim(x)?;
    let max_equality = prog
        .equalities
        .iter()
        .map(|(_, r)| r.residual(x).abs())
        .fold(0.0, f64::max);
    let quadratic_slacks: Vec<f64> = prog.quadratics.iter().map(|(_, q)| -q.eval(x)).collect();
    let max_inequality = prog
        .inequalities
        .iter()
        .map(|(_, r)| r.residual(x))
        .chain(quadratic_slacks.iter().map(|s| -s))
        .fold(0.0, f64::max);
    Ok(Residuals {
        max_equality,
        max_inequality,
        quadratic_slacks,
    })
}

/// Line-oriented listing of the program. Variables first, then constraints
/// in build order (branch, then kind), then the objective.
pub fn dump(prog: &ConvexProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "program vars={} eq={} lin={} quad={} v_load={}",
        prog.n_vars,
        prog.equalities.len(),
        prog.inequalities.len(),
        prog.quadratics.len(),
        prog.v_load
    );
    for (i, name) in prog.var_names.iter().enumerate() {
        let _ = writeln!(s, "var {i} {name}");
    }
    let tag = |t: &Tag| {
        let mut out = match t.branch {
            Some(b) => format!("b{b}"),
            None => "net".to_string(),
        };
        out.push(' ');
        out.push_str(t.kind.label());
        if let Some(j) = t.index {
            let _ = write!(out, "[{j}]");
        }
        out
    };
    let lin = |coeffs: &[(usize, f64)]| {
        coeffs
            .iter()
            .map(|(i, c)| format!("{c:+e}*x{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (t, r) in &prog.equalities {
        let _ = writeln!(s, "eq {} : {} = {:e}", tag(t), lin(&r.coeffs), r.rhs);
    }
    for (t, r) in &prog.inequalities {
        let _ = writeln!(s, "le {} : {} <= {:e}", tag(t), lin(&r.coeffs), r.rhs);
    }
    let quad = |q: &Quadratic| {
        let p =
            q.p.iter()
                .map(|(i, j, v)| format!("{v:+e}*x{i}*x{j}"))
                .collect::<Vec<_>>()
                .join(" ");
        format!("{p} | {} | {:+e}", lin(&q.q), q.r)
    };
    for (t, q) in &prog.quadratics {
        let _ = writeln!(s, "qc {} : {} <= 0", tag(t), quad(q));
    }
    let _ = writeln!(s, "min : {}", quad(&prog.objective));
    s
}

/// Serializable copy of the program counts, for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSize {
    pub vars: usize,
    pub equalities: usize,
    pub linear: usize,
    pub quadratic: usize,
}

impl From<&ConvexProgram> for ProgramSize {
    fn from(p: &ConvexProgram) -> Self {
        Self {
            vars: p.n_vars,
            equalities: p.equalities.len(),
            linear: p.inequalities.len(),
            quadratic: p.quadratics.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Branch, PwlCurve};

    fn single_constant() -> SolveRequest {
        let mut b = Branch::ideal("solo", PwlCurve::constant(40.0), 0.2);
        b.rs = 0.3;
        b.r_inductor = 0.05;
        b.r_mosfet = 0.02;
        b.r_diode = 0.01;
        b.v_diode = 0.5;
        b.alpha = 0.002;
        b.g_max = Some(4.0);
        let net = NetworkSpec {
            branches: vec![b],
            r_load: 10.0,
            v_load_min: 50.0,
            v_load_max: 55.0,
            f_s: 1e5,
        };
        let mut r = SolveRequest::at_min_voltage(net);
        r.include_circulating = false;
        r
    }

    #[test]
    fn single_branch_counts() {
        let p = build_program(&single_constant()).unwrap();
        assert_eq!(p.n_vars, 5);
        assert_eq!(p.equalities.len(), 3);
        assert_eq!(p.count(ConstraintKind::ViCurve), 1);
        assert_eq!(p.quadratics.len(), 1);
        assert_eq!(
            p.count(ConstraintKind::GainLower) + p.count(ConstraintKind::GainUpper),
            2
        );
    }

    #[test]
    fn zero_vector_residuals() {
        let p = build_program(&single_constant()).unwrap();
        let r = constraint_residuals(&p, &vec![0.0; p.n_vars]).unwrap();
        // KVL_out: V'' = 50 and KCL: I = 5
        assert_eq!(r.max_equality, 50.0);
        assert!(!r.is_feasible());
        assert_eq!(objective_value(&p, &vec![0.0; p.n_vars]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = build_program(&single_constant()).unwrap();
        assert!(matches!(
            objective_value(&p, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 5,
                got: 1
            })
        ));
        assert!(constraint_residuals(&p, &[]).is_err());
    }

    #[test]
    fn objective_matches_branch_loss() {
        let req = single_constant();
        let p = build_program(&req).unwrap();
        let b = &req.network.branches[0];
        let x = [38.0, 35.0, 51.0, 7.0, 5.0];
        let q = lossmodel::branch_loss(b, 7.0, 5.0, 50.0).unwrap().total_q;
        let f = objective_value(&p, &x).unwrap();
        assert!((f - q).abs() <= 1e-12 * q, "{f} vs {q}");
    }

    #[test]
    fn weights_scale_objective() {
        let mut req = single_constant();
        let x = [38.0, 35.0, 51.0, 7.0, 5.0];
        let f1 = objective_value(&build_program(&req).unwrap(), &x).unwrap();
        req.network.branches[0].lambda = 3.0;
        let f3 = objective_value(&build_program(&req).unwrap(), &x).unwrap();
        assert!((f3 - 3.0 * f1).abs() < 1e-12 * f3);
    }

    #[test]
    fn out_of_range_voltage() {
        let mut req = single_constant();
        req.v_load = 60.0;
        assert!(matches!(
            build_program(&req),
            Err(Error::LoadVoltageOutOfRange { .. })
        ));
    }

    #[test]
    fn gate_failure_reported() {
        let mut req = single_constant();
        let b = &mut req.network.branches[0];
        b.r_mosfet = 0.5;
        b.r_diode = 0.0;
        b.r_cable = 0.1;
        assert!(matches!(build_program(&req), Err(Error::GateFailed { .. })));
    }

    #[test]
    fn circulating_aux_only_with_mu() {
        let mut req = single_constant();
        req.include_circulating = true;
        let p = build_program(&req).unwrap();
        assert_eq!(p.n_vars, 5);
        req.network.branches[0].mu = 1.0;
        let p = build_program(&req).unwrap();
        assert_eq!(p.n_vars, 6);
        assert_eq!(p.count(ConstraintKind::CirculatingPos), 1);
    }

    #[test]
    fn dump_is_stable() {
        let p = build_program(&single_constant()).unwrap();
        let a = dump(&p);
        assert_eq!(a, dump(&build_program(&single_constant()).unwrap()));
        assert!(a.starts_with("program vars=5 eq=3 lin=9 quad=1 v_load=50\n"));
        assert!(a.contains("var 3 solo.i_s\n"));
        assert!(a.contains("eq net kcl : +1e0*x4 = 5e0\n"));
    }
}
