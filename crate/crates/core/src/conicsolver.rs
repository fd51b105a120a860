//! Log-barrier interior-point solver for convex QCQPs.
//!
//! Phase 1 finds a strictly feasible point by minimising a shared slack `s`
//! with `f_i(x) <= s`, taking damped steps while far from its central path
//! so that no single constraint gets pinned early; phase 2 follows the central path of
//! `t·f0(x) - Σ log(-f_i(x))` under `A·x = b`. Each centering step is an
//! equality-constrained Newton step solved as a dense KKT system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxation::{ConvexProgram, LinearRow, Quadratic, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Stop when the barrier gap `m/t` drops below `tol_gap·max(1, |f0|)`.
    pub tol_gap: f64,
    /// Largest accepted equality or inequality residual.
    pub tol_feas: f64,
    /// Newton steps allowed per phase.
    pub max_iters: usize,
    pub barrier_factor: f64,
    /// Phase 1 stops once every constraint holds with this margin.
    pub slack_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_gap: 1e-9,
            tol_feas: 1e-9,
            max_iters: 200,
            barrier_factor: 10.0,
            slack_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖∇f0 + Σλ∇f_i + Aᵀν‖∞`
    pub stationarity: f64,
    /// Largest equality residual or positive inequality value.
    pub primal: f64,
    /// `max λ_i·|f_i|`, equal to `1/t` on the central path.
    pub complementarity: f64,
    /// `m/t`, an upper bound on the suboptimality.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers for linear inequalities followed by quadratics.
    pub dual_ineq: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub kkt: KktReport,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.phase1_iterations + self.phase2_iterations
    }
}

/// Solves the program from scratch.
pub fn solve(prog: &ConvexProgram, settings: &SolverSettings) -> Result<Solution> {
    solve_from(prog, settings, None)
}

/// A point with every inequality below `-slack_margin` and the equalities
/// met, or [`Error::Infeasible`].
pub fn solve_phase1(prog: &ConvexProgram, settings: &SolverSettings) -> Result<Vec<f64>> {
    validate(prog, settings)?;
    phase1(prog, settings).map(|(x, _)| x)
}

/// Solves the program, skipping phase 1 when `start` is strictly feasible.
pub fn solve_from(
    prog: &ConvexProgram,
    settings: &SolverSettings,
    start: Option<&[f64]>,
) -> Result<Solution> {
    validate(prog, settings)?;
    let (x0, phase1_iterations) = match start {
        Some(x) if x.len() == prog.n_vars && strictly_feasible(prog, x, settings.tol_feas) => {
            (x.to_vec(), 0)
        }
        _ => phase1(prog, settings)?,
    };

    let m = prog.n_ineq();
    if m == 0 && prog.objective.p.is_empty() && !prog.objective.q.is_empty() {
        return Err(Error::NumericalFailure(
            "linear objective with no inequalities".into(),
        ));
    }
    let t0 = initial_t(prog, &x0);
    let mut run = Barrier::new(prog, x0, t0, settings);
    let t = run.run("phase2", |_, _| false)?;
    let x = run.x;
    let phase2_iterations = run.iterations;

    let objective = prog.objective.eval(&x);
    let fi = ineq_values(prog, &x);
    let (dual_ineq, dual_eq, stationarity) = certificate(prog, &x, t);
    let eq_res = max_eq_residual(prog, &x);
    let primal = fi.iter().copied().fold(eq_res, f64::max);
    if eq_res > settings.tol_feas.max(1e-12 * scale_of(prog, &x)) {
        return Err(Error::NumericalFailure(format!(
            "equality residual {eq_res:.3e} after phase 2"
        )));
    }
    let complementarity = dual_ineq
        .iter()
        .zip(&fi)
        .map(|(l, f)| l * f.abs())
        .fold(0.0, f64::max);
    let kkt = KktReport {
        stationarity,
        primal,
        complementarity,
        gap: m as f64 / t,
    };
    log::debug!(
        "solved: f0={objective:.12} phase1={phase1_iterations} phase2={phase2_iterations} kkt={kkt:?}"
    );
    Ok(Solution {
        x,
        objective,
        dual_ineq,
        dual_eq,
        phase1_iterations,
        phase2_iterations,
        kkt,
    })
}

fn validate(prog: &ConvexProgram, settings: &SolverSettings) -> Result<()> {
    let bad = |what: &str| Err(Error::InvalidInput(format!("solver setting {what}")));
    if !(settings.tol_gap > 0.0) {
        return bad("tol_gap must be positive");
    }
    if !(settings.tol_feas > 0.0) {
        return bad("tol_feas must be positive");
    }
    if !(settings.barrier_factor > 1.0) {
        return bad("barrier_factor must exceed 1");
    }
    if settings.max_iters == 0 {
        return bad("max_iters must be positive");
    }
    let n = prog.n_vars;
    let idx_ok = |i: usize| i < n;
    let rows_ok = prog
        .equalities
        .iter()
        .chain(&prog.inequalities)
        .all(|(_, r)| {
            r.coeffs.iter().all(|&(i, c)| idx_ok(i) && c.is_finite()) && r.rhs.is_finite()
        });
    let quad_ok = |q: &Quadratic| {
        q.p.iter()
            .all(|&(i, j, v)| idx_ok(i) && idx_ok(j) && v.is_finite())
            && q.q.iter().all(|&(i, v)| idx_ok(i) && v.is_finite())
            && q.r.is_finite()
    };
    if !rows_ok || !quad_ok(&prog.objective) || !prog.quadratics.iter().all(|(_, q)| quad_ok(q)) {
        return Err(Error::InvalidInput(
            "program has out-of-range indices or non-finite data".into(),
        ));
    }
    Ok(())
}

fn scale_of(prog: &ConvexProgram, x: &[f64]) -> f64 {
    let rhs = prog
        .equalities
        .iter()
        .map(|(_, r)| r.rhs.abs())
        .fold(0.0, f64::max);
    x.iter().map(|v| v.abs()).fold(rhs, f64::max).max(1.0)
}

fn ineq_values(prog: &ConvexProgram, x: &[f64]) -> Vec<f64> {
    prog.inequalities
        .iter()
        .map(|(_, r)| r.residual(x))
        .chain(prog.quadratics.iter().map(|(_, q)| q.eval(x)))
        .collect()
}

fn max_eq_residual(prog: &ConvexProgram, x: &[f64]) -> f64 {
    prog.equalities
        .iter()
        .map(|(_, r)| r.residual(x).abs())
        .fold(0.0, f64::max)
}

fn strictly_feasible(prog: &ConvexProgram, x: &[f64], tol_feas: f64) -> bool {
    max_eq_residual(prog, x) <= tol_feas && ineq_values(prog, x).iter().all(|&f| f < 0.0)
}

fn eq_matrix(prog: &ConvexProgram) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(prog.equalities.len(), prog.n_vars);
    for (k, (_, r)) in prog.equalities.iter().enumerate() {
        for &(i, c) in &r.coeffs {
            a[(k, i)] += c;
        }
    }
    a
}

/// Constraint gradients at `x`, one column per inequality.
fn ineq_gradients(prog: &ConvexProgram, x: &[f64]) -> DMatrix<f64> {
    let n = prog.n_vars;
    let nl = prog.inequalities.len();
    let mut g = DMatrix::zeros(n, prog.n_ineq());
    for (k, (_, r)) in prog.inequalities.iter().enumerate() {
        for &(i, c) in &r.coeffs {
            g[(i, k)] += c;
        }
    }
    let mut col = vec![0.0; n];
    for (k, (_, q)) in prog.quadratics.iter().enumerate() {
        col.iter_mut().for_each(|v| *v = 0.0);
        q.add_gradient(x, 1.0, &mut col);
        for i in 0..n {
            g[(i, nl + k)] = col[i];
        }
    }
    g
}

/// `min ‖g0 + G_S·λ_S + Aᵀν‖` by least squares; returns `(λ_S, ν, residual)`.
fn fit_multipliers(
    g0: &DVector<f64>,
    grads: &DMatrix<f64>,
    at: &DMatrix<f64>,
    active: &[usize],
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let n = g0.len();
    let cols = active.len() + at.ncols();
    if cols == 0 {
        return Some((Vec::new(), Vec::new(), g0.amax()));
    }
    let mut m = DMatrix::zeros(n, cols);
    for (c, &k) in active.iter().enumerate() {
        m.set_column(c, &grads.column(k));
    }
    for c in 0..at.ncols() {
        m.set_column(active.len() + c, &at.column(c));
    }
    let y = m.clone().svd(true, true).solve(&(-g0), 1e-13).ok()?;
    let r = g0 + &m * &y;
    let (l, nu) = y.as_slice().split_at(active.len());
    Some((l.to_vec(), nu.to_vec(), r.amax()))
}

/// Dual certificate at `x`. Barrier multipliers `1/(-t·f_i)` lose accuracy
/// when `f_i` is tiny, so the multipliers of the nearly active constraints
/// are refitted by least squares (dropping any that come out negative) and
/// the better of the two certificates is kept.
fn certificate(prog: &ConvexProgram, x: &[f64], t: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let fi = ineq_values(prog, x);
    let barrier: Vec<f64> = fi.iter().map(|f| 1.0 / (-t * f)).collect();
    let mut g0 = vec![0.0; prog.n_vars];
    prog.objective.add_gradient(x, 1.0, &mut g0);
    let g0 = DVector::from_vec(g0);
    let grads = ineq_gradients(prog, x);
    let at = eq_matrix(prog).transpose();

    let lam = DVector::from_column_slice(&barrier);
    let base = &g0 + &grads * &lam;
    let (_, nu, res) = fit_multipliers(&base, &grads, &at, &[]).unwrap_or_default();
    let mut best = (barrier.clone(), nu, res);

    let xscale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let near = t.recip().sqrt() * xscale;
    let mut active: Vec<usize> = (0..fi.len()).filter(|&i| -fi[i] <= near).collect();
    while let Some((l, nu, res)) = fit_multipliers(&g0, &grads, &at, &active) {
        if let Some(neg) = l.iter().position(|&v| v < 0.0) {
            active.remove(neg);
            continue;
        }
        if res < best.2 {
            let mut full = vec![0.0; fi.len()];
            for (&k, v) in active.iter().zip(l) {
                full[k] = v;
            }
            best = (full, nu, res);
        }
        break;
    }
    best
}

/// Barrier weight whose central-path condition `t·∇f0 + ∇φ + Aᵀν = 0` is
/// best met at `x` in the least-squares sense, falling back to `m/|f0|`.
fn initial_t(prog: &ConvexProgram, x: &[f64]) -> f64 {
    let m = prog.n_ineq() as f64;
    let fallback = if m == 0.0 {
        1.0
    } else {
        m / prog.objective.eval(x).abs().max(1.0)
    };
    if m == 0.0 {
        return fallback;
    }
    let n = prog.n_vars;
    let mut g0 = vec![0.0; n];
    prog.objective.add_gradient(x, 1.0, &mut g0);
    let grads = ineq_gradients(prog, x);
    let w = DVector::from_iterator(
        prog.n_ineq(),
        ineq_values(prog, x).into_iter().map(|f| -1.0 / f),
    );
    let gphi = &grads * w;
    let at = eq_matrix(prog).transpose();
    let mut mat = DMatrix::zeros(n, 1 + at.ncols());
    mat.set_column(0, &DVector::from_vec(g0));
    for c in 0..at.ncols() {
        mat.set_column(1 + c, &at.column(c));
    }
    match mat.svd(true, true).solve(&(-gphi), 1e-13) {
        Ok(y) if y[0].is_finite() && y[0] > fallback => y[0].min(1e6 * fallback.max(1.0)),
        _ => fallback,
    }
}

/// Minimises a shared slack to find a strictly feasible start.
fn phase1(prog: &ConvexProgram, settings: &SolverSettings) -> Result<(Vec<f64>, usize)> {
    let n = prog.n_vars;
    let x_ls = if prog.equalities.is_empty() {
        DVector::zeros(n)
    } else {
        let a = eq_matrix(prog);
        let b = DVector::from_iterator(
            prog.equalities.len(),
            prog.equalities.iter().map(|(_, r)| r.rhs),
        );
        let x = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-13)
            .map_err(|e| Error::NumericalFailure(format!("least-squares start: {e}")))?;
        let res = (&a * &x - &b).amax();
        if res > settings.tol_feas.max(1e-12 * b.amax()) {
            return Err(Error::Infeasible { max_violation: res });
        }
        x
    };
    let x0: Vec<f64> = x_ls.iter().copied().collect();
    if prog.n_ineq() == 0 {
        return Ok((x0, 0));
    }
    let fi = ineq_values(prog, &x0);
    let worst = fi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst < -settings.slack_margin {
        return Ok((x0, 0));
    }

    // Aux program over (x, s): min s  s.t.  f_i(x) <= s, A·x = b, |x_j| <= R.
    let mut aux = ConvexProgram::new(n);
    let s = aux.add_var("slack");
    aux.equalities = prog.equalities.clone();
    for (tag, r) in &prog.inequalities {
        let mut coeffs = r.coeffs.clone();
        coeffs.push((s, -1.0));
        aux.inequalities.push((*tag, LinearRow::new(coeffs, r.rhs)));
    }
    for (tag, q) in &prog.quadratics {
        let mut q = q.clone();
        q.q.push((s, -1.0));
        aux.quadratics.push((*tag, q));
    }
    // A box keeps variables that only appear in slack-able rows bounded;
    // sized to the data so they do not wander far.
    let rhs_scale = prog
        .equalities
        .iter()
        .chain(&prog.inequalities)
        .map(|(_, r)| r.rhs.abs())
        .fold(x_ls.amax(), f64::max);
    let radius = 10.0 * (1.0 + rhs_scale);
    for j in 0..n {
        aux.add_le(Tag::GENERIC, vec![(j, 1.0)], radius);
        aux.add_le(Tag::GENERIC, vec![(j, -1.0)], radius);
    }
    aux.objective.q.push((s, 1.0));

    let mut start = x0;
    start.push(worst.max(0.0) + 1.0);
    let margin = settings.slack_margin;
    let t0 = 1.0;
    let mut run = Barrier::new(&aux, start, t0, settings);
    run.early_exit = Some((s, -margin));
    run.damped = true;
    let m = aux.n_ineq() as f64;
    let mut lower_bound = f64::NEG_INFINITY;
    run.run("phase1", |x, t| {
        lower_bound = x[s] - m / t;
        x[s] < -margin || lower_bound > 0.0
    })?;
    let slack = run.x[s];
    if slack >= -margin {
        return Err(Error::Infeasible {
            max_violation: slack.max(lower_bound).max(0.0),
        });
    }
    let mut x = run.x;
    x.truncate(n);
    Ok((x, run.iterations))
}

struct Barrier<'a> {
    prog: &'a ConvexProgram,
    settings: &'a SolverSettings,
    x: Vec<f64>,
    t: f64,
    iterations: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Stop as soon as `x[i] < value`.
    early_exit: Option<(usize, f64)>,
    /// Cap steps at `1/(1+λ)` while the Newton decrement `λ` is large.
    damped: bool,
    exited: bool,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a ConvexProgram, x: Vec<f64>, t: f64, settings: &'a SolverSettings) -> Self {
        let a = eq_matrix(prog);
        let b = DVector::from_iterator(
            prog.equalities.len(),
            prog.equalities.iter().map(|(_, r)| r.rhs),
        );
        Self {
            prog,
            settings,
            x,
            t,
            iterations: 0,
            a,
            b,
            early_exit: None,
            exited: false,
            damped: false,
        }
    }

    /// Runs outer iterations until the gap target is met or `stop` returns
    /// true after a centering pass. Returns the final `t`.
    fn run(&mut self, phase: &str, mut stop: impl FnMut(&[f64], f64) -> bool) -> Result<f64> {
        let m = self.prog.n_ineq() as f64;
        loop {
            self.center()?;
            if self.exited {
                return Ok(self.t);
            }
            let f0 = self.prog.objective.eval(&self.x);
            let gap = m / self.t;
            log::debug!(
                "{phase}: t={:.3e} f0={f0:.12} gap={gap:.3e} newton={}",
                self.t,
                self.iterations
            );
            if stop(&self.x, self.t) {
                return Ok(self.t);
            }
            if m == 0.0 || gap <= self.settings.tol_gap * f0.abs().max(1.0) {
                return Ok(self.t);
            }
            self.t *= self.settings.barrier_factor;
        }
    }

    fn barrier_value(&self, x: &[f64]) -> f64 {
        let mut v = self.t * self.prog.objective.eval(x);
        for f in ineq_values(self.prog, x) {
            if f >= 0.0 {
                return f64::INFINITY;
            }
            v -= (-f).ln();
        }
        v
    }

    /// Newton iterations on the barrier problem at the current `t`.
    fn center(&mut self) -> Result<()> {
        const DECREMENT_TOL: f64 = 1e-12;
        loop {
            if self.iterations >= self.settings.max_iters {
                return Err(Error::IterLimit {
                    iterations: self.iterations,
                });
            }
            let (g, h) = self.derivatives();
            let xv = DVector::from_column_slice(&self.x);
            let r_eq = &self.b - &self.a * &xv;
            let dx = self.newton_direction(&g, &h, &r_eq)?;
            let decrement = -g.dot(&dx);
            let eq_drift = r_eq.amax();
            let phi0 = self.barrier_value(&self.x);
            let floor = DECREMENT_TOL.max(4.0 * f64::EPSILON * phi0.abs());
            if decrement.abs() / 2.0 <= floor && eq_drift <= 1e-13 * scale_of(self.prog, &self.x) {
                return Ok(());
            }
            let xscale = self.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let drift_tol = 0.1
                * self
                    .settings
                    .tol_feas
                    .max(1e-12 * scale_of(self.prog, &self.x));
            let drifting = eq_drift > drift_tol;
            if !drifting && (decrement <= 0.0 || dx.amax() <= 1e-15 * xscale) {
                // Only rounding noise is left.
                return Ok(());
            }
            self.iterations += 1;

            let dx: Vec<f64> = dx.iter().copied().collect();
            let mut step = self.max_step(&dx).min(1.0);
            if self.damped && decrement > 1.0 {
                step = step.min(1.0 / (1.0 + decrement.sqrt()));
            }
            let slope = g.dot(&DVector::from_column_slice(&dx));
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = self.x.iter().zip(&dx).map(|(x, d)| x + step * d).collect();
                let phi = self.barrier_value(&trial);
                let drift = (&self.b - &self.a * DVector::from_column_slice(&trial)).amax();
                let armijo = phi <= phi0 + 0.01 * step * slope
                    && phi < phi0
                    && drift <= eq_drift.max(drift_tol);
                if armijo || (drifting && phi.is_finite() && step == 1.0) {
                    log::trace!(
                        "newton {} t={:.3e} decrement={decrement:.3e} step={step:.3e}",
                        self.iterations,
                        self.t
                    );
                    self.x = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if let Some((i, v)) = self.early_exit {
                if self.x[i] < v {
                    self.exited = true;
                    return Ok(());
                }
            }
            if !accepted {
                // Numerical floor: no further decrease is representable.
                log::debug!(
                    "line search stalled at t={:.3e}, decrement {decrement:.3e}",
                    self.t
                );
                return Ok(());
            }
        }
    }

    /// Gradient and Hessian of `t·f0 - Σ log(-f_i)`.
    fn derivatives(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.prog.n_vars;
        let x = &self.x;
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        self.prog.objective.add_gradient(x, self.t, &mut g);
        self.prog.objective.add_hessian(self.t, &mut h);
        for (_, r) in &self.prog.inequalities {
            let f = r.residual(x);
            let inv = 1.0 / -f;
            for &(i, c) in &r.coeffs {
                g[i] += inv * c;
                for &(j, d) in &r.coeffs {
                    h[(i, j)] += inv * inv * c * d;
                }
            }
        }
        let mut grad = vec![0.0; n];
        for (_, q) in &self.prog.quadratics {
            let f = q.eval(x);
            let inv = 1.0 / -f;
            grad.iter_mut().for_each(|v| *v = 0.0);
            q.add_gradient(x, 1.0, &mut grad);
            let nz: Vec<usize> = (0..n).filter(|&i| grad[i] != 0.0).collect();
            for &i in &nz {
                g[i] += inv * grad[i];
                for &j in &nz {
                    h[(i, j)] += inv * inv * grad[i] * grad[j];
                }
            }
            q.add_hessian(inv, &mut h);
        }
        (DVector::from_vec(g), h)
    }

    fn newton_direction(
        &self,
        g: &DVector<f64>,
        h: &DMatrix<f64>,
        r_eq: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.prog.n_vars;
        let p = self.prog.equalities.len();
        // Symmetric diagonal scaling: the barrier Hessian spans many orders
        // of magnitude near the end and plain LU loses the equality rows.
        let dx: Vec<f64> = (0..n)
            .map(|i| 1.0 / h[(i, i)].abs().max(1.0).sqrt())
            .collect();
        let de: Vec<f64> = (0..p)
            .map(|r| {
                let m = (0..n)
                    .map(|c| (self.a[(r, c)] * dx[c]).abs())
                    .fold(0.0, f64::max);
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            })
            .collect();
        let d = DVector::from_iterator(n + p, dx.iter().chain(&de).copied());
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-g));
        rhs.rows_mut(n, p).copy_from(r_eq);
        let rhs = rhs.component_mul(&d);
        let mut reg = 0.0;
        for _ in 0..6 {
            let mut k = DMatrix::zeros(n + p, n + p);
            k.view_mut((0, 0), (n, n)).copy_from(h);
            k.view_mut((n, 0), (p, n)).copy_from(&self.a);
            k.view_mut((0, n), (n, p)).copy_from(&self.a.transpose());
            for i in 0..n + p {
                for j in 0..n + p {
                    k[(i, j)] *= d[i] * d[j];
                }
            }
            for i in 0..n {
                k[(i, i)] += reg;
            }
            let lu = k.clone().lu();
            if let Some(mut sol) = lu.solve(&rhs) {
                // One round of refinement for the equality rows.
                if let Some(fix) = lu.solve(&(&rhs - &k * &sol)) {
                    sol += fix;
                }
                if sol.iter().all(|v| v.is_finite()) {
                    return Ok(sol.rows(0, n).component_mul(&d.rows(0, n)));
                }
            }
            reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
        }
        Err(Error::NumericalFailure("singular KKT system".into()))
    }

    /// Largest step keeping every inequality strictly satisfied, shortened
    /// by the fraction-to-boundary factor.
    fn max_step(&self, dx: &[f64]) -> f64 {
        const FRACTION: f64 = 0.99;
        let x = &self.x;
        let mut smax = f64::INFINITY;
        for (_, r) in &self.prog.inequalities {
            let slope = r.dot(dx);
            if slope > 0.0 {
                smax = smax.min(-r.residual(x) / slope);
            }
        }
        let mut grad = vec![0.0; self.prog.n_vars];
        for (_, q) in &self.prog.quadratics {
            // f(x + s·d) = f + s·∇f·d + s²·dᵀPd
            let f = q.eval(x);
            grad.iter_mut().for_each(|v| *v = 0.0);
            q.add_gradient(x, 1.0, &mut grad);
            let b: f64 = grad.iter().zip(dx).map(|(g, d)| g * d).sum();
            let a = q.curvature(dx);
            let root = smallest_positive_root(a, b, f);
            smax = smax.min(root);
        }
        if smax.is_finite() {
            FRACTION * smax
        } else {
            1.0
        }
    }
}

/// Smallest `s > 0` with `a·s² + b·s + c = 0`, given `c < 0`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    if a.abs() <= 1e-300 {
        return if b > 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Stable pair of roots.
    let qq = -0.5 * (b + b.signum() * sq);
    let r1 = qq / a;
    let r2 = if qq != 0.0 { c / qq } else { f64::INFINITY };
    [r1, r2]
        .into_iter()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min)
}
