//! Turns a relaxed optimum into a physical dispatch: restores the source
//! characteristic, audits the power balance, and extracts converter gains
//! and duty ratios.

use serde::{Deserialize, Serialize};

use crate::conicsolver::{self, KktReport};
use crate::error::{Error, Result};
use crate::lossmodel::{self, LossBreakdown};
use crate::netmodel::{NetworkSpec, OperatingPoint};
use crate::oracle;
use crate::par::{self, Execution};
use crate::relaxation::{self, SolveRequest};

/// Relative power-balance slack accepted by the audit.
pub const TIGHTNESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tightness {
    /// `(Vs·Is - Q - V_load·I) / (Vs·Is)` after restoration.
    pub power_slack: f64,
    /// `f(Is) - Vs` before and after restoration.
    pub vi_slack_before: f64,
    pub vi_slack_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub names: Vec<String>,
    pub point: OperatingPoint,
    pub gains: Vec<f64>,
    pub duties: Vec<f64>,
    pub losses: Vec<LossBreakdown>,
    pub circulating: Vec<f64>,
    /// `Σ λ·Q + Σ μ·|Ic|` (the μ part only when circulating cost is on).
    pub total_cost: f64,
    pub tightness: Vec<Tightness>,
}

impl DispatchPlan {
    pub fn total_output_current(&self) -> f64 {
        self.point.branches.iter().map(|p| p.i_out).sum()
    }
}

/// Sets `Vs = f(Is)` and shifts `V'` by the same amount, leaving currents and
/// output voltages alone.
pub fn restore_vi_tightness(x: &OperatingPoint, net: &NetworkSpec) -> Result<OperatingPoint> {
    check_len(x, net)?;
    let mut out = x.clone();
    for (k, (p, b)) in out.branches.iter_mut().zip(&net.branches).enumerate() {
        let f = b.curve.eval(p.i_s);
        if p.vs < f {
            let vs_old = p.vs;
            p.vs = f;
            p.v_in += f - vs_old;
        }
        if p.v_out < p.v_in * (1.0 - 1e-9) {
            return Err(Error::GainBelowOne {
                branch: k,
                gain: p.v_out / p.v_in,
            });
        }
    }
    Ok(out)
}

/// A branch whose loss does not grow with `Is` leaves the optimum flat in
/// that direction, so the solver may stop with surplus source power. Pulls
/// `Is` back to the smallest current that closes the balance; the loss can
/// only fall. Skipped when the raised `V'` would push the gain below one.
fn close_power_slack(x: &mut OperatingPoint, net: &NetworkSpec, v_load: f64) {
    let slacks = audit_power_tightness(x, net, v_load);
    for ((p, b), s) in x.branches.iter_mut().zip(&net.branches).zip(slacks) {
        if !(s > TIGHTNESS_TOL) {
            continue;
        }
        let Some(is) = oracle::tight_source_current(b, p.i_out, v_load) else {
            continue;
        };
        let vs = b.curve.eval(is);
        let v_in = vs - b.rs * is;
        if is < p.i_s && v_in > 0.0 && v_in <= p.v_out {
            log::debug!(
                "branch `{}`: Is {} -> {is} closes a flat power balance",
                b.name,
                p.i_s
            );
            p.i_s = is;
            p.vs = vs;
            p.v_in = v_in;
        }
    }
}

/// Relative power-balance slack per branch.
pub fn audit_power_tightness(x: &OperatingPoint, net: &NetworkSpec, v_load: f64) -> Vec<f64> {
    x.branches
        .iter()
        .zip(&net.branches)
        .map(|(p, b)| {
            let supplied = p.vs * p.i_s;
            let used = lossmodel::loss_total(b, p.i_s, p.i_out, v_load) + v_load * p.i_out;
            if supplied == 0.0 {
                if used == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (supplied - used) / supplied
            }
        })
        .collect()
}

pub fn extract_gains(x: &OperatingPoint) -> Result<Vec<f64>> {
    x.branches
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if p.v_in <= 0.0 {
                Err(Error::DivideByZeroVoltage { branch: k })
            } else {
                Ok(p.v_out / p.v_in)
            }
        })
        .collect()
}

/// `D = 1 - I/Is`
pub fn extract_duties(x: &OperatingPoint) -> Result<Vec<f64>> {
    x.branches
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if !(p.i_s > 0.0) || p.i_out > p.i_s {
                Err(Error::NonPhysicalPoint {
                    reason: format!(
                        "branch {k}: need Is > 0 and Is >= I, got Is = {}, I = {}",
                        p.i_s, p.i_out
                    ),
                })
            } else {
                Ok(1.0 - p.i_out / p.i_s)
            }
        })
        .collect()
}

/// Rounds a duty ratio to the nearest multiple of `1/resolution`.
pub fn quantize_duty(d: f64, resolution: u32) -> f64 {
    let r = f64::from(resolution.max(1));
    (d * r).round() / r
}

/// `Σ λ·Q + Σ μ·|Ic|` at a point.
pub fn dispatch_cost(net: &NetworkSpec, x: &OperatingPoint, include_circulating: bool) -> f64 {
    let v = x.v_load;
    let loss: f64 = x
        .branches
        .iter()
        .zip(&net.branches)
        .map(|(p, b)| b.lambda * lossmodel::loss_total(b, p.i_s, p.i_out, v))
        .sum();
    if !include_circulating {
        return loss;
    }
    let (v_out, r): (Vec<f64>, Vec<f64>) = x
        .branches
        .iter()
        .zip(&net.branches)
        .map(|(p, b)| (p.v_out, b.r_cable))
        .unzip();
    let circ: f64 = lossmodel::circulating_currents(&v_out, &r)
        .iter()
        .zip(&net.branches)
        .map(|(c, b)| b.mu * c.abs())
        .sum();
    loss + circ
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FinishOptions {
    /// Treat a failed tightness audit as an error instead of a warning.
    pub strict_audit: bool,
    pub duty_resolution: Option<u32>,
    pub include_circulating: bool,
}

/// Restores tightness, audits, and assembles the plan.
pub fn finish(
    net: &NetworkSpec,
    relaxed: &OperatingPoint,
    opts: &FinishOptions,
) -> Result<DispatchPlan> {
    check_len(relaxed, net)?;
    let mut point = restore_vi_tightness(relaxed, net)?;
    let v = point.v_load;
    close_power_slack(&mut point, net, v);
    let slacks = audit_power_tightness(&point, net, v);
    for (k, s) in slacks.iter().enumerate() {
        if !(s.abs() <= TIGHTNESS_TOL) {
            if opts.strict_audit {
                return Err(Error::NotTight {
                    branch: k,
                    slack: *s,
                });
            }
            log::warn!("branch {k}: power-balance slack {s:.3e} exceeds {TIGHTNESS_TOL:e}");
        }
    }
    let tightness = relaxed
        .branches
        .iter()
        .zip(&point.branches)
        .zip(&net.branches)
        .zip(&slacks)
        .map(|(((before, after), b), s)| Tightness {
            power_slack: *s,
            vi_slack_before: b.curve.eval(before.i_s) - before.vs,
            vi_slack_after: b.curve.eval(after.i_s) - after.vs,
        })
        .collect();
    let gains = extract_gains(&point)?;
    let mut duties = extract_duties(&point)?;
    if let Some(r) = opts.duty_resolution {
        duties.iter_mut().for_each(|d| *d = quantize_duty(*d, r));
    }
    let losses = point
        .branches
        .iter()
        .zip(&net.branches)
        .map(|(p, b)| lossmodel::breakdown_unchecked(b, p.i_s, p.i_out, v))
        .collect();
    let v_out: Vec<f64> = point.branches.iter().map(|p| p.v_out).collect();
    let r: Vec<f64> = net.branches.iter().map(|b| b.r_cable).collect();
    let circulating = lossmodel::circulating_currents(&v_out, &r);
    let total_cost = dispatch_cost(net, &point, opts.include_circulating);
    Ok(DispatchPlan {
        names: net.branches.iter().map(|b| b.name.clone()).collect(),
        point,
        gains,
        duties,
        losses,
        circulating,
        total_cost,
        tightness,
    })
}

fn check_len(x: &OperatingPoint, net: &NetworkSpec) -> Result<()> {
    if x.branches.len() != net.len() {
        return Err(Error::DimensionMismatch {
            expected: net.len(),
            got: x.branches.len(),
        });
    }
    Ok(())
}

/// A finished plan plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub plan: DispatchPlan,
    /// Optimal value of the relaxed program.
    pub relaxed_objective: f64,
    pub iterations: usize,
    pub kkt: KktReport,
}

/// Validate, gate, build, solve, tighten, audit.
pub fn optimize(req: &SolveRequest, strict_audit: bool) -> Result<Outcome> {
    let prog = relaxation::build_program(req)?;
    let start = relaxation::interior_start(req, &prog);
    let sol = conicsolver::solve_from(&prog, &req.settings, start.as_deref())?;
    let relaxed = prog.unpack(&sol.x);
    let opts = FinishOptions {
        strict_audit,
        duty_resolution: None,
        include_circulating: req.include_circulating,
    };
    let plan = finish(&req.network, &relaxed, &opts)?;
    Ok(Outcome {
        plan,
        relaxed_objective: sol.objective,
        iterations: sol.iterations(),
        kkt: sol.kkt,
    })
}

/// Evenly spaced load voltages from `lo` to `hi`, both included.
pub fn voltage_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k)
            .map(|i| {
                if i + 1 == k {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (k - 1) as f64
                }
            })
            .collect(),
    }
}

/// Solves `base` at each load voltage. A failed point does not stop the
/// others; results come back in grid order.
pub fn sweep(base: &SolveRequest, grid: &[f64], exec: Execution) -> Vec<Result<Outcome>> {
    par::map(exec, grid, |&v| {
        let req = SolveRequest {
            v_load: v,
            ..base.clone()
        };
        optimize(&req, false)
    })
}
