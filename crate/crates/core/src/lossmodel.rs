//! Converter loss algebra, parameter bounds and parameter estimation.
//!
//! The branch loss `Q(Is, I)` is a quadratic in the source current `Is` and
//! the output current `I`. It lumps the source-resistance, inductor, MOSFET,
//! diode, cable and switching losses. Written as a sum of squares,
//!
//! ```text
//! Q = Is²(Reff1 - Reff2) + (I + α·Is)²·R/2 + (Is - s·I)²·|RM - RD|/2
//!     + α·V_load·Is + VD·(I + α·Is) + I²·Reff3
//! ```
//!
//! with `s = sign(RM - RD)`, it is jointly convex whenever `Reff1 >= Reff2`
//! and `Reff3 >= 0` (the convexity gate).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Branch;

/// Gain reported for a branch with no conduction resistance, where the
/// averaged gain bound grows without limit.
pub const GAIN_CAP: f64 = 50.0;

/// Voltage-margin factor for the gain bound: the diode drop is at most a
/// twentieth of the input voltage.
const GAIN_MARGIN: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveResistances {
    pub r_eff1: f64,
    pub r_eff2: f64,
    pub r_eff3: f64,
}

pub fn effective_resistances(b: &Branch) -> EffectiveResistances {
    let d = (b.r_mosfet - b.r_diode).abs();
    EffectiveResistances {
        r_eff1: b.rs + b.r_inductor + b.r_mosfet + b.alpha * b.r_diode,
        r_eff2: d / 2.0 + b.alpha * b.alpha * b.r_cable / 2.0,
        r_eff3: (b.r_cable - d) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateReport {
    pub pass: bool,
    /// `Reff1 - Reff2`
    pub margin_quadratic: f64,
    /// `Reff3`
    pub margin_output: f64,
}

pub fn convexity_gate(b: &Branch) -> GateReport {
    let r = effective_resistances(b);
    let margin_quadratic = r.r_eff1 - r.r_eff2;
    let margin_output = r.r_eff3;
    GateReport {
        pass: margin_quadratic >= 0.0 && margin_output >= 0.0,
        margin_quadratic,
        margin_output,
    }
}

/// Gate check as a `Result`, naming the branch on failure.
pub fn require_gate(b: &Branch) -> Result<GateReport> {
    let g = convexity_gate(b);
    if g.pass {
        Ok(g)
    } else {
        Err(Error::GateFailed {
            branch: b.name.clone(),
            margin_quadratic: g.margin_quadratic,
            margin_output: g.margin_output,
        })
    }
}

/// Expanded coefficients of `Q(Is, I) = ss·Is² + si·Is·I + ii·I² + s·Is + i·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossQuadratic {
    pub ss: f64,
    pub si: f64,
    pub ii: f64,
    pub s: f64,
    pub i: f64,
}

impl LossQuadratic {
    pub fn new(b: &Branch, v_load: f64) -> Self {
        let a = b.alpha;
        Self {
            ss: b.rs + b.r_inductor + b.r_mosfet + a * b.r_diode,
            si: a * b.r_cable - (b.r_mosfet - b.r_diode),
            ii: b.r_cable,
            s: a * (v_load + b.v_diode),
            i: b.v_diode,
        }
    }

    #[inline]
    pub fn eval(&self, is: f64, i: f64) -> f64 {
        self.ss * is * is + self.si * is * i + self.ii * i * i + self.s * is + self.i * i
    }
}

/// Branch loss from the sum-of-squares form.
pub fn loss_total(b: &Branch, is: f64, i: f64, v_load: f64) -> f64 {
    let r = effective_resistances(b);
    let d = b.r_mosfet - b.r_diode;
    let s = if d < 0.0 { -1.0 } else { 1.0 };
    let a = b.alpha;
    is * is * (r.r_eff1 - r.r_eff2)
        + (i + a * is).powi(2) * b.r_cable / 2.0
        + (is - s * i).powi(2) * d.abs() / 2.0
        + a * v_load * is
        + b.v_diode * (i + a * is)
        + i * i * r.r_eff3
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `Is²(Rs + RL)`
    pub source_and_inductor: f64,
    /// `Is(Is - I)·RM`
    pub mosfet_conduction: f64,
    /// `VD·I + Is·I·RD`
    pub diode_conduction: f64,
    /// `I²·R`
    pub cable: f64,
    /// `α(V_load + VD)·Is + α·Is·I·R + α·Is²·RD`
    pub switching: f64,
    pub total_q: f64,
}

impl LossBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.source_and_inductor
            + self.mosfet_conduction
            + self.diode_conduction
            + self.cable
            + self.switching
    }
}

/// Per-component losses at `(is, i)`; `total_q` comes from the
/// sum-of-squares form, so it doubles as a check on the component sum.
pub fn branch_loss(b: &Branch, is: f64, i: f64, v_load: f64) -> Result<LossBreakdown> {
    if is < i || i < 0.0 {
        return Err(Error::NonPhysicalPoint {
            reason: format!("need Is >= I >= 0, got Is = {is}, I = {i}"),
        });
    }
    Ok(breakdown_unchecked(b, is, i, v_load))
}

pub(crate) fn breakdown_unchecked(b: &Branch, is: f64, i: f64, v_load: f64) -> LossBreakdown {
    let a = b.alpha;
    LossBreakdown {
        source_and_inductor: is * is * (b.rs + b.r_inductor),
        mosfet_conduction: is * (is - i) * b.r_mosfet,
        diode_conduction: b.v_diode * i + is * i * b.r_diode,
        cable: i * i * b.r_cable,
        switching: a * (v_load + b.v_diode) * is + a * is * i * b.r_cable + a * is * is * b.r_diode,
        total_q: loss_total(b, is, i, v_load),
    }
}

/// Switching-loss constant from the MOSFET transition times.
pub fn switching_alpha(tau_on: f64, tau_off: f64, f_s: f64) -> f64 {
    0.5 * (tau_on + tau_off) * f_s
}

/// Source current that keeps the inductor in continuous conduction:
/// `5·Vs_max / (f_s·L)` with `Vs_max` the open-circuit voltage.
pub fn ccm_min_source_current(b: &Branch, f_s: f64) -> Result<f64> {
    match b.inductance {
        Some(l) if l > 0.0 => Ok(5.0 * b.curve.open_circuit_voltage() / (f_s * l)),
        _ => Err(Error::MissingInductance {
            branch: b.name.clone(),
        }),
    }
}

/// Output current delivered when the source supplies exactly `is_min` with
/// the power balance held tight: the positive root of
/// `Q(Is_min, I) + V_load·I = f(Is_min)·Is_min`.
pub fn min_output_current(b: &Branch, is_min: f64, v_load: f64) -> Result<f64> {
    let q = LossQuadratic::new(b, v_load);
    let supply = b.curve.power(is_min);
    let a = q.ii;
    let bb = q.si * is_min + q.i + v_load;
    let c = q.ss * is_min * is_min + q.s * is_min - supply;
    let infeasible = || Error::InfeasibleBounds {
        branch: b.name.clone(),
    };

    if c == 0.0 {
        return Ok(if a > 0.0 { (-bb / a).max(0.0) } else { 0.0 });
    }
    if a == 0.0 {
        if bb == 0.0 {
            return Err(infeasible());
        }
        let r = -c / bb;
        return if r >= 0.0 { Ok(r) } else { Err(infeasible()) };
    }
    let disc = bb * bb - 4.0 * a * c;
    if disc < 0.0 {
        return Err(infeasible());
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (bb + bb.signum() * sq);
    let mut roots = [qq / a, if qq != 0.0 { c / qq } else { f64::NAN }];
    roots.sort_by(|x, y| x.total_cmp(y));
    if c < 0.0 {
        // one negative and one positive root
        Ok(roots[1])
    } else {
        roots.into_iter().find(|r| *r > 0.0).ok_or_else(infeasible)
    }
}

/// Largest averaged boost gain, maximised over the duty ratio with a 0.95
/// margin for the diode drop.
pub fn max_gain_bound(b: &Branch, r_load: f64) -> f64 {
    if b.r_inductor + b.r_mosfet + b.r_diode <= 0.0 {
        return GAIN_CAP;
    }
    let k = b.r_cable + r_load;
    let gain = |d: f64| {
        let dp = 1.0 - d;
        GAIN_MARGIN * dp * k / (dp * dp * k + dp * b.r_diode + d * b.r_mosfet + b.r_inductor)
    };
    let d = golden_max(gain, 1e-6, 1.0 - 1e-6, 1e-10);
    gain(d).min(GAIN_CAP)
}

/// Golden-section search for the maximiser of a unimodal function.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Net current each converter pushes into the others through the cables.
/// Pairs whose cable resistances are both zero share a node and exchange
/// nothing.
pub fn circulating_currents(v_out: &[f64], r_cable: &[f64]) -> Vec<f64> {
    assert_eq!(v_out.len(), r_cable.len());
    (0..v_out.len())
        .map(|k| {
            (0..v_out.len())
                .filter(|&j| j != k && r_cable[k] + r_cable[j] > 0.0)
                .map(|j| (v_out[k] - v_out[j]) / (r_cable[k] + r_cable[j]))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiodeFit {
    pub vd: f64,
    pub rd: f64,
}

/// Least-squares fit of `P(I) = VD·I + RD·I²` to `(current, power)` samples.
pub fn fit_diode(samples: &[(f64, f64)]) -> Result<DiodeFit> {
    let (mut s2, mut s3, mut s4, mut p1, mut p2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, p) in samples {
        let i2 = i * i;
        s2 += i2;
        s3 += i2 * i;
        s4 += i2 * i2;
        p1 += p * i;
        p2 += p * i2;
    }
    let det = s2 * s4 - s3 * s3;
    if samples.len() < 2 || !(det.abs() > 1e-12 * s2 * s4) {
        return Err(Error::DegenerateFit);
    }
    Ok(DiodeFit {
        vd: (p1 * s4 - s3 * p2) / det,
        rd: (s2 * p2 - s3 * p1) / det,
    })
}

/// Bench measurement used to back out the switching-loss constant: MOSFET
/// loss at half duty while carrying a third of the load current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaMeasurement {
    pub p_loss: f64,
    pub v_load: f64,
    pub v_d: f64,
    pub r_cable: f64,
    pub r_d: f64,
    pub r_m: f64,
    pub r_load: f64,
}

impl AlphaMeasurement {
    fn test_current(&self) -> f64 {
        self.v_load / (3.0 * self.r_load)
    }

    fn conduction(&self) -> f64 {
        0.5 * self.test_current().powi(2) * self.r_m
    }

    fn switching_scale(&self) -> f64 {
        let i = self.test_current();
        (self.v_load + self.v_d + i * (self.r_cable + self.r_d)) * i
    }

    /// Loss the test circuit would dissipate for a given `alpha`.
    pub fn loss_for_alpha(&self, alpha: f64) -> f64 {
        self.conduction() + alpha * self.switching_scale()
    }
}

pub fn estimate_alpha(m: &AlphaMeasurement) -> Result<f64> {
    let den = m.switching_scale();
    if !(den > 0.0) || !(m.r_load > 0.0) {
        return Err(Error::InvalidInput(format!(
            "switching-loss denominator {den} must be positive"
        )));
    }
    let alpha = (m.p_loss - m.conduction()) / den;
    if alpha < 0.0 {
        return Err(Error::NegativeAlpha { alpha });
    }
    Ok(alpha)
}
