//! Independent checks on a dispatch: an averaged steady-state circuit solver
//! driven by converter gains, and a brute-force grid search over gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossmodel::{self, LossBreakdown, LossQuadratic};
use crate::netmodel::{Branch, BranchPoint, NetworkSpec, OperatingPoint};
use crate::par::{self, Execution};
use crate::posttighten::{dispatch_cost, DispatchPlan};
use crate::relaxation::branch_bounds;

const SCAN_SAMPLES: usize = 256;
const MAX_BISECTIONS: usize = 400;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateResult {
    pub point: OperatingPoint,
    pub losses: Vec<LossBreakdown>,
    pub converged: bool,
    /// `|Σ I_k - V_load/R_load|` at the returned point.
    pub residual: f64,
    /// Outer bisection steps.
    pub iterations: usize,
}

/// What one branch does at a given gain and load voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchState {
    /// The gain cannot lift the output above the load voltage.
    BackFeed,
    /// The source cannot cover the losses at any current.
    Overload,
    Operating(BranchPoint),
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) < 0 <= f(hi)
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo), f(hi));
    if fhi.abs() <= flo.abs() {
        hi
    } else {
        lo
    }
}

fn point_from(b: &Branch, g: f64, v: f64, is: f64) -> BranchPoint {
    let vs = b.curve.eval(is);
    let v_in = vs - is * b.rs;
    let v_out = g * v_in;
    BranchPoint {
        vs,
        v_in,
        v_out,
        i_s: is,
        i_out: (v_out - v) / b.r_cable,
    }
}

/// Operating point of a branch with positive cable resistance at gain `g`
/// and load voltage `v`: the smallest source current where the power
/// balance `f(Is)·Is = Q + V·I` closes.
pub fn branch_at_gain(b: &Branch, g: f64, v: f64) -> BranchState {
    debug_assert!(b.r_cable > 0.0);
    let lq = LossQuadratic::new(b, v);
    let h = |is: f64| b.curve.eval(is) - is * b.rs;
    let i_of = |is: f64| (g * h(is) - v) / b.r_cable;
    if i_of(0.0) <= 0.0 {
        return BranchState::BackFeed;
    }
    // Past `cap` the branch output falls below the load voltage.
    let mut cap = 1.0;
    while i_of(cap) > 0.0 && cap < 1e7 {
        cap *= 2.0;
    }
    if i_of(cap) <= 0.0 {
        cap = bisect(0.0, cap, |is| -i_of(is));
    }
    let r = |is: f64| {
        let i = i_of(is);
        b.curve.eval(is) * is - lq.eval(is, i) - v * i
    };
    let mut prev = 0.0;
    for k in 1..=SCAN_SAMPLES {
        let is = cap * k as f64 / SCAN_SAMPLES as f64;
        if r(is) >= 0.0 {
            let root = bisect(prev, is, r);
            return BranchState::Operating(point_from(b, g, v, root));
        }
        prev = is;
    }
    BranchState::Overload
}

/// Positive root of `a·I² + b·I + c = 0` for an output current, when the
/// power balance is linear or quadratic in `I`.
fn output_from_power(lq: &LossQuadratic, is: f64, f: f64, v: f64) -> Option<f64> {
    let a = lq.ii;
    let b = lq.si * is + lq.i + v;
    let c = lq.ss * is * is + lq.s * is - f * is;
    let i = if a.abs() < 1e-300 {
        if b <= 0.0 {
            return None;
        }
        -c / b
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        (-b + disc.sqrt()) / (2.0 * a)
    };
    (i >= 0.0).then_some(i)
}

/// Smallest `Is` closing the power balance of a branch that delivers `i_out`
/// into load voltage `v`. `None` when the source cannot supply it.
pub fn tight_source_current(b: &Branch, i_out: f64, v: f64) -> Option<f64> {
    let lq = LossQuadratic::new(b, v);
    let r = |is: f64| b.curve.eval(is) * is - lq.eval(is, i_out) - v * i_out;
    if r(0.0) >= 0.0 {
        return Some(0.0);
    }
    // r is concave in Is: find where it stops rising.
    let mut hi = 1.0;
    while hi < 1e7 && r(hi) < 0.0 && r(2.0 * hi) > r(hi) {
        hi *= 2.0;
    }
    if r(hi) >= 0.0 {
        return Some(bisect(0.0, hi, r));
    }
    let hi = 2.0 * hi;
    let peak = golden_max(0.0, hi, &r);
    (r(peak) >= 0.0).then(|| bisect(0.0, peak, r))
}

pub(crate) fn golden_max(mut a: f64, mut b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-13 * b.abs().max(1.0) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Output current contributed to the outer KCL balance.
fn kcl_current(state: &BranchState) -> f64 {
    match state {
        BranchState::BackFeed => 0.0,
        BranchState::Overload => f64::INFINITY,
        BranchState::Operating(p) => p.i_out,
    }
}

/// Solves the averaged network for the given converter gains.
pub fn steady_state(net: &NetworkSpec, gains: &[f64]) -> Result<SteadyStateResult> {
    if gains.len() != net.len() {
        return Err(Error::DimensionMismatch {
            expected: net.len(),
            got: gains.len(),
        });
    }
    if let Some((k, g)) = gains
        .iter()
        .enumerate()
        .find(|(_, g)| !(**g >= 1.0 && g.is_finite()))
    {
        return Err(Error::InvalidInput(format!(
            "branch {k}: gain {g} must be >= 1"
        )));
    }
    if !(net.r_load > 0.0) || net.is_empty() {
        return Err(Error::InvalidInput(
            "network needs branches and a positive load".into(),
        ));
    }
    let pinned: Vec<usize> = (0..net.len())
        .filter(|&k| net.branches[k].r_cable == 0.0)
        .collect();
    let (v, pinned_point, iterations) = match pinned.as_slice() {
        [] => {
            let (v, it) = solve_free(net, gains)?;
            (v, None, it)
        }
        [p] => {
            let (v, bp, it) = solve_pinned(net, gains, *p)?;
            (v, Some((*p, bp)), it)
        }
        _ => {
            return Err(Error::NoConvergence(
                "more than one branch has zero cable resistance".into(),
            ))
        }
    };

    let mut branches = Vec::with_capacity(net.len());
    for (k, (b, &g)) in net.branches.iter().zip(gains).enumerate() {
        let p = match pinned_point {
            Some((p, bp)) if p == k => bp,
            _ => match branch_at_gain(b, g, v) {
                BranchState::Operating(p) if p.i_out > 0.0 => p,
                BranchState::Overload => {
                    return Err(Error::NoConvergence(format!("branch {k} is overloaded")))
                }
                _ => return Err(Error::NegativeBranchCurrent { branch: k }),
            },
        };
        branches.push(p);
    }
    let residual = (branches.iter().map(|p| p.i_out).sum::<f64>() - net.demand(v)).abs();
    let losses = branches
        .iter()
        .zip(&net.branches)
        .map(|(p, b)| lossmodel::breakdown_unchecked(b, p.i_s, p.i_out, v))
        .collect();
    Ok(SteadyStateResult {
        point: OperatingPoint {
            branches,
            v_load: v,
        },
        losses,
        converged: residual <= RESIDUAL_TOL,
        residual,
        iterations,
    })
}

fn solve_free(net: &NetworkSpec, gains: &[f64]) -> Result<(f64, usize)> {
    let f = |v: f64| {
        let supplied: f64 = net
            .branches
            .iter()
            .zip(gains)
            .map(|(b, &g)| kcl_current(&branch_at_gain(b, g, v)))
            .sum();
        supplied - net.demand(v)
    };
    let mut lo = 0.0;
    let mut hi = net
        .branches
        .iter()
        .zip(gains)
        .map(|(b, g)| g * b.curve.eval(0.0))
        .fold(0.0, f64::max);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(Error::NoConvergence("load voltage is not bracketed".into()));
    }
    let mut it = 0;
    while it < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        it += 1;
        // F decreases in V
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = if f(hi).abs() <= f(lo).abs() { hi } else { lo };
    Ok((v, it))
}

/// One branch ties its output straight to the load: bisect on its source
/// current instead, which fixes the load voltage through `V = g·V'`.
fn solve_pinned(net: &NetworkSpec, gains: &[f64], p: usize) -> Result<(f64, BranchPoint, usize)> {
    let b = &net.branches[p];
    let g = gains[p];
    let eval = |is: f64| -> Option<(f64, BranchPoint, f64)> {
        let vs = b.curve.eval(is);
        let v_in = vs - is * b.rs;
        let v = g * v_in;
        if v <= 0.0 {
            return None;
        }
        let lq = LossQuadratic::new(b, v);
        let i_p = output_from_power(&lq, is, vs, v)?;
        let others: f64 = net
            .branches
            .iter()
            .zip(gains)
            .enumerate()
            .filter(|(k, _)| *k != p)
            .map(|(_, (bk, &gk))| kcl_current(&branch_at_gain(bk, gk, v)))
            .sum();
        let bp = BranchPoint {
            vs,
            v_in,
            v_out: v,
            i_s: is,
            i_out: i_p,
        };
        Some((v, bp, others + i_p - net.demand(v)))
    };
    let resid = |is: f64| eval(is).map_or(f64::INFINITY, |e| e.2);
    if resid(0.0) > 0.0 {
        return Err(Error::NegativeBranchCurrent { branch: p });
    }
    let mut hi = 1.0;
    while resid(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::NoConvergence(
                "pinned branch current is not bracketed".into(),
            ));
        }
    }
    let is = bisect(0.0, hi, resid);
    let (v, bp, _) = eval(is)
        .ok_or_else(|| Error::NoConvergence("pinned branch lost its operating point".into()))?;
    Ok((v, bp, MAX_BISECTIONS))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Grid points per gain axis; one means the single gain 1.
    pub resolution: usize,
    pub include_circulating: bool,
    pub vin_floor: bool,
    pub execution: Execution,
}

impl GridOptions {
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            include_circulating: true,
            vin_floor: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub gains: Vec<f64>,
    pub cost: f64,
    pub point: OperatingPoint,
    /// Spacing of each gridded axis; the last branch is not gridded.
    pub cell: Vec<f64>,
    pub feasible: usize,
    pub evaluated: usize,
}

/// Brute-force optimum at a fixed load voltage.
///
/// The gains of all but the last branch run over `[1, g_max]`; each vertex
/// fixes their output currents, the last branch supplies the remainder of
/// the load current, and its gain follows from its tight operating point.
/// A vertex counts when every branch meets its output-current floor, every
/// gain lies in `[1, g_max]` and (optionally) the input-voltage floor holds.
pub fn grid_search(net: &NetworkSpec, v_load: f64, opts: &GridOptions) -> Result<GridResult> {
    if net.is_empty() || opts.resolution == 0 {
        return Err(Error::InvalidInput(
            "grid search needs branches and resolution >= 1".into(),
        ));
    }
    let n = net.len();
    let bounds = (0..n)
        .map(|k| branch_bounds(net, k, v_load, opts.vin_floor))
        .collect::<Result<Vec<_>>>()?;
    let r = opts.resolution;
    let axis = |k: usize| -> Vec<f64> {
        if r == 1 {
            vec![1.0]
        } else {
            let g = bounds[k].g_max;
            (0..r)
                .map(|i| 1.0 + (g - 1.0) * i as f64 / (r - 1) as f64)
                .collect()
        }
    };
    let axes: Vec<Vec<f64>> = (0..n - 1).map(axis).collect();
    let cell: Vec<f64> = axes
        .iter()
        .map(|a| if a.len() > 1 { a[1] - a[0] } else { 0.0 })
        .collect();
    // Precompute the gridded branches: None marks an unusable vertex.
    let states: Vec<Vec<Option<BranchPoint>>> = (0..n - 1)
        .map(|k| {
            let b = &net.branches[k];
            par::map(opts.execution, &axes[k], |&g| {
                if b.r_cable == 0.0 {
                    return None;
                }
                match branch_at_gain(b, g, v_load) {
                    BranchState::Operating(p)
                        if p.i_out >= bounds[k].i_min
                            && p.i_out > 0.0
                            && p.v_in >= bounds[k].v_in_min =>
                    {
                        Some(p)
                    }
                    _ => None,
                }
            })
        })
        .collect();

    let last = n - 1;
    let bl = &net.branches[last];
    let total = axes.iter().map(Vec::len).product::<usize>();
    let best = par::argmin_range(opts.execution, total, |idx| {
        let mut rem = idx;
        let mut branches = Vec::with_capacity(n);
        let mut gains = Vec::with_capacity(n);
        for k in 0..last {
            let len = axes[k].len();
            let i = rem % len;
            rem /= len;
            branches.push(states[k][i]?);
            gains.push(axes[k][i]);
        }
        let i_last = net.demand(v_load) - branches.iter().map(|p| p.i_out).sum::<f64>();
        if !(i_last > 0.0 && i_last >= bounds[last].i_min) {
            return None;
        }
        let is = tight_source_current(bl, i_last, v_load)?;
        let vs = bl.curve.eval(is);
        let v_in = vs - is * bl.rs;
        let v_out = v_load + i_last * bl.r_cable;
        if !(v_in > 0.0) || v_in < bounds[last].v_in_min {
            return None;
        }
        let g = v_out / v_in;
        if !(g >= 1.0 && g <= bounds[last].g_max) {
            return None;
        }
        branches.push(BranchPoint {
            vs,
            v_in,
            v_out,
            i_s: is,
            i_out: i_last,
        });
        gains.push(g);
        let point = OperatingPoint { branches, v_load };
        let cost = dispatch_cost(net, &point, opts.include_circulating);
        Some((cost, (gains, point)))
    });
    let feasible = if best.is_some() {
        par::map_range(opts.execution, total, |idx| {
            let mut rem = idx;
            (0..last).all(|k| {
                let len = axes[k].len();
                let ok = states[k][rem % len].is_some();
                rem /= len;
                ok
            })
        })
        .into_iter()
        .filter(|&b| b)
        .count()
    } else {
        0
    };
    match best {
        Some((_, cost, (gains, point))) => Ok(GridResult {
            gains,
            cost,
            point,
            cell,
            feasible,
            evaluated: total,
        }),
        None => Err(Error::AllInfeasible),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// Worst `|a - b| / max(|a|, 1e-9)`.
    pub value: f64,
    /// Branch index, `None` for the load voltage.
    pub branch: Option<usize>,
    pub quantity: String,
}

/// Worst relative deviation of `b` from `a` over `Is, I, V', V''` and the
/// load voltage.
pub fn compare_points(a: &OperatingPoint, b: &OperatingPoint) -> Deviation {
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-9);
    let mut worst = Deviation {
        value: rel(a.v_load, b.v_load),
        branch: None,
        quantity: "v_load".into(),
    };
    if a.branches.len() != b.branches.len() {
        return Deviation {
            value: f64::INFINITY,
            branch: None,
            quantity: "branch count".into(),
        };
    }
    for (k, (p, q)) in a.branches.iter().zip(&b.branches).enumerate() {
        for (name, x, y) in [
            ("i_s", p.i_s, q.i_s),
            ("i_out", p.i_out, q.i_out),
            ("v_in", p.v_in, q.v_in),
            ("v_out", p.v_out, q.v_out),
        ] {
            let d = rel(x, y);
            if d > worst.value || d.is_nan() {
                worst = Deviation {
                    value: d,
                    branch: Some(k),
                    quantity: name.into(),
                };
            }
        }
    }
    worst
}

pub fn compare(plan: &DispatchPlan, ss: &SteadyStateResult) -> Deviation {
    compare_points(&plan.point, &ss.point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::PwlCurve;

    fn single(r_cable: f64) -> NetworkSpec {
        NetworkSpec {
            branches: vec![Branch::ideal("a", PwlCurve::constant(10.0), r_cable)],
            r_load: 4.0,
            v_load_min: 15.0,
            v_load_max: 25.0,
            f_s: 1e5,
        }
    }

    #[test]
    fn pinned_ideal_branch() {
        let ss = steady_state(&single(0.0), &[2.0]).unwrap();
        let p = ss.point.branches[0];
        assert!((ss.point.v_load - 20.0).abs() < 1e-10);
        assert!((p.i_out - 5.0).abs() < 1e-10);
        assert!((p.i_s - 10.0).abs() < 1e-10);
        assert!(ss.converged);
    }

    #[test]
    fn cable_branch_balances() {
        let net = single(0.1);
        let ss = steady_state(&net, &[2.0]).unwrap();
        let p = ss.point.branches[0];
        // V'' = 20 = V + 0.1·I and I = V/4
        assert!(
            (ss.point.v_load - 20.0 / 1.025).abs() < 1e-9,
            "{}",
            ss.point.v_load
        );
        assert!((p.i_out - ss.point.v_load / 4.0).abs() < 1e-9);
        let supplied = p.vs * p.i_s;
        let used = p.i_out * p.i_out * 0.1 + ss.point.v_load * p.i_out;
        assert!((supplied - used).abs() < 1e-8 * supplied);
    }

    #[test]
    fn gain_raises_current_and_voltage() {
        let net = single(0.1);
        let mut last = (0.0, 0.0);
        for g in [1.5, 2.0, 2.5, 3.0] {
            let ss = steady_state(&net, &[g]).unwrap();
            let cur = (ss.point.branches[0].i_out, ss.point.v_load);
            assert!(cur.0 > last.0 && cur.1 > last.1);
            last = cur;
        }
    }

    #[test]
    fn rejects_bad_gains() {
        assert!(matches!(
            steady_state(&single(0.1), &[0.5]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            steady_state(&single(0.1), &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn back_feeding_branch_reported() {
        let mut net = single(0.1);
        let mut weak = Branch::ideal("b", PwlCurve::constant(5.0), 0.1);
        weak.rs = 0.1;
        net.branches.push(weak);
        assert!(matches!(
            steady_state(&net, &[3.0, 1.0]),
            Err(Error::NegativeBranchCurrent { branch: 1 })
        ));
    }

    #[test]
    fn tight_current_ideal() {
        let b = Branch::ideal("a", PwlCurve::constant(10.0), 0.0);
        let is = tight_source_current(&b, 5.0, 20.0).unwrap();
        assert!((is - 10.0).abs() < 1e-10);
        assert_eq!(tight_source_current(&b, 0.0, 20.0), Some(0.0));
    }

    #[test]
    fn grid_ideal_single_branch() {
        let net = single(0.0);
        let g = grid_search(&net, 20.0, &GridOptions::new(5)).unwrap();
        assert_eq!(g.cost, 0.0);
        assert!((g.gains[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn compare_identical_and_shifted() {
        let ss = steady_state(&single(0.1), &[2.0]).unwrap();
        assert_eq!(compare_points(&ss.point, &ss.point).value, 0.0);
        let mut other = ss.point.clone();
        other.branches[0].i_s *= 1.01;
        let d = compare_points(&ss.point, &other);
        assert!((d.value - 0.01).abs() < 1e-12);
        assert_eq!(d.branch, Some(0));
        assert_eq!(d.quantity, "i_s");
    }
}
