use dcshare::conicsolver::{solve, solve_from, solve_phase1, SolverSettings};
use dcshare::document::load_network;
use dcshare::relaxation::{
    build_program, constraint_residuals, interior_start, ConvexProgram, Quadratic, Tag,
};
use dcshare::{Error, KeyPolicy, NetworkSpec, SolveRequest};

fn case_request(name: &str) -> SolveRequest {
    let path = format!("{}/examples/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let (doc, net, _) =
        load_network(&std::fs::read_to_string(path).unwrap(), KeyPolicy::Strict).unwrap();
    let mut req = SolveRequest::at_min_voltage(net);
    req.vin_floor = doc.vin_floor;
    req
}

#[test]
fn boundary_optimum() {
    // min x²  s.t.  x >= 3
    let mut p = ConvexProgram::new(1);
    p.add_le(Tag::GENERIC, vec![(0, -1.0)], -3.0);
    p.objective.p = vec![(0, 0, 1.0)];
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert!((s.x[0] - 3.0).abs() < 1e-8, "{:?}", s.x);
    assert!((s.objective - 9.0).abs() < 1e-7);
    assert!(s.kkt.stationarity <= 1e-6);
    // the multiplier of x >= 3 is 2x = 6
    assert!((s.dual_ineq[0] - 6.0).abs() < 1e-5, "{:?}", s.dual_ineq);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    // I >= 5 with the single branch carrying a total of 1
    let mut p = ConvexProgram::new(1);
    p.add_le(Tag::GENERIC, vec![(0, -1.0)], -5.0);
    p.add_eq(Tag::GENERIC, vec![(0, 1.0)], 1.0);
    p.objective.p = vec![(0, 0, 1.0)];
    match solve(&p, &SolverSettings::default()) {
        Err(Error::Infeasible { max_violation }) => {
            assert!(max_violation > 3.9, "{max_violation}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        solve_phase1(&p, &SolverSettings::default()),
        Err(Error::Infeasible { .. })
    ));
}

#[test]
fn equalities_only_gives_least_squares() {
    let mut p = ConvexProgram::new(3);
    p.add_eq(Tag::GENERIC, vec![(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
    let x = solve_phase1(&p, &SolverSettings::default()).unwrap();
    for v in x {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn phase1_on_case_i_is_strictly_feasible() {
    let req = case_request("case_i");
    let prog = build_program(&req).unwrap();
    let settings = SolverSettings::default();
    let x = solve_phase1(&prog, &settings).unwrap();
    let res = constraint_residuals(&prog, &x).unwrap();
    assert!(res.max_equality <= 1e-10, "{res:?}");
    let worst = prog
        .inequalities
        .iter()
        .map(|(_, r)| r.residual(&x))
        .chain(prog.quadratics.iter().map(|(_, q)| q.eval(&x)))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= -settings.slack_margin, "{worst}");
    // gains strictly inside (1, g_max)
    let point = prog.unpack(&x);
    for b in &point.branches {
        assert!(b.v_out > b.v_in);
    }
}

#[test]
fn shipped_programs_certify_optimality() {
    for name in ["case_i", "case_iib", "case_iii"] {
        let req = case_request(name);
        let prog = build_program(&req).unwrap();
        let cold = solve(&prog, &req.settings).unwrap();
        assert!(cold.kkt.stationarity <= 1e-6, "{name}: {:?}", cold.kkt);
        assert!(cold.phase1_iterations <= 200 && cold.phase2_iterations <= 200);
        let res = constraint_residuals(&prog, &cold.x).unwrap();
        assert!(
            res.max_equality <= 1e-9 && res.max_inequality <= 0.0,
            "{name}: {res:?}"
        );

        let start = interior_start(&req, &prog).expect("interior start");
        let warm = solve_from(&prog, &req.settings, Some(&start)).unwrap();
        assert_eq!(warm.phase1_iterations, 0);
        assert!(warm.kkt.stationarity <= 1e-6, "{name}: {:?}", warm.kkt);
        let scale = cold.objective.abs();
        assert!(
            (warm.objective - cold.objective).abs() <= 1e-8 * scale,
            "{name}"
        );
    }
}

#[test]
fn deterministic() {
    let req = case_request("case_iib");
    let prog = build_program(&req).unwrap();
    let a = solve(&prog, &req.settings).unwrap();
    let b = solve(&prog, &req.settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

/// Every resistance (source slopes included) times ten: the same circuit
/// with all currents a tenth as large.
fn scaled(net: &NetworkSpec, k: f64) -> NetworkSpec {
    let mut net = net.clone();
    net.r_load *= k;
    for b in &mut net.branches {
        let pieces = b
            .curve
            .pieces()
            .iter()
            .map(|p| dcshare::Piece::new(p.beta * k, p.gamma))
            .collect();
        b.curve = dcshare::PwlCurve::new(pieces);
        b.rs *= k;
        b.r_cable *= k;
        b.r_inductor *= k;
        b.r_mosfet *= k;
        b.r_diode *= k;
        b.i_min = b.i_min.map(|i| i / k);
    }
    net
}

#[test]
fn scaling_robustness() {
    let req = case_request("case_i");
    let base = dcshare::optimize(&req, true).unwrap();
    let mut big = req.clone();
    big.network = scaled(&req.network, 10.0);
    let prog = build_program(&big).unwrap();
    let sol = solve(&prog, &big.settings).unwrap();
    assert!(sol.kkt.stationarity <= 1e-6, "{:?}", sol.kkt);
    let point = prog.unpack(&sol.x);
    for (p, q) in point.branches.iter().zip(&base.plan.point.branches) {
        assert!(
            (p.i_s * 10.0 - q.i_s).abs() <= 1e-6 * q.i_s,
            "{} vs {}",
            p.i_s,
            q.i_s
        );
        assert!((p.v_out - q.v_out).abs() <= 1e-6 * q.v_out);
    }
}

#[test]
fn quadratic_constraint_boundary() {
    // min -x - y  s.t.  x² + y² <= 2  ->  (1, 1)
    let mut p = ConvexProgram::new(2);
    p.add_quad(
        Tag::GENERIC,
        Quadratic {
            p: vec![(0, 0, 1.0), (1, 1, 1.0)],
            q: vec![],
            r: -2.0,
        },
    );
    p.objective.q = vec![(0, -1.0), (1, -1.0)];
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert!(
        (s.x[0] - 1.0).abs() < 1e-7 && (s.x[1] - 1.0).abs() < 1e-7,
        "{:?}",
        s.x
    );
    assert!(s.kkt.stationarity <= 1e-6);
}
