use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcshare::DispatchPlan;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcshare"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/examples/{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn example_doc(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(example(name)).unwrap()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn write_json(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    write(dir, name, &serde_json::to_string_pretty(v).unwrap())
}

fn solve_json(doc: &Path, extra: &[&str]) -> DispatchPlan {
    let mut args = vec!["solve", p(doc), "--format", "json"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

fn ideal_single() -> Value {
    json!({
        "fs_hz": 100000.0,
        "load": { "r_ohm": 4.0, "v_min": 15.0, "v_max": 25.0 },
        "branches": [{
            "name": "only",
            "source": { "constant_v": 10.0 },
            "rs": 0.0, "r_cable": 0.1, "rl": 0.0, "rm": 0.0, "rd": 0.0, "vd": 0.0,
            "alpha": 0.0, "lambda": 1.0, "mu": 0.0
        }]
    })
}

#[test]
fn solve_case_i_matches_reference_table() {
    let plan = solve_json(&example("case_i"), &[]);
    let reference = [
        (6.9648, 33.6996, 50.8974, 4.4870),
        (5.5893, 30.7549, 50.8216, 3.2864),
        (5.5357, 21.0780, 50.5120, 2.2264),
    ];
    for (b, r) in plan.point.branches.iter().zip(reference) {
        for (got, want) in [(b.i_s, r.0), (b.v_in, r.1), (b.v_out, r.2), (b.i_out, r.3)] {
            assert!((got - want).abs() <= 0.01 * want, "{got} vs {want}");
        }
    }
}

#[test]
fn table_output_has_six_significant_digits() {
    let o = run(&["solve", p(&example("case_i"))]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("branch"));
    assert!(text.contains("6.96481"), "{text}");
    assert!(text.contains("V_load  50.0000"));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
}

#[test]
fn solve_is_byte_identical_and_json_round_trips() {
    let doc = example("case_iii");
    let a = run(&["solve", p(&doc), "--format", "json"]);
    let b = run(&["solve", p(&doc), "--format", "json"]);
    assert_eq!(a.stdout, b.stdout);
    let plan: DispatchPlan = serde_json::from_slice(&a.stdout).unwrap();
    let again = serde_json::to_string_pretty(&plan).unwrap() + "\n";
    assert_eq!(again.as_bytes(), a.stdout.as_slice());
    let back: DispatchPlan = serde_json::from_str(&again).unwrap();
    assert_eq!(back, plan);

    let t1 = run(&["solve", p(&doc), "--format", "csv"]);
    let t2 = run(&["solve", p(&doc), "--format", "csv"]);
    assert_eq!(t1.stdout, t2.stdout);
    assert!(stdout(&t1).starts_with("branch,is,v_in,v_out,i,gain,duty,loss"));
}

#[test]
fn out_flag_writes_the_file_only() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.json");
    let o = run(&[
        "solve",
        p(&example("case_i")),
        "--format",
        "json",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let plan: DispatchPlan = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(plan.names.len(), 3);
}

#[test]
fn validation_failure_names_the_rule() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    doc["load"]["v_min"] = json!(30.0);
    let path = write_json(&dir, "low.json", &doc);
    let o = run(&["solve", p(&path)]);
    assert_eq!(code(&o), 4);
    assert!(
        stderr(&o).contains("OpenCircuitAboveVloadMin"),
        "{}",
        stderr(&o)
    );
    assert!(o.stdout.is_empty());
}

#[test]
fn gate_failure_names_branch_and_margins() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    let b = &mut doc["branches"][1];
    b["rm"] = json!(0.5);
    b["rd"] = json!(0.0);
    b["r_cable"] = json!(0.1);
    let path = write_json(&dir, "gate.json", &doc);
    let o = run(&["solve", p(&path)]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("source2") && err.contains("margins"), "{err}");
}

#[test]
fn infeasible_minimum_currents() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    for b in doc["branches"].as_array_mut().unwrap() {
        b.as_object_mut().unwrap().remove("is_min");
        b["i_min"] = json!(4.0);
    }
    let path = write_json(&dir, "tight.json", &doc);
    let o = run(&["solve", p(&path)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_keys_strict_and_lenient() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    doc["branches"][0]["colour"] = json!("red");
    let path = write_json(&dir, "extra.json", &doc);
    let o = run(&["solve", p(&path)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("colour"));
    let o = run(&["solve", p(&path), "--lenient"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn bad_flags_and_files() {
    let ex = example("case_i");
    assert_eq!(code(&run(&["solve", p(&ex), "--vload", "abc"])), 4);
    assert_eq!(code(&run(&["solve", p(&ex), "--vload", "60"])), 4);
    assert_eq!(code(&run(&["solve", p(&ex), "--tol", "-1"])), 4);
    assert_eq!(code(&run(&["solve", "/nonexistent/doc.json"])), 4);
    let dir = TempDir::new().unwrap();
    let junk = write(&dir, "junk.json", "{ not json");
    assert_eq!(code(&run(&["solve", p(&junk)])), 4);
}

#[test]
fn vload_and_mu_flags() {
    let ex = example("case_i");
    let at_min = solve_json(&ex, &["--vload", "min"]);
    let at_50 = solve_json(&ex, &["--vload", "50"]);
    assert_eq!(at_min, at_50);
    let higher = solve_json(&ex, &["--vload", "52"]);
    assert!((higher.point.v_load - 52.0).abs() < 1e-12);
    assert!(higher.total_cost > at_min.total_cost);
    let no_mu = solve_json(&ex, &["--mu", "off"]);
    assert!(no_mu.total_cost <= at_min.total_cost + 1e-9);
    let loose = solve_json(&ex, &["--tol", "1e-6", "--strict-audit"]);
    assert!((loose.total_cost - at_min.total_cost).abs() <= 1e-4 * at_min.total_cost);
}

#[test]
fn verify_round_trip_and_mismatch() {
    let dir = TempDir::new().unwrap();
    let doc = example("case_iib");
    let plan = solve_json(&doc, &[]);
    let good = write(&dir, "good.json", &serde_json::to_string(&plan).unwrap());
    let o = run(&["verify", p(&doc), p(&good)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dev: f64 = stdout(&o)
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 1e-3);

    let mut bent = plan.clone();
    bent.gains[0] *= 1.05;
    let bad = write(&dir, "bad.json", &serde_json::to_string(&bent).unwrap());
    let o = run(&["verify", p(&doc), p(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("mismatch"));

    // plan for another network
    let other = write(
        &dir,
        "other.json",
        &serde_json::to_string(&solve_json(&example("case_i"), &[])).unwrap(),
    );
    assert_eq!(code(&run(&["verify", p(&example("case_i")), p(&other)])), 0);
    let mut short = plan.clone();
    short.gains.pop();
    let short = write(&dir, "short.json", &serde_json::to_string(&short).unwrap());
    assert_eq!(code(&run(&["verify", p(&doc), p(&short)])), 4);
}

#[test]
fn verify_oracle_failure() {
    let dir = TempDir::new().unwrap();
    let doc = example("case_iib");
    let mut plan = solve_json(&doc, &[]);
    // a huge gain on one branch pushes the others into back-feed
    plan.gains[0] = 50.0;
    let path = write(&dir, "wild.json", &serde_json::to_string(&plan).unwrap());
    let o = run(&["verify", p(&doc), p(&path)]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
}

#[test]
fn single_ideal_branch_verifies_exactly() {
    let dir = TempDir::new().unwrap();
    let doc = write_json(&dir, "ideal.json", &ideal_single());
    let plan_path = dir.path().join("plan.json");
    let o = run(&["solve", p(&doc), "--format", "json", "--out", p(&plan_path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan: DispatchPlan =
        serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    // only the cable dissipates: 0.1 Ω at 15 V / 4 Ω
    assert!(
        (plan.total_cost - 0.1 * 3.75 * 3.75).abs() <= 1e-9,
        "{}",
        plan.total_cost
    );
    assert!(plan.tightness[0].power_slack.abs() <= 1e-9);
    let o = run(&["verify", p(&doc), p(&plan_path)]);
    assert_eq!(code(&o), 0);
    let dev: f64 = stdout(&o)
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 1e-10, "{dev}");
}

fn sweep_rows(o: &Output) -> Vec<Vec<String>> {
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn sweep_is_monotone_and_consistent_with_solve() {
    let doc = example("case_i");
    let o = run(&["sweep", p(&doc), "--vload-grid", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("v_load,cost,i_1,i_2,i_3\n"));
    let rows = sweep_rows(&o);
    assert_eq!(rows.len(), 5);
    let v: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(v, vec![50.0, 51.0, 52.0, 53.0, 54.0]);
    let cost: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(cost.windows(2).all(|w| w[1] >= w[0]));

    let plan = solve_json(&doc, &[]);
    assert_eq!(cost[0], plan.total_cost);
    for (k, b) in plan.point.branches.iter().enumerate() {
        assert_eq!(rows[0][2 + k].parse::<f64>().unwrap(), b.i_out);
    }
    assert_eq!(
        run(&["sweep", p(&doc), "--vload-grid", "5"]).stdout,
        o.stdout
    );
}

#[test]
fn degenerate_sweep_repeats_the_row() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    doc["load"]["v_max"] = json!(50.0);
    let path = write_json(&dir, "flat.json", &doc);
    let o = run(&["sweep", p(&path), "--vload-grid", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&o);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    assert_eq!(code(&run(&["sweep", p(&path), "--vload-grid", "1"])), 4);
}

#[test]
fn failed_sweep_rows_are_marked() {
    let dir = TempDir::new().unwrap();
    let mut doc = example_doc("case_i");
    // minimum currents that only fit at the low end of the range
    for b in doc["branches"].as_array_mut().unwrap() {
        b.as_object_mut().unwrap().remove("is_min");
        b["i_min"] = json!(3.3);
    }
    doc["load"]["r_ohm"] = json!(5.0);
    let path = write_json(&dir, "edge.json", &doc);
    let o = run(&["sweep", p(&path), "--vload-grid", "3"]);
    let rows = sweep_rows(&o);
    assert_eq!(rows.len(), 3);
    let failed = rows.iter().filter(|r| r[1] == "FAILED").count();
    assert!(failed >= 1, "{}", stdout(&o));
    assert!(rows.iter().all(|r| r.len() == 5));
    assert_ne!(code(&o), 0);
}

#[test]
fn fit_diode_recovers_parameters() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("current,power\n");
    for k in 1..=12 {
        let i = 0.25 * k as f64;
        text.push_str(&format!("{i},{}\n", 0.5418 * i + 0.0184 * i * i));
    }
    let path = write(&dir, "diode.csv", &text);
    let o = run(&["fit", "--diode", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["vd"].as_f64().unwrap() - 0.5418).abs() <= 1e-9);
    assert!((v["rd"].as_f64().unwrap() - 0.0184).abs() <= 1e-9);

    let two = write(&dir, "two.csv", "current,power\n1,0.7\n2,1.48\n");
    let v: Value = serde_json::from_slice(&run(&["fit", "--diode", p(&two)]).stdout).unwrap();
    assert!((v["vd"].as_f64().unwrap() - 0.66).abs() <= 1e-12);
    assert!((v["rd"].as_f64().unwrap() - 0.04).abs() <= 1e-12);
}

#[test]
fn fit_errors() {
    let dir = TempDir::new().unwrap();
    let flat = write(&dir, "flat.csv", "current,power\n2,1\n2,1.1\n2,0.9\n");
    assert_eq!(code(&run(&["fit", "--diode", p(&flat)])), 7);
    let nohead = write(&dir, "nohead.csv", "1,0.7\n2,1.48\n");
    assert_eq!(code(&run(&["fit", "--diode", p(&nohead)])), 4);
    let junk = write(&dir, "junk.csv", "current,power\n1,abc\n");
    assert_eq!(code(&run(&["fit", "--diode", p(&junk)])), 4);
    // usage errors are input errors too
    assert_eq!(code(&run(&["fit"])), 4);
    assert_eq!(
        code(&run(&["fit", "--diode", p(&flat), "--alpha", p(&flat)])),
        4
    );
    assert_eq!(code(&run(&["solve"])), 4);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn fit_alpha() {
    let dir = TempDir::new().unwrap();
    let m = json!({
        "p_loss": 2.0, "v_load": 50.0, "v_d": 0.5418, "r_cable": 0.2,
        "r_d": 0.0184, "r_m": 0.025, "r_load": 5.0
    });
    let path = write_json(&dir, "alpha.json", &m);
    let o = run(&["fit", "--alpha", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let i = 50.0 / 15.0;
    let want = (2.0 - 0.5 * i * i * 0.025) / ((50.0 + 0.5418 + i * (0.2 + 0.0184)) * i);
    assert!((v["alpha"].as_f64().unwrap() - want).abs() <= 1e-12);

    let mut low = m.clone();
    low["p_loss"] = json!(0.01);
    let path = write_json(&dir, "neg.json", &low);
    assert_eq!(code(&run(&["fit", "--alpha", p(&path)])), 7);
    let mut extra = m;
    extra["colour"] = json!(1);
    let path = write_json(&dir, "extra.json", &extra);
    assert_eq!(code(&run(&["fit", "--alpha", p(&path)])), 4);
}

#[test]
fn trace_logs_newton_steps() {
    let o = bin()
        .args([
            "--trace",
            "solve",
            p(&example("case_i")),
            "--format",
            "json",
        ])
        .env_remove("RUST_LOG")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("newton"), "{}", stderr(&o));
    let plan: DispatchPlan = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan.names.len(), 3);
}
