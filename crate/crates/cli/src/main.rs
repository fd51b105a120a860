use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcshare::document::load_network;
use dcshare::lossmodel::{estimate_alpha, fit_diode, AlphaMeasurement};
use dcshare::netmodel::curve_warnings;
use dcshare::oracle::compare;
use dcshare::{
    optimize, steady_state, sweep, voltage_grid, DispatchPlan, Error, Execution, KeyPolicy,
    SolveRequest,
};
use serde_json::json;

mod exit;
mod report;

use exit::Failure;

#[derive(Parser)]
#[command(
    name = "dcshare",
    version,
    about = "Loss-optimal load sharing for DC microgrids"
)]
struct Cli {
    /// Log every Newton step (RUST_LOG overrides).
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal gains and duty ratios for a network document.
    Solve(SolveArgs),
    /// Replays a plan through the steady-state circuit model.
    Verify {
        #[command(flatten)]
        doc: DocArgs,
        plan: PathBuf,
    },
    /// Optimal cost across the load-voltage range, as CSV.
    Sweep {
        #[command(flatten)]
        doc: DocArgs,
        #[arg(long = "vload-grid", value_name = "K")]
        k: usize,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        mu: Switch,
    },
    /// Device parameters from bench data.
    Fit {
        #[arg(
            long,
            value_name = "CSV",
            conflicts_with = "alpha",
            required_unless_present = "alpha"
        )]
        diode: Option<PathBuf>,
        #[arg(long, value_name = "JSON")]
        alpha: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DocArgs {
    doc: PathBuf,
    /// Warn about unknown keys instead of rejecting the document.
    #[arg(long)]
    lenient: bool,
    /// Force the V' >= 20·VD floor on every branch.
    #[arg(long)]
    vin_floor: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    doc: DocArgs,
    /// Load voltage in volts, or `min`.
    #[arg(long, default_value = "min")]
    vload: String,
    /// Charge circulating currents in the cost.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    mu: Switch,
    /// Duality-gap tolerance of the barrier solver.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Treat a slack power balance as an error instead of a warning.
    #[arg(long)]
    strict_audit: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which would read as "infeasible"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INPUT } else { 0 });
        }
    };
    let level = if cli.trace { "trace" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let run = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify { doc, plan } => cmd_verify(&doc, &plan),
        Command::Sweep { doc, k, mu } => cmd_sweep(&doc, k, mu),
        Command::Fit { diode, alpha } => cmd_fit(diode.as_deref(), alpha.as_deref()),
    };
    match run {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn request(doc: &DocArgs) -> Result<SolveRequest, Failure> {
    let policy = if doc.lenient {
        KeyPolicy::Lenient
    } else {
        KeyPolicy::Strict
    };
    let (parsed, net, unknown) = load_network(&read(&doc.doc)?, policy)?;
    for key in unknown {
        log::warn!("ignoring unknown key {key}");
    }
    for w in curve_warnings(&net) {
        log::warn!("branch `{}`: {}", w.branch, w.detail);
    }
    let mut req = SolveRequest::at_min_voltage(net);
    req.vin_floor = parsed.vin_floor || doc.vin_floor;
    Ok(req)
}

fn parse_vload(s: &str, req: &SolveRequest) -> Result<f64, Failure> {
    if s == "min" {
        return Ok(req.network.v_load_min);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Failure::input(format!("--vload expects volts or `min`, got `{s}`")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<u8, Failure> {
    let mut req = request(&args.doc)?;
    req.v_load = parse_vload(&args.vload, &req)?;
    req.include_circulating = args.mu == Switch::On;
    if let Some(tol) = args.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure::input(format!("--tol must be positive, got {tol}")));
        }
        req.settings.tol_gap = tol;
    }
    let outcome = optimize(&req, args.strict_audit)?;
    log::info!(
        "relaxed objective {:.9e} after {} Newton steps, stationarity {:.2e}",
        outcome.relaxed_objective,
        outcome.iterations,
        outcome.kkt.stationarity
    );
    let plan = &outcome.plan;
    let text = match args.format {
        Format::Table => report::table(plan),
        Format::Json => serde_json::to_string_pretty(plan).expect("plan serializes") + "\n",
        Format::Csv => report::csv(plan).map_err(|e| Failure::input(e.to_string()))?,
    };
    emit(args.out.as_deref(), &text)?;
    Ok(0)
}

const VERIFY_TOL: f64 = 1e-3;

fn cmd_verify(doc: &DocArgs, plan_path: &Path) -> Result<u8, Failure> {
    let req = request(doc)?;
    let plan: DispatchPlan = serde_json::from_str(&read(plan_path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", plan_path.display())))?;
    let ss = steady_state(&req.network, &plan.gains).map_err(|e| match e {
        Error::DimensionMismatch { .. } | Error::InvalidInput(_) => Failure::from(e),
        other => Failure::new(exit::ORACLE, other.to_string()),
    })?;
    if !ss.converged {
        return Err(Failure::new(
            exit::ORACLE,
            format!(
                "steady state did not converge (residual {:.3e})",
                ss.residual
            ),
        ));
    }
    let dev = compare(&plan, &ss);
    let at = match dev.branch {
        Some(k) => format!(
            "{} of {}",
            dev.quantity,
            plan.names.get(k).map_or("?", String::as_str)
        ),
        None => dev.quantity.clone(),
    };
    let pass = dev.value <= VERIFY_TOL;
    let mut out = String::new();
    out.push_str(&format!("max_deviation {:e}\n", dev.value));
    out.push_str(&format!("at {at}\n"));
    out.push_str(&format!(
        "v_load {} (plan {})\n",
        report::sig6(ss.point.v_load),
        report::sig6(plan.point.v_load)
    ));
    out.push_str(&format!("oracle_iterations {}\n", ss.iterations));
    out.push_str(if pass { "match\n" } else { "mismatch\n" });
    emit(None, &out)?;
    Ok(if pass { 0 } else { exit::MISMATCH })
}

fn cmd_sweep(doc: &DocArgs, k: usize, mu: Switch) -> Result<u8, Failure> {
    if k < 2 {
        return Err(Failure::input(format!(
            "--vload-grid needs at least 2 points, got {k}"
        )));
    }
    let mut req = request(doc)?;
    req.include_circulating = mu == Switch::On;
    let n = req.network.len();
    let grid = voltage_grid(req.network.v_load_min, req.network.v_load_max, k);
    let rows = sweep(&req, &grid, Execution::default());

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["v_load".to_string(), "cost".to_string()];
    header.extend((1..=n).map(|i| format!("i_{i}")));
    let csv_err = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(&header).map_err(csv_err)?;

    let mut code = 0;
    let mut last: Option<f64> = None;
    for (v, row) in grid.iter().zip(&rows) {
        let mut rec = vec![v.to_string()];
        match row {
            Ok(o) => {
                rec.push(o.plan.total_cost.to_string());
                rec.extend(o.plan.point.branches.iter().map(|p| p.i_out.to_string()));
                if let Some(prev) = last {
                    // tolerance covers the solver's gap at equal voltages
                    if o.plan.total_cost < prev - 1e-7 * prev.abs().max(1.0) {
                        log::error!(
                            "cost falls from {prev} to {} at V_load = {v}",
                            o.plan.total_cost
                        );
                        code = exit::MISMATCH;
                    }
                }
                last = Some(o.plan.total_cost);
            }
            Err(e) => {
                log::error!("V_load = {v}: {e}");
                if code == 0 {
                    code = exit::code_for(e);
                }
                rec.push("FAILED".into());
                rec.extend(std::iter::repeat_n(String::new(), n));
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(e.to_string()))?;
    std::io::stdout().write_all(&bytes)?;
    Ok(code)
}

fn cmd_fit(diode: Option<&Path>, alpha: Option<&Path>) -> Result<u8, Failure> {
    let value = match (diode, alpha) {
        (Some(path), _) => {
            let samples = read_samples(path)?;
            let fit = fit_diode(&samples)?;
            json!({ "vd": fit.vd, "rd": fit.rd })
        }
        (None, Some(path)) => {
            let m: AlphaMeasurement = serde_json::from_str(&read(path)?)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            json!({ "alpha": estimate_alpha(&m)? })
        }
        (None, None) => return Err(Failure::input("pass --diode or --alpha")),
    };
    emit(
        None,
        &(serde_json::to_string_pretty(&value).expect("json") + "\n"),
    )?;
    Ok(0)
}

/// `(current, power)` rows under a `current,power` header.
fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let bad = |msg: String| Failure::input(format!("{}: {msg}", path.display()));
    let text = read(path)?;
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["current", "power"] {
        return Err(bad(format!(
            "expected header `current,power`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("row {}: `{}` is not a number", line + 2, &rec[i])))
        };
        out.push((num(0)?, num(1)?));
    }
    Ok(out)
}
