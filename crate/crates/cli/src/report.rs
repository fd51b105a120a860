//! Human and CSV renderings of a plan. JSON goes straight through serde.

use std::fmt::Write;

use dcshare::DispatchPlan;

/// Six significant digits, fixed notation for everyday magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..=9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

const COLUMNS: [&str; 8] = ["branch", "Is", "V'", "V''", "I", "gain", "duty", "loss"];

pub fn table(plan: &DispatchPlan) -> String {
    let mut rows: Vec<Vec<String>> = vec![COLUMNS.iter().map(|s| s.to_string()).collect()];
    for (k, p) in plan.point.branches.iter().enumerate() {
        let mut row = vec![plan.names[k].clone()];
        row.extend(
            [
                p.i_s,
                p.v_in,
                p.v_out,
                p.i_out,
                plan.gains[k],
                plan.duties[k],
                plan.losses[k].total_q,
            ]
            .map(sig6),
        );
        rows.push(row);
    }
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                if c == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    let total_i = plan.total_output_current();
    writeln!(out).unwrap();
    writeln!(out, "V_load  {}", sig6(plan.point.v_load)).unwrap();
    writeln!(out, "I_load  {}", sig6(total_i)).unwrap();
    writeln!(out, "cost    {}", sig6(plan.total_cost)).unwrap();
    out
}

pub fn csv(plan: &DispatchPlan) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "branch",
        "is",
        "v_in",
        "v_out",
        "i",
        "gain",
        "duty",
        "loss",
        "circulating",
    ])?;
    for (k, p) in plan.point.branches.iter().enumerate() {
        let nums = [
            p.i_s,
            p.v_in,
            p.v_out,
            p.i_out,
            plan.gains[k],
            plan.duties[k],
            plan.losses[k].total_q,
            plan.circulating[k],
        ]
        .map(|v| v.to_string());
        w.write_record(std::iter::once(plan.names[k].clone()).chain(nums))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
