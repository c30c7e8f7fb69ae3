//! Report rendering: aligned tables for humans, CSV and JSON for machines.
//! All numeric values are fixed-point with four decimals in every format,
//! so the formats carry identical numbers.

use std::io::IsTerminal;

use serde_json::{json, Map, Number, Value};

use vsa_core::engine::StiReport;
use vsa_core::model::{BusKind, NetworkCase};
use vsa_core::pf::PfSolution;

use crate::{CaseArgs, Format};

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn num4(v: f64) -> Value {
    Number::from_f64(round4(v))
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn opt4(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// ANSI styling is applied only on an interactive stdout and can be turned
/// off with VSA_NO_COLOR.
fn styling_enabled(args: &CaseArgs) -> bool {
    args.output.is_none()
        && std::env::var_os("VSA_NO_COLOR").is_none()
        && std::io::stdout().is_terminal()
}

fn header(args: &CaseArgs) -> String {
    if args.timestamp {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("# generated at unix {now}\n")
    } else {
        String::new()
    }
}

fn kind_str(kind: BusKind) -> &'static str {
    match kind {
        BusKind::Slack => "slack",
        BusKind::Pv => "PV",
        BusKind::Pq => "PQ",
    }
}

pub fn render_pf(case: &NetworkCase, sol: &PfSolution, format: Format, args: &CaseArgs) -> String {
    const DEG: f64 = 180.0 / std::f64::consts::PI;
    match format {
        Format::Csv => {
            let mut out = String::from("bus,kind,v_mag,v_ang_deg\n");
            for (i, bus) in case.buses.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:.4},{:.4}\n",
                    bus.id,
                    kind_str(sol.point.bus_kinds[i]),
                    sol.point.v_mag[i],
                    sol.point.v_ang[i] * DEG,
                ));
            }
            out
        }
        Format::Json => {
            let buses: Vec<Value> = case
                .buses
                .iter()
                .enumerate()
                .map(|(i, bus)| {
                    json!({
                        "bus": bus.id,
                        "kind": kind_str(sol.point.bus_kinds[i]),
                        "v_mag": num4(sol.point.v_mag[i]),
                        "v_ang_deg": num4(sol.point.v_ang[i] * DEG),
                    })
                })
                .collect();
            let gens: Vec<Value> = case
                .generators
                .iter()
                .enumerate()
                .map(|(gi, g)| {
                    json!({
                        "bus": g.bus,
                        "p_gen_mw": num4(g.p_gen),
                        "q_gen_mvar": num4(sol.point.q_gen[gi]),
                    })
                })
                .collect();
            let doc = json!({
                "iterations": sol.iterations,
                "buses": buses,
                "generators": gens,
            });
            format!(
                "{}\n",
                serde_json::to_string_pretty(&doc).expect("report serializes")
            )
        }
        Format::Table => {
            let mut out = header(args);
            out.push_str(&format!("converged in {} iterations\n\n", sol.iterations));
            out.push_str("bus   kind   v_mag     v_ang_deg\n");
            for (i, bus) in case.buses.iter().enumerate() {
                out.push_str(&format!(
                    "{:<5} {:<6} {:<9.4} {:>9.4}\n",
                    bus.id,
                    kind_str(sol.point.bus_kinds[i]),
                    sol.point.v_mag[i],
                    sol.point.v_ang[i] * DEG,
                ));
            }
            out.push_str("\ngenerators (bus, P MW, Q MVAr)\n");
            for (gi, g) in case.generators.iter().enumerate() {
                out.push_str(&format!(
                    "{:<5} {:>9.4} {:>9.4}\n",
                    g.bus, g.p_gen, sol.point.q_gen[gi]
                ));
            }
            out
        }
    }
}

pub fn render_sti(rows: &[(u32, f64, f64)], format: Format, args: &CaseArgs) -> String {
    match format {
        Format::Csv => {
            let mut out = String::from("bus,v_mag,sti\n");
            for (bus, v, value) in rows {
                out.push_str(&format!("{bus},{v:.4},{value:.4}\n"));
            }
            out
        }
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(
                    |(bus, v, value)| json!({ "bus": bus, "v_mag": num4(*v), "sti": num4(*value) }),
                )
                .collect();
            format!(
                "{}\n",
                serde_json::to_string_pretty(&json!({ "records": rows }))
                    .expect("report serializes")
            )
        }
        Format::Table => {
            let mut out = header(args);
            out.push_str("bus   v_mag     sti\n");
            for (bus, v, value) in rows {
                out.push_str(&format!("{bus:<5} {v:<9.4} {value:.4}\n"));
            }
            out
        }
    }
}

pub fn render_report(report: &StiReport, format: Format, args: &CaseArgs) -> String {
    match format {
        Format::Csv => render_report_csv(report),
        Format::Json => render_report_json(report),
        Format::Table => render_report_table(report, args),
    }
}

fn render_report_csv(report: &StiReport) -> String {
    let mut out = String::from("outage,bus,sti_predicted,sti_benchmark,alarm,status\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.outage,
            r.bus.map(|b| b.to_string()).unwrap_or_default(),
            opt4(r.sti_predicted),
            opt4(r.sti_benchmark),
            r.alarm,
            r.status.as_str(),
        ));
    }
    out
}

fn render_report_json(report: &StiReport) -> String {
    let records: Vec<Value> = report
        .records
        .iter()
        .map(|r| {
            json!({
                "outage": r.outage,
                "bus": r.bus,
                "sti_predicted": r.sti_predicted.map_or(Value::Null, num4),
                "sti_benchmark": r.sti_benchmark.map_or(Value::Null, num4),
                "alarm": r.alarm,
                "status": r.status.as_str(),
            })
        })
        .collect();
    let mut sigma = Map::new();
    for (outage, value) in &report.sigma_per_outage {
        sigma.insert(outage.clone(), num4(*value));
    }
    let doc = json!({
        "config": {
            "load_scale": num4(report.config.load_scale),
            "alarm_threshold": num4(report.config.alarm_threshold),
            "excluded_branches": report.config.excluded_branches,
            "monitored_buses": report.config.monitored_buses,
        },
        "records": records,
        "sigma": Value::Object(sigma),
    });
    format!(
        "{}\n",
        serde_json::to_string_pretty(&doc).expect("report serializes")
    )
}

fn render_report_table(report: &StiReport, args: &CaseArgs) -> String {
    let style = styling_enabled(args);
    let mut out = header(args);
    out.push_str(&format!(
        "load scale {:.4}, alarm threshold {:.4}\n\n",
        report.config.load_scale, report.config.alarm_threshold
    ));
    out.push_str("outage   bus   predicted  benchmark  alarm  status\n");
    for r in &report.records {
        let line = format!(
            "{:<8} {:<5} {:<10} {:<10} {:<6} {}\n",
            r.outage,
            r.bus.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            if r.sti_predicted.is_some() {
                opt4(r.sti_predicted)
            } else {
                "-".into()
            },
            if r.sti_benchmark.is_some() {
                opt4(r.sti_benchmark)
            } else {
                "-".into()
            },
            r.alarm,
            r.status.as_str(),
        );
        if style && r.alarm {
            out.push_str(&format!("\x1b[1;31m{}\x1b[0m", line.trim_end()));
            out.push('\n');
        } else {
            out.push_str(&line);
        }
    }
    if !report.sigma_per_outage.is_empty() {
        out.push_str("\nsigma (%) per outage\n");
        for (outage, value) in &report.sigma_per_outage {
            out.push_str(&format!("{outage:<8} {value:.4}\n"));
        }
        if report.sigma_excluded > 0 {
            out.push_str(&format!(
                "({} bus results excluded from sigma)\n",
                report.sigma_excluded
            ));
        }
    }
    let alarms = report.records.iter().filter(|r| r.alarm).count();
    out.push_str(&format!(
        "\n{} records, {} alarms\n",
        report.records.len(),
        alarms
    ));
    out
}
