//! MATPOWER case-file parsing and serialization.
//!
//! Supported subset: the `baseMVA` scalar and the `bus`, `gen`, `branch`
//! matrices with standard column order. `gencost`, `version` and any other
//! fields are ignored. Each matrix row must sit on its own line terminated
//! by `;`, which is how MATPOWER distributes its case files.

use crate::error::{Error, Result};
use crate::model::{Branch, Bus, BusKind, Generator, NetworkCase};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Parse MATPOWER-format case text into a network model.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let mut base_mva: Option<f64> = None;
    let mut bus_rows: Option<Vec<Vec<f64>>> = None;
    let mut gen_rows: Option<Vec<Vec<f64>>> = None;
    let mut branch_rows: Option<Vec<Vec<f64>>> = None;

    // Name of the matrix currently being collected, if any.
    let mut open_matrix: Option<(String, Vec<Vec<f64>>)> = None;

    for (line_no, raw_line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = strip_comment(raw_line);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }

        if let Some((name, rows)) = open_matrix.as_mut() {
            if trimmed.starts_with(']') {
                let (name, rows) = open_matrix.take().unwrap();
                store_matrix(&name, rows, &mut bus_rows, &mut gen_rows, &mut branch_rows);
                continue;
            }
            let keep = matches!(name.as_str(), "bus" | "gen" | "branch");
            if keep {
                rows.push(parse_row(line, line_no)?);
            }
            continue;
        }

        if let Some(rest) = assignment_rhs(trimmed, "baseMVA") {
            let value = rest.trim_end_matches(';').trim();
            let col = raw_line.find(value).map(|c| c + 1).unwrap_or(1);
            base_mva = Some(value.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                col,
                msg: format!("invalid baseMVA value `{value}`"),
            })?);
            continue;
        }

        for table in ["bus", "gen", "branch", "gencost"] {
            if let Some(rest) = assignment_rhs(trimmed, table) {
                if rest.trim_start().starts_with('[') {
                    open_matrix = Some((table.to_string(), Vec::new()));
                }
                break;
            }
        }
        // Anything else (version string, comments, function header) is ignored.
    }

    if open_matrix.is_some() {
        return Err(Error::Parse {
            line: text.lines().count(),
            col: 1,
            msg: "unterminated matrix (missing `];`)".to_string(),
        });
    }

    let base = base_mva.ok_or(Error::MissingTable("baseMVA"))?;
    let bus_rows = bus_rows.ok_or(Error::MissingTable("bus"))?;
    let gen_rows = gen_rows.ok_or(Error::MissingTable("gen"))?;
    let branch_rows = branch_rows.ok_or(Error::MissingTable("branch"))?;

    build_case(base, bus_rows, gen_rows, branch_rows)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// For a line `mpc.<table> = <rest>`, returns `<rest>`.
fn assignment_rhs<'a>(line: &'a str, table: &str) -> Option<&'a str> {
    let prefix = format!("mpc.{table}");
    let rest = line.strip_prefix(&prefix)?;
    let rest = rest.trim_start();
    rest.strip_prefix('=')
}

fn store_matrix(
    name: &str,
    rows: Vec<Vec<f64>>,
    bus: &mut Option<Vec<Vec<f64>>>,
    gen: &mut Option<Vec<Vec<f64>>>,
    branch: &mut Option<Vec<Vec<f64>>>,
) {
    match name {
        "bus" => *bus = Some(rows),
        "gen" => *gen = Some(rows),
        "branch" => *branch = Some(rows),
        _ => {}
    }
}

fn parse_row(line: &str, line_no: usize) -> Result<Vec<f64>> {
    let body = line.trim().trim_end_matches(';');
    let mut values = Vec::new();
    for token in body.split_whitespace() {
        let value = token.parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            col: line.find(token).map(|c| c + 1).unwrap_or(1),
            msg: format!("invalid number `{token}`"),
        })?;
        values.push(value);
    }
    Ok(values)
}

fn require_cols(table: &'static str, row: &[f64], want: usize, row_no: usize) -> Result<()> {
    if row.len() < want {
        return Err(Error::Parse {
            line: 0,
            col: 1,
            msg: format!(
                "{table} row {} has {} columns, expected at least {want}",
                row_no + 1,
                row.len()
            ),
        });
    }
    Ok(())
}

fn build_case(
    base: f64,
    bus_rows: Vec<Vec<f64>>,
    gen_rows: Vec<Vec<f64>>,
    branch_rows: Vec<Vec<f64>>,
) -> Result<NetworkCase> {
    let mut buses = Vec::with_capacity(bus_rows.len());
    for (i, row) in bus_rows.iter().enumerate() {
        require_cols("bus", row, 13, i)?;
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(Error::Parse {
                    line: 0,
                    col: 1,
                    msg: format!("bus {} has unsupported type {other}", row[0]),
                })
            }
        };
        buses.push(Bus {
            id: row[0] as u32,
            kind,
            p_load: row[2],
            q_load: row[3],
            shunt_g: row[4] / base,
            shunt_b: row[5] / base,
            v_mag: row[7],
            v_ang: row[8] * DEG,
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (i, row) in gen_rows.iter().enumerate() {
        require_cols("gen", row, 10, i)?;
        let status = row[7] != 0.0;
        if !status {
            continue;
        }
        generators.push(Generator {
            bus: row[0] as u32,
            p_gen: row[1],
            q_gen: row[2],
            q_max: row[3],
            q_min: row[4],
            v_setpoint: row[5],
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, row) in branch_rows.iter().enumerate() {
        require_cols("branch", row, 11, i)?;
        let ratio = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(Branch {
            from_bus: row[0] as u32,
            to_bus: row[1] as u32,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap_ratio: ratio,
            phase_shift: row[9] * DEG,
            in_service: row[10] != 0.0,
        });
    }

    NetworkCase::new(base, buses, branches, generators)
}

/// Serialize a case back to MATPOWER matrix syntax with fixed 6-decimal
/// formatting. Columns this model does not carry (areas, ratings, ...) are
/// written as neutral constants, which the parser ignores.
pub fn serialize_case(case: &NetworkCase) -> String {
    let mut out = String::new();
    out.push_str("function mpc = case\n");
    out.push_str("mpc.version = '2';\n");
    out.push_str(&format!("mpc.baseMVA = {:.6};\n", case.base_mva));

    out.push_str("mpc.bus = [\n");
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        };
        out.push_str(&format!(
            "\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t1\t{:.6}\t{:.6}\t0\t1\t0\t0;\n",
            b.id,
            kind,
            b.p_load,
            b.q_load,
            b.shunt_g * case.base_mva,
            b.shunt_b * case.base_mva,
            b.v_mag,
            b.v_ang / DEG,
        ));
    }
    out.push_str("];\n");

    out.push_str("mpc.gen = [\n");
    for g in &case.generators {
        out.push_str(&format!(
            "\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t1\t0\t0;\n",
            g.bus, g.p_gen, g.q_gen, g.q_max, g.q_min, g.v_setpoint, case.base_mva,
        ));
    }
    out.push_str("];\n");

    out.push_str("mpc.branch = [\n");
    for b in &case.branches {
        out.push_str(&format!(
            "\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t0\t0\t0\t{:.6}\t{:.6}\t{};\n",
            b.from_bus,
            b.to_bus,
            b.r,
            b.x,
            b.b_charging,
            b.tap_ratio,
            b.phase_shift / DEG,
            if b.in_service { 1 } else { 0 },
        ));
    }
    out.push_str("];\n");

    out
}
