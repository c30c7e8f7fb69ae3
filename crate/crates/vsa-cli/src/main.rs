//! Command-line front end: parse a case, run power flow, compute the
//! base-case stability index, screen N-1 contingencies, and benchmark the
//! predictions, with table, CSV, and JSON output.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vsa_core::engine::{benchmark, scale_operating_level, screen, ScreeningConfig};
use vsa_core::model::{BusKind, NetworkCase};
use vsa_core::parse::parse_case;
use vsa_core::pf::{solve_power_flow, PfOptions};
use vsa_core::sti::{solve_sensitivities, sti, StressDirection};

#[derive(Parser)]
#[command(
    name = "vsa",
    version,
    about = "Voltage-stability screening for N-1 branch outages",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the AC power flow and print the solution.
    Pf(PfArgs),
    /// Compute the base-case stability index at the monitored buses.
    Sti(StiArgs),
    /// Screen all N-1 branch outages and predict the index per load bus.
    Screen(ScreenArgs),
    /// Screen and benchmark against exact post-contingency solutions.
    Benchmark(ScreenArgs),
}

#[derive(Args)]
struct CaseArgs {
    /// Path to a MATPOWER-format case file.
    #[arg(long)]
    case: PathBuf,
    /// Multiplier applied to every load (and to generator dispatch).
    #[arg(long, default_value_t = 1.0)]
    load_scale: f64,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Prepend a timestamp header to table output.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Args)]
struct PfArgs {
    #[command(flatten)]
    common: CaseArgs,
    /// Ignore generator reactive limits.
    #[arg(long)]
    no_q_limits: bool,
}

#[derive(Args)]
struct StiArgs {
    #[command(flatten)]
    common: CaseArgs,
    /// Monitored load buses, comma-separated external ids.
    #[arg(long, value_delimiter = ',')]
    buses: Vec<u32>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    common: CaseArgs,
    /// Alarm threshold on the predicted index.
    #[arg(long, default_value_t = 0.45)]
    threshold: f64,
    /// Branch labels to exclude, comma-separated ("1-2,7-8").
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Monitored load buses, comma-separated external ids.
    #[arg(long, value_delimiter = ',')]
    buses: Vec<u32>,
    /// Worker threads for the parallel screen (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

enum CliError {
    Input(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

fn main() -> ExitCode {
    // Usage problems are input errors (exit 1); 2 is reserved for alarms.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Pf(args) => run_pf(args),
        Command::Sti(args) => run_sti(args),
        Command::Screen(args) => run_screen(args, false),
        Command::Benchmark(args) => run_screen(args, true),
    };
    match result {
        Ok(alarmed) => {
            if alarmed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_case(args: &CaseArgs) -> Result<NetworkCase, CliError> {
    let text = std::fs::read_to_string(&args.case)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.case.display())))?;
    Ok(parse_case(&text)?)
}

fn emit(args: &CaseArgs, body: String) -> Result<(), CliError> {
    match &args.output {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run_pf(args: PfArgs) -> Result<bool, CliError> {
    let case = load_case(&args.common)?;
    let scaled = scale_operating_level(&case, args.common.load_scale)?;
    let opts = PfOptions {
        enforce_q_limits: !args.no_q_limits,
        ..Default::default()
    };
    let solution = solve_power_flow(&scaled, &opts, None)?;
    let body = output::render_pf(&scaled, &solution, args.common.format, &args.common);
    emit(&args.common, body)?;
    Ok(false)
}

fn run_sti(args: StiArgs) -> Result<bool, CliError> {
    let case = load_case(&args.common)?;
    let scaled = scale_operating_level(&case, args.common.load_scale)?;
    let opts = PfOptions {
        enforce_q_limits: true,
        ..Default::default()
    };
    let solution = solve_power_flow(&scaled, &opts, None)?;

    let transitions: Vec<u32> = scaled
        .buses
        .iter()
        .enumerate()
        .filter(|(i, b)| b.kind == BusKind::Pv && solution.point.bus_kinds[*i] == BusKind::Pq)
        .map(|(_, b)| b.id)
        .collect();
    let direction = StressDirection::uniform(&scaled);
    let sens = solve_sensitivities(&scaled, &solution.point, &direction, &transitions)?;

    let buses = if args.buses.is_empty() {
        scaled.pure_load_buses()
    } else {
        let mut ids = args.buses.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let mut rows = Vec::with_capacity(buses.len());
    for bus in buses {
        let idx = scaled.bus_index(bus)?;
        let v = solution.point.v_mag[idx];
        rows.push((bus, v, sti(&sens, idx, v)));
    }
    let body = output::render_sti(&rows, args.common.format, &args.common);
    emit(&args.common, body)?;
    Ok(false)
}

fn run_screen(args: ScreenArgs, with_benchmark: bool) -> Result<bool, CliError> {
    let case = load_case(&args.common)?;
    let config = ScreeningConfig {
        load_scale: args.common.load_scale,
        alarm_threshold: args.threshold,
        excluded_branches: args.exclude.clone(),
        monitored_buses: if args.buses.is_empty() {
            None
        } else {
            Some(args.buses.clone())
        },
    };

    let workers = args.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Input(format!("cannot build worker pool: {e}")))?;

    let report = pool.install(|| {
        if with_benchmark {
            benchmark(&case, &config)
        } else {
            screen(&case, &config)
        }
    })?;

    let body = output::render_report(&report, args.common.format, &args.common);
    emit(&args.common, body)?;
    Ok(report.any_alarm())
}
