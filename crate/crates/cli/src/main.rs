use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use tonelli_cli::config::{self, Task};
use tonelli_cli::report::{compare, Tolerances};
use tonelli_cli::{read_report, run, write_csv, write_json, CliError};

/// Numerical laboratory for Tonelli Hamiltonians on T*T^n.
///
/// Every task reads an optional JSON config; flags and `--set key=value`
/// override its fields. Exit codes: 0 all assertions pass, 1 configuration
/// error, 2 numerical failure, 3 violated hypothesis. TONELLI_THREADS caps
/// the worker threads.
#[derive(Parser)]
#[command(name = "tonelli-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `params.options.step=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the task's flat table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Task flags as `params` keys with their raw values.
type Flags = Vec<(&'static str, Option<String>)>;

#[derive(Subcommand)]
enum Command {
    /// Integrate the lifted flow from a phase point.
    Flow {
        #[command(flatten)]
        common: Common,
        /// Start point `θ₁…θₙ,p₁…pₙ` (θ lifted, in turns).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        #[arg(long)]
        t: Option<String>,
    },
    /// Minimal action between two lifted points.
    Minimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[arg(long)]
        t: Option<String>,
    },
    /// Invariant graph of `T`-periodic orbits winding `r` times.
    TorusPeriodic {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T")]
        period: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        r: Option<String>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Green bundles at a phase point.
    Green {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        #[arg(long)]
        horizon: Option<String>,
    },
    /// Lyapunov exponents along an orbit.
    Lyapunov {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        #[arg(long)]
        horizon: Option<String>,
    },
    /// Quasi-periodic tori accumulating on a periodic torus.
    Kam {
        #[command(flatten)]
        common: Common,
        /// A torus-periodic report.
        #[arg(long)]
        torus: Option<String>,
        /// `golden`, `default`, or comma-separated values.
        #[arg(long)]
        omega: Option<String>,
        /// `a..b` or comma-separated values.
        #[arg(long)]
        m: Option<String>,
    },
    /// Effective Hamiltonian and weak KAM solution of one class.
    Alpha {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        c: Option<String>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Momentum `F_x(c)` of the weak KAM leaves over a list of classes.
    Foliation {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        /// `a:b:k` (n = 1) or a JSON list of classes.
        #[arg(long = "c-grid", allow_hyphen_values = true)]
        c_grid: Option<String>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run the acceptance criteria and print the table.
    Acceptance {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion ids (all by default).
        #[arg(long)]
        criteria: Option<String>,
    },
    /// Compare the payloads of two reports of the same task.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Default absolute tolerance.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        /// Tolerance for a payload path and everything below it; `*` matches
        /// one segment.
        #[arg(long = "field", value_name = "PATH=TOL")]
        fields: Vec<String>,
        /// Restrict the comparison to these payload paths.
        #[arg(long)]
        only: Vec<String>,
    },
}

impl Command {
    /// The task, its common flags and the task flags as `params` keys.
    fn parts(self) -> Option<(Task, Common, Flags)> {
        Some(match self {
            Command::Flow { common, z, t } => (Task::Flow, common, vec![("z", z), ("t", t)]),
            Command::Minimize { common, x, y, t } => (Task::Minimize, common, vec![("x", x), ("y", y), ("t", t)]),
            Command::TorusPeriodic {
                common,
                period,
                r,
                grid,
            } => (
                Task::TorusPeriodic,
                common,
                vec![("T", period), ("r", r), ("grid", grid)],
            ),
            Command::Green { common, z, horizon } => (Task::Green, common, vec![("z", z), ("horizon", horizon)]),
            Command::Lyapunov { common, z, horizon } => (Task::Lyapunov, common, vec![("z", z), ("horizon", horizon)]),
            Command::Kam {
                common,
                torus,
                omega,
                m,
            } => (
                Task::Kam,
                common,
                vec![
                    ("torus", torus.map(|t| serde_json::to_string(&t).expect("string"))),
                    ("omega", omega),
                    ("m", m),
                ],
            ),
            Command::Alpha { common, c, grid } => (Task::Alpha, common, vec![("c", c), ("grid", grid)]),
            Command::Foliation {
                common,
                x,
                c_grid,
                grid,
            } => (
                Task::Foliation,
                common,
                vec![("x", x), ("c_grid", c_grid), ("grid", grid)],
            ),
            Command::Acceptance { common, criteria } => (Task::Acceptance, common, vec![("criteria", criteria)]),
            Command::Compare { .. } => return None,
        })
    }
}

fn overrides(common: &Common, flags: Flags) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = Vec::new();
    for raw in &common.set {
        let (k, v) = config::split_assignment(raw)?;
        out.push((k.to_string(), config::parse_value(v)));
    }
    if let Some(seed) = common.seed {
        out.push(("seed".into(), Value::from(seed)));
    }
    if let Some(path) = &common.output {
        out.push(("output".into(), Value::from(path.display().to_string())));
    }
    for (key, value) in flags {
        if let Some(v) = value {
            let mut parsed = config::parse_value(&v);
            // a single criterion id still names a list
            if key == "criteria" && parsed.is_number() {
                parsed = Value::Array(vec![parsed]);
            }
            out.push((format!("params.{key}"), parsed));
        }
    }
    Ok(out)
}

/// A closed pipe downstream is not an error of the run.
fn print_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("TONELLI_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("TONELLI_THREADS must be a positive integer, got {raw:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run_task(task: Task, common: Common, flags: Flags) -> Result<i32, CliError> {
    let ov = overrides(&common, flags)?;
    let config = config::load(common.config.as_deref(), task, &ov)?;
    let (report, table) = run(&config)?;
    if let (Some(path), Some(table)) = (&common.csv, &table) {
        write_csv(path, table)?;
    }
    match &config.output {
        Some(path) => write_json(path, &report)?,
        None => print_stdout(&serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    for a in report.assertions.iter().filter(|a| !a.passed) {
        eprintln!("assertion failed: {}: {}", a.name, a.detail);
    }
    Ok(report.exit_code())
}

fn run_compare(a: PathBuf, b: PathBuf, tol: f64, fields: Vec<String>, only: Vec<String>) -> Result<i32, CliError> {
    let mut tolerances = Tolerances {
        default: tol,
        fields: Vec::new(),
        only,
    };
    for raw in &fields {
        let (path, t) = config::split_assignment(raw)?;
        let t: f64 = t
            .parse()
            .map_err(|_| CliError::Config(format!("--field {raw}: tolerance is not a number")))?;
        tolerances.fields.push((path.to_string(), t));
    }
    let summary = compare(&read_report(&a)?, &read_report(&b)?, &tolerances)?;
    print_stdout(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(if summary.differences.is_empty() { 0 } else { 2 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Compare {
            a,
            b,
            tol,
            fields,
            only,
        } => run_compare(a, b, tol, fields, only),
        other => {
            let (task, common, flags) = other.parts().expect("task command");
            run_task(task, common, flags)
        }
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
