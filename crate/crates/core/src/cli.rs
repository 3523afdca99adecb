//! Command-line front end. Exit codes: 0 success, 1 invalid input,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::engine::{EventLog, LogParseError};
use crate::metrics::{collect, compare, write_battery_trace, MetricsError, MetricsReport};
use crate::network::{emit_topology, ingest_topology, TopologyError};
use crate::registry::ArchMode;
use crate::scenario::{emit_scenario, load_scenario, Scenario, ScenarioError};
use crate::world::{simulate, Record, SimError};

#[derive(Debug, Parser)]
#[command(name = "edgeswarm", version, about = "Edge AI agent deployment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its event log.
    Simulate(SimulateArgs),
    /// Summarize an event log.
    Report(ReportArgs),
    /// Compare two runs of the same scenario and seed.
    Compare(CompareArgs),
    /// Tower topology tools.
    #[command(subcommand)]
    Topology(TopologyCommand),
    /// Scenario file tools.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Export the battery and memory trace of a log as CSV.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    Remote,
    Agent,
}

impl From<Arch> for ArchMode {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Remote => ArchMode::Remote,
            Arch::Agent => ArchMode::Agent,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's arch_mode.
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
    seed: u64,
    /// Inclusive seed range `a..b`, run in parallel; needs --out-dir.
    #[arg(long, value_parser = parse_seeds, requires = "out_dir")]
    seeds: Option<RangeInclusive<u64>>,
    /// Log file; stdout when absent.
    #[arg(long, conflicts_with = "seeds")]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    log_a: PathBuf,
    #[arg(long)]
    log_b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum TopologyCommand {
    /// Validate a towers CSV and write it back normalized.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `json` writes towers in scenario form with local coordinates.
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// Load and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Print the fully resolved scenario.
        #[arg(long)]
        emit: bool,
    },
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<RangeInclusive<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..=b)
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<LogParseError> for Failure {
    fn from(e: LogParseError) -> Self {
        match e {
            LogParseError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn cli_main<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn run(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Simulate(a) => run_simulate(a, stdout),
        Command::Report(a) => {
            let report = collect(&read_log(&a.log)?)?;
            let text = match a.format {
                Format::Json => json(&report),
                Format::Text => report.to_text(),
            };
            write_out(a.out.as_deref(), text.as_bytes(), stdout)
        }
        Command::Compare(a) => {
            let ra = collect(&read_log(&a.log_a)?)?;
            let rb = collect(&read_log(&a.log_b)?)?;
            let c = compare(&ra, &rb)?;
            let text = match a.format {
                Format::Json => json(&c),
                Format::Text => c.to_text(),
            };
            write_out(a.out.as_deref(), text.as_bytes(), stdout)
        }
        Command::Topology(TopologyCommand::Ingest { csv, out, format }) => {
            let file = File::open(&csv).map_err(io_at(&csv))?;
            let topo = ingest_topology(BufReader::new(file))?;
            let mut buf = Vec::new();
            match format {
                Format::Json => buf.extend(json(&topo.towers).into_bytes()),
                Format::Text => emit_topology(&topo.towers, &mut buf)?,
            }
            write_out(out.as_deref(), &buf, stdout)?;
            if topo.row_errors.is_empty() {
                Ok(())
            } else {
                let lines: Vec<String> = topo.row_errors.iter().map(|r| format!("line {}: {}", r.line, r.message)).collect();
                Err(Failure::Invalid(format!("{} rejected rows\n{}", lines.len(), lines.join("\n"))))
            }
        }
        Command::Scenario(ScenarioCommand::Validate { scenario, emit }) => {
            let s = load_scenario(&scenario)?;
            if emit {
                stdout.write_all(emit_scenario(&s).as_bytes())?;
            } else {
                writeln!(
                    stdout,
                    "ok: {} ({} devices, {} towers, {} s)",
                    s.scenario_id,
                    s.devices.len(),
                    s.towers.len(),
                    s.duration_s
                )?;
            }
            Ok(())
        }
        Command::Trace(a) => {
            let log = read_log(&a.log)?;
            let mut buf = Vec::new();
            write_battery_trace(&log, &mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
            write_out(a.out.as_deref(), &buf, stdout)
        }
    }
}

fn run_simulate(a: SimulateArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let mut scenario: Scenario = load_scenario(&a.scenario)?;
    if let Some(arch) = a.arch {
        scenario = scenario.with_arch(arch.into());
    }
    let Some(seeds) = a.seeds else {
        let log = simulate(&scenario, a.seed)?;
        return write_out(a.out.as_deref(), log.to_ndjson().as_bytes(), stdout);
    };
    let dir = a.out_dir.expect("clap enforces --out-dir with --seeds");
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let seeds: Vec<u64> = seeds.collect();
    let results: Vec<Result<MetricsReport, Failure>> = seeds
        .par_iter()
        .map(|&seed| {
            let log = simulate(&scenario, seed)?;
            let path = dir.join(format!("{}-{}-seed{seed}.jsonl", scenario.scenario_id, scenario.arch_mode));
            let file = File::create(&path).map_err(io_at(&path))?;
            let mut w = BufWriter::new(file);
            log.write_ndjson(&mut w).map_err(io_at(&path))?;
            w.flush().map_err(io_at(&path))?;
            Ok(collect(&log)?)
        })
        .collect();
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let path = dir.join(format!("{}-{}-reports.json", scenario.scenario_id, scenario.arch_mode));
    fs::write(&path, json(&reports)).map_err(io_at(&path))?;
    for r in &reports {
        let t = &r.tasks;
        writeln!(
            stdout,
            "seed {:>4}  tasks {:>4}  first-try {:.3}  retried {:.3}  timeout {:.3}  unacceptable {:.3}",
            r.seed, t.count, t.first_try, t.retried, t.timeout, t.unacceptable
        )?;
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<EventLog<Record>, Failure> {
    let file = File::open(path).map_err(io_at(path))?;
    EventLog::read_ndjson(BufReader::new(file)).map_err(|e| match Failure::from(e) {
        Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
        Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", path.display())),
    })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn write_out(path: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(io_at(p)),
        None => Ok(stdout.write_all(bytes)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_parse() {
        assert_eq!(parse_seeds("3..7"), Ok(3..=7));
        assert!(parse_seeds("7..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn bad_arguments_exit_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(cli_main(["edgeswarm", "simulate"], &mut out, &mut err), 1);
        assert!(String::from_utf8(err).unwrap().contains("--scenario"));
    }

    #[test]
    fn missing_log_is_a_runtime_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = cli_main(["edgeswarm", "report", "--log", "/nonexistent/run.jsonl"], &mut out, &mut err);
        assert_eq!(code, 2);
    }
}
