//! Command-line front end. Exit codes: 0 success, 1 invalid input,
//! 2 solver failure, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ibr_gcs::cli::batch::{generate_random_batch, RandomBatchSpec};
use ibr_gcs::cli::export::{describe_graph, export_run, run_and_export, ExportError};
use ibr_gcs::cli::scenario_file::{parse_scenario, ScenarioFileError};
use ibr_gcs::game::{ibr_run, profile_at_update, GameError, IbrConfig};
use ibr_gcs::highway::{build_vehicle_graph, validate_profile, Scenario};

#[derive(Parser)]
#[command(name = "ibr-gcs", version, about = "Multi-lane highway planning by iterative best response")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run iterative best response on one scenario.
    Solve {
        scenario: PathBuf,
        /// Write trajectory.csv, potential.csv, report.txt and lanes.svg here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop once a sweep changes the potential by less than this.
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 20)]
        max_sweeps: usize,
    },
    /// Run a seeded batch of random scenarios and print a summary.
    Batch {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// TOML file with sampling ranges; `n` and `seed` override its values.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Write per-scenario results, summary.csv and potential.svg here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and print what it contains.
    Validate { scenario: PathBuf },
    /// Print the graph a vehicle searches in a given sweep.
    DumpGraph {
        scenario: PathBuf,
        #[arg(long)]
        vehicle: usize,
        #[arg(long)]
        sweep: usize,
    },
}

enum Failure {
    Invalid(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ScenarioFileError> for Failure {
    fn from(e: ScenarioFileError) -> Self {
        match e {
            ScenarioFileError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<GameError> for Failure {
    fn from(e: GameError) -> Self {
        match e {
            GameError::InvalidConfig(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { scenario, out, eps, max_sweeps } => solve(&scenario, out.as_deref(), eps, max_sweeps),
        Command::Batch { n, seed, spec, out } => batch(n, seed, spec.as_deref(), out.as_deref()),
        Command::Validate { scenario } => validate(&scenario),
        Command::DumpGraph { scenario, vehicle, sweep } => dump_graph(&scenario, vehicle, sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn solve(path: &Path, out: Option<&Path>, eps: f64, max_sweeps: usize) -> Result<(), Failure> {
    let scenario = parse_scenario(path)?;
    let config = IbrConfig { eps, max_sweeps, ..IbrConfig::default() };
    match ibr_run(&scenario, &config) {
        Ok((profile, report)) => {
            if let Some(dir) = out {
                export_run(dir, &scenario, Some(&profile), &report, true)?;
            }
            print!("{}", ibr_gcs::cli::export::render_report(&report));
            let violations = validate_profile(&scenario, &profile);
            println!("violations: {}", violations.len());
            Ok(())
        }
        Err(e) => {
            if let (Some(dir), GameError::Update { partial, .. }) = (out, &e) {
                export_run(dir, &scenario, None, partial, false)?;
            }
            Err(e.into())
        }
    }
}

fn batch(n: usize, seed: u64, spec_path: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let base = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<RandomBatchSpec>(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?
        }
        None => RandomBatchSpec::default(),
    };
    let spec = RandomBatchSpec { num_scenarios: n, seed, ..base };
    let scenarios = generate_random_batch(&spec).map_err(|e| Failure::Invalid(e.to_string()))?;
    let (summary, _) = run_and_export(&scenarios, &IbrConfig::default(), out, true)?;
    print!("{}", summary.to_csv());
    println!("{}", summary.verdict());
    if summary.failures() > 0 {
        return Err(Failure::Solver(format!("{} of {} runs failed", summary.failures(), summary.rows.len())));
    }
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let scenario: Scenario = parse_scenario(path)?;
    let (s_min, s_max) = scenario.road();
    println!(
        "{}: valid, {} vehicles, {} lanes, road [{s_min}, {s_max}] m, T = {}, dt = {} s",
        path.display(),
        scenario.num_vehicles(),
        scenario.lane_count(),
        scenario.horizon(),
        scenario.dt()
    );
    Ok(())
}

fn dump_graph(path: &Path, vehicle: usize, sweep: usize) -> Result<(), Failure> {
    let scenario = parse_scenario(path)?;
    let config = IbrConfig::default();
    let profile = profile_at_update(&scenario, &config, sweep, vehicle)?;
    let graph = build_vehicle_graph(&scenario, vehicle, &profile.others(vehicle), config.response.graph)
        .map_err(|e| Failure::Solver(e.to_string()))?;
    print!("{}", describe_graph(&graph));
    Ok(())
}
