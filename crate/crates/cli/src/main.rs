use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conc_cli::{commands, scenario, Command, Context, Status};

#[derive(Parser)]
#[command(name = "conc", version, about = "Concentration on curves: profiles, operators, ansatz and reduced solves")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file.
    #[arg(long, global = true, env = "CONC_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Output directory (default: `run.out` of the scenario, else `out`).
    #[arg(long, global = true, env = "CONC_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for scans.
    #[arg(long, global = true, env = "CONC_THREADS")]
    threads: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long, global = true, env = "CONC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Radial ground state and the sigma identity.
    GroundState,
    /// Spectrum of the linearized operator and special solutions.
    Spectrum,
    /// Fermi chart dump and expansion-vs-exact check.
    GeometryCheck,
    /// Stationarity of the curve for the potential.
    Stationary,
    /// Jacobi operator spectrum and quadratic form check.
    Jacobi,
    /// Distance to the spectrum of the gap operator over ε.
    GapScan,
    /// Builds the approximate solution to order I.
    BuildAnsatz,
    /// Interior residual of the expansion over ε and orders.
    ResidualScan,
    /// Error components of the reduced system at zero.
    ErrorScan,
    /// Runs the reduced fixed point.
    Solve,
    /// Reports derived quantities without running.
    Validate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GroundState => Command::GroundState,
            Cmd::Spectrum => Command::Spectrum,
            Cmd::GeometryCheck => Command::GeometryCheck,
            Cmd::Stationary => Command::Stationary,
            Cmd::Jacobi => Command::Jacobi,
            Cmd::GapScan => Command::GapScan,
            Cmd::BuildAnsatz => Command::BuildAnsatz,
            Cmd::ResidualScan => Command::ResidualScan,
            Cmd::ErrorScan => Command::ErrorScan,
            Cmd::Solve => Command::Solve,
            Cmd::Validate => Command::Validate,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let Some(path) = cli.scenario else {
        eprintln!("error: --scenario is required");
        return ExitCode::from(1);
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    let name = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
    let sc = match scenario::parse_with_env(&name, &text, std::env::vars()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    let out = cli.out.or_else(|| sc.run.out.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context { out, seed: cli.seed };
    match commands::run(cli.command.into(), &sc, &ctx) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
