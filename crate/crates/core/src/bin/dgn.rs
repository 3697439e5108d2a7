use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgn::harness::commands::{self, exit_code, Command};
use dgn::harness::config::RunConfig;

#[derive(Parser)]
#[command(name = "dgn", version, about = "Dissipative lattice Gross-Neveu simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to DGN_WORKERS or the core count.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overrides such as `model.mu=0.8` or `quench.to=[0.5,0.9]`.
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify steady states on a (mu, g) grid.
    Scan(RunArgs),
    /// Prepare and classify the steady state at model.mu, model.g.
    Steady(RunArgs),
    /// Quench between two steady states and look for a DPT.
    Quench(RunArgs),
    /// Direct against two-step quench.
    Pme(RunArgs),
    /// Relaxation of several copies towards one target.
    Qme(RunArgs),
    /// Oracle, dissipator and invariant checks.
    Validate(RunArgs),
    /// Render an output CSV as SVG.
    Plot {
        input: PathBuf,
        /// Columns to draw (default: all).
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        /// Logarithmic value axis.
        #[arg(long)]
        log_y: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn run(command: Command, args: RunArgs) -> ExitCode {
    let mut cfg = match RunConfig::load(args.config.as_deref(), &args.overrides) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = args.workers {
        if w == 0 {
            log::error!("--workers must be >= 1");
            return ExitCode::from(2);
        }
        cfg.workers = Some(w);
    }
    if let Some(o) = args.output {
        cfg.output_dir = o;
    }
    match commands::execute(command, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Scan(a) => run(Command::Scan, a),
        Cmd::Steady(a) => run(Command::Steady, a),
        Cmd::Quench(a) => run(Command::Quench, a),
        Cmd::Pme(a) => run(Command::Pme, a),
        Cmd::Qme(a) => run(Command::Qme, a),
        Cmd::Validate(a) => run(Command::Validate, a),
        Cmd::Plot { input, columns, log_y, output } => {
            let out = output.unwrap_or_else(|| input.with_extension("svg"));
            match commands::plot(&input, &columns, log_y, &out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    log::error!("{e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            }
        }
    }
}
