//! `zenoflow` command-line front end.
//!
//! Exit status: 0 success, 1 schedule validation failure, 2 usage or
//! configuration error, 3 numerical-health failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "zenoflow", version, about = "Measurement-driven chiral transport of free fermions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that the measurement schedule keeps activated pairs apart.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Print the site and schedule listing first.
        #[arg(long)]
        dump: bool,
    },
    /// Run one engine and write density.csv, flow.csv and the resolved
    /// config.txt into the --out directory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the hop probability (--axis p) or the measurement count
    /// (--axis n) and write one CSV row per grid point.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Print the bulk and edge parts of the flow for each p in --grid.
    Decompose {
        #[command(flatten)]
        common: Common,
    },
}

/// Options shared by every subcommand. Each one overrides the same key in
/// the --config file.
#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file read before the other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// lieb, square or kagome_mod.
    #[arg(long)]
    lattice: Option<String>,
    /// Dynamical cells along x.
    #[arg(long)]
    lx: Option<String>,
    /// Dynamical cells along y.
    #[arg(long)]
    ly: Option<String>,
    /// open, cylinder_x or torus.
    #[arg(long)]
    boundary: Option<String>,
    /// Cycle duration T; multiples of pi may be written as `4pi`.
    #[arg(long)]
    period: Option<String>,
    /// Measurements per step.
    #[arg(long)]
    nmeas: Option<String>,
    #[arg(long)]
    cycles: Option<String>,
    /// exact, zeno, floquet or near_zeno.
    #[arg(long)]
    engine: Option<String>,
    /// lower_half, uniform, single_site:<id> or file:<path>.
    #[arg(long)]
    fill: Option<String>,
    /// x position of the vertical cut (default: middle cell boundary).
    #[arg(long)]
    cut_x: Option<String>,
    /// Output directory for simulate, output file for scan and decompose
    /// (default: standard output).
    #[arg(long)]
    out: Option<String>,
    /// standard, or naive for the invalid four-step square cycle.
    #[arg(long)]
    schedule: Option<String>,
    /// Scan axis: p or n.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated values or start:step:end.
    #[arg(long)]
    grid: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        }
        let flags = [
            ("lattice", &self.lattice),
            ("lx", &self.lx),
            ("ly", &self.ly),
            ("boundary", &self.boundary),
            ("period", &self.period),
            ("nmeas", &self.nmeas),
            ("cycles", &self.cycles),
            ("engine", &self.engine),
            ("fill", &self.fill),
            ("cut_x", &self.cut_x),
            ("out", &self.out),
            ("schedule", &self.schedule),
            ("axis", &self.axis),
            ("grid", &self.grid),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).map_err(CliError::Usage)?;
            }
        }
        cfg.check().map_err(CliError::Usage)?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { common, dump } => commands::validate(&common.resolve()?, dump),
        Command::Simulate { common } => commands::simulate(&common.resolve()?),
        Command::Scan { common } => commands::scan(&common.resolve()?),
        Command::Decompose { common } => commands::decompose(&common.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
