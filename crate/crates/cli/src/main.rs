//! `teer`: headless runner, metrics tables, replay and the live session server.

mod commands;
mod server;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use teer_core::{ControlPath, Segment};

#[derive(Parser)]
#[command(name = "teer", version, about = "Catheter teleoperation simulator")]
struct Cli {
    /// Simulator configuration (JSON). Defaults to the built-in configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Control {
    Manual,
    Robotic,
}

impl From<Control> for ControlPath {
    fn from(c: Control) -> Self {
        match c {
            Control::Manual => ControlPath::Manual,
            Control::Robotic => ControlPath::Robotic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Target {
    A1p1,
    A2p2,
    A3p3,
}

impl From<Target> for Segment {
    fn from(t: Target) -> Self {
        match t {
            Target::A1p1 => Segment::A1p1,
            Target::A2p2 => Segment::A2p2,
            Target::A3p3 => Segment::A3p3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run scripted trials from a scenario file and write their logs.
    Run {
        /// Scenario file, e.g. `scenarios/step2.json`.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        control: Control,
        /// Must match the scenario's target when given.
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Number of variant scripts to run (default: all of them).
        #[arg(long)]
        trials: Option<usize>,
        /// Run the canonical script instead of the variants.
        #[arg(long)]
        canonical: bool,
        /// Directory for the trial logs and the metrics summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trial log, printing wire messages or serving them to observers.
    Replay {
        /// Trial log (`.jsonl`) written by `run` or a live session.
        #[arg(long)]
        log: PathBuf,
        /// Multiple of real time; 0 replays as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Stream to WebSocket observers instead of stdout.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Tabulate timing, placement and plant metrics over trial logs.
    Metrics {
        /// Glob pattern selecting `.jsonl` logs.
        #[arg(long)]
        logs: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Emit one row per trial instead of per-group aggregates (CSV only).
        #[arg(long)]
        per_trial: bool,
    },
    /// Serve a live session to one driver and any number of observers.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Re-derive the disturbance constants from the canonical scripts and
    /// check the scripted families against their acceptance bands.
    Calibrate {
        #[arg(long, default_value = "scenarios")]
        scenarios: PathBuf,
        /// Write the configuration with the calibrated constants here.
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// Regenerate the scenario files from the operator models.
    Generate {
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
    /// Print the wire-protocol JSON schema, or write it to a file.
    Schema {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = commands::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run { scenario, control, target, trials, canonical, out } => {
            commands::run(&config, &scenario, control.into(), target.map(Into::into), trials, canonical, &out)
        }
        Command::Replay { log, speed, serve, port, host } => {
            if serve {
                server::replay(config, &log, speed, &host, port)
            } else {
                commands::replay_stdout(&config, &log, speed)
            }
        }
        Command::Metrics { logs, format, per_trial } => commands::metrics(&config, &logs, format, per_trial),
        Command::Serve { port, host } => server::serve(config, &host, port),
        Command::Calibrate { scenarios, write } => commands::calibrate(&config, &scenarios, write.as_deref()),
        Command::Generate { out } => commands::generate(&config, &out),
        Command::Schema { out } => commands::schema(out.as_deref()),
    }
}
