use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netrack_cli::commands::{self, EvalArgs, PlotArgs, SimulateArgs, Stage, TrackArgs, TrainArgs};
use netrack_cli::CliResult;
use netrack_core::evaluation::DEFAULT_GATE;
use netrack_core::TrackerMode;

#[derive(Parser)]
#[command(
    name = "netrack",
    version,
    about = "Neural-enhanced multi-object tracking"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

fn parse_mode(s: &str) -> Result<TrackerMode, String> {
    s.parse().map_err(|e: netrack_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a scene.
    Track {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// mb, ne, ne-motion or ne-meas.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrackerMode>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train network weights on a directory of scenes.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pretrain")]
        stage: Stage,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Starting weights; required for the joint stage.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score tracks against a scene's ground truth.
    Eval {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Match distance in meters.
        #[arg(long, default_value_t = DEFAULT_GATE)]
        gate: f64,
    },
    /// Render an SVG overlay or export a CSV table.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        frame: Option<usize>,
    },
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Simulate { config, seed, out } => {
            commands::simulate(&SimulateArgs { config, seed, out })
        }
        Cmd::Track {
            scene,
            weights,
            mode,
            config,
            seed,
            out,
        } => commands::track(&TrackArgs {
            scene,
            weights,
            mode,
            config,
            seed,
            out,
        }),
        Cmd::Train {
            scenes,
            out,
            stage,
            config,
            init,
            seed,
        } => commands::train(&TrainArgs {
            scenes,
            out,
            stage,
            config,
            init,
            seed,
        }),
        Cmd::Eval {
            tracks,
            scene,
            report,
            gate,
        } => commands::eval(&EvalArgs {
            tracks,
            scene,
            report,
            gate,
        }),
        Cmd::Plot {
            input,
            out,
            scene,
            frame,
        } => commands::plot(&PlotArgs {
            input,
            out,
            scene,
            frame,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
