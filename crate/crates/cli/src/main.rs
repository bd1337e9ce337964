use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evtrack_cli::commands::{
    cmd_e2e, cmd_evaluate, cmd_make_map, cmd_simulate, cmd_track, TrackOptions,
};

/// Event-camera pose tracking experiments: scene generation, event
/// simulation, per-event tracking, and trajectory evaluation.
#[derive(Parser)]
#[command(name = "evtrack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic scene as a map directory.
    MakeMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate an event stream over a map along the configured trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Map directory (see `make-map`).
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a recorded event stream against a map.
    Track {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Event stream file (`t x y p` lines).
        #[arg(long)]
        events: PathBuf,
        /// Trajectory file supplying the initial pose (interpolated at the
        /// first event timestamp).
        #[arg(long)]
        init_pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every Nth pose in the estimate output.
        #[arg(long)]
        decimate: Option<u32>,
        /// Process at most N events (0 = all).
        #[arg(long)]
        max_events: Option<u64>,
        /// Reject non-monotone event streams regardless of the config.
        #[arg(long)]
        strict_io: bool,
    },
    /// Compare an estimated trajectory against ground truth.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Mean scene depth in meters (normalizes position errors).
        #[arg(long)]
        mean_depth: f64,
        /// Write the per-sample error CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run simulate, track, and evaluate in one go and check the acceptance
    /// thresholds from the config.
    E2e {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeMap { config, out } => cmd_make_map(&config, &out),
        Command::Simulate {
            config,
            map,
            out,
            seed,
        } => cmd_simulate(&config, &map, &out, seed),
        Command::Track {
            config,
            map,
            events,
            init_pose,
            out,
            decimate,
            max_events,
            strict_io,
        } => cmd_track(
            &config,
            &map,
            &events,
            &init_pose,
            &out,
            &TrackOptions {
                decimate,
                max_events,
                strict_io,
            },
        ),
        Command::Evaluate {
            est,
            gt,
            mean_depth,
            out,
        } => cmd_evaluate(&est, &gt, mean_depth, out.as_deref()).map(|_| ()),
        Command::E2e {
            config,
            workdir,
            seed,
        } => cmd_e2e(&config, &workdir, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code.clamp(0, 255) as u8)
        }
    }
}
