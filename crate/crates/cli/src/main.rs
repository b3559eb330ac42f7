use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use moetrack::tamot::TrackMode;
use moetrack_cli::commands::{self, DETECTIONS_FILE, GROUNDTRUTH_FILE, TRACKS_FILE};
use moetrack_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "moetrack", version, about = "Synthetic multi-modal tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sot,
    Mot,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and write detections and ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Track a detection file.
    Track {
        #[command(flatten)]
        common: Common,
        /// Defaults to detections.jsonl in the output directory.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mot")]
        mode: Mode,
    },
    /// Score tracks against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to groundtruth.jsonl in the output directory.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Defaults to tracks.jsonl in the output directory.
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Check analytic gradients of the encoder losses against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Run the toy optimization.
    TrainToy {
        #[command(flatten)]
        common: Common,
        /// Defaults to `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = load(&common)?;
            report(&commands::simulate(&cfg, &out)?);
        }
        Command::Track {
            common,
            detections,
            mode,
        } => {
            let (cfg, out) = load(&common)?;
            let detections = detections.unwrap_or_else(|| out.join(DETECTIONS_FILE));
            let mode = match mode {
                Mode::Sot => TrackMode::Sot,
                Mode::Mot => TrackMode::Mot,
            };
            report(&commands::track(&cfg, &detections, mode, &out)?);
        }
        Command::Eval { common, gt, tracks } => {
            let (cfg, out) = load(&common)?;
            let gt = gt.unwrap_or_else(|| out.join(GROUNDTRUTH_FILE));
            let tracks = tracks.unwrap_or_else(|| out.join(TRACKS_FILE));
            let paths = commands::eval(&cfg, &gt, &tracks, &out)?;
            if let Ok(summary) = std::fs::read_to_string(&paths[1]) {
                print!("{summary}");
            }
        }
        Command::Gradcheck { common } => {
            let (cfg, out) = load(&common)?;
            let outcome = commands::gradcheck(&cfg, &out)?;
            print!("{}", commands::gradcheck_summary(&outcome));
            if !outcome.passed {
                return Err(CliError::Verification(format!(
                    "gradient check exceeded tolerance {}",
                    outcome.tolerance
                )));
            }
        }
        Command::TrainToy { common, steps } => {
            let (cfg, out) = load(&common)?;
            let steps = steps.unwrap_or(cfg.train.steps);
            let curve = commands::train(&cfg, steps, &out)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("{}", moetrack_cli::train::StepLosses::CSV_HEADER);
                println!("{}", first.csv_row());
                println!("{}", last.csv_row());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
