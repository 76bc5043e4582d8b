use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pupiltrack::pipeline::{self, InputSource, Mode, PipelineError};
use pupiltrack::synth::generate_sequence;

#[derive(Parser)]
#[command(name = "pupiltrack", version, about = "Pupil localization and tracking in eye-image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Detect,
    Track,
}

#[derive(Subcommand)]
enum Command {
    /// Localize (and optionally track) every frame, writing CSV, plot data and metrics.
    Run {
        /// Pipeline configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the synthetic sequence described by a config as PGM frames plus truth.csv.
    Synth {
        /// Configuration whose `[synth]` section describes the sequence.
        #[arg(long)]
        config: PathBuf,
        /// Directory to write `frame_NNNN.pgm` and `truth.csv` into.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recompute the metrics report from a trajectory CSV.
    Metrics {
        /// A `trajectory.csv` written by `run`.
        #[arg(long)]
        csv: PathBuf,
    },
}

fn fail(err: PipelineError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        PipelineError::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Run { config, mode, out_dir, seed } => {
            let mut cfg = pipeline::load_config(&config)?;
            if let Some(mode) = mode {
                cfg.mode = match mode {
                    ModeArg::Detect => Mode::Detect,
                    ModeArg::Track => Mode::Track,
                };
            }
            if let Some(dir) = out_dir {
                cfg.output.dir = dir;
            }
            if let Some(seed) = seed {
                cfg.set_seed(seed);
            }
            let out = pipeline::run(&cfg)?;
            pipeline::write_outputs(&out, &cfg.output)?;
            print!("{}", out.metrics);
            Ok(())
        }
        Command::Synth { config, out_dir } => {
            let cfg = pipeline::load_config(&config)?;
            let InputSource::Synthetic(synth) = &cfg.input else {
                return Err(pipeline::ConfigError::Invalid("synth needs a synthetic input source".into()).into());
            };
            let seq = generate_sequence(synth)?;
            pipeline::write_sequence(&seq, &out_dir)?;
            println!("wrote {} frames to {}", seq.frames.len(), out_dir.display());
            Ok(())
        }
        Command::Metrics { csv } => {
            let traj = pipeline::read_csv(&csv)?;
            print!("{}", pipeline::compute_metrics(&traj));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
