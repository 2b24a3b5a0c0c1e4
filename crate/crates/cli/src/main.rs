//! `tfbeam`: corpus generation, enhancement, training, evaluation and plots.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tfbeam::pipeline::{Method, RtfSource};

/// Environment variable naming the default corpus directory.
pub const CORPUS_ENV: &str = "TFBEAM_CORPUS";

#[derive(Debug, Parser)]
#[command(name = "tfbeam", version, about = "Time-frequency beamformer combination for two-microphone target extraction")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a corpus of reverberant mixtures.
    GenCorpus(GenCorpusArgs),
    /// Enhance every mixture of a corpus with one method.
    Run(RunArgs),
    /// Train the combination network.
    Train(TrainArgs),
    /// Score enhanced outputs with SI-SDR and SI-SIR.
    Evaluate(EvaluateArgs),
    /// Render a spectrogram or weight field as a grayscale image.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// Interferers per mixture; the default split mixes 2, 3 and 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub interferers: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clip length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Directory of clean mono WAV utterances; synthetic sources otherwise.
    #[arg(long)]
    pub source_pool: Option<PathBuf>,
    #[arg(long, env = CORPUS_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Refinement iterations of the classical combination methods.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Null directions of the initial beams in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub nulls: Option<Vec<f64>>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rtf: Option<RtfArg>,
    /// Output root; WAVs go to `<out>/<method>/<id>.wav`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum RtfArg {
    Oracle,
    Steering,
}

impl From<RtfArg> for RtfSource {
    fn from(r: RtfArg) -> Self {
        match r {
            RtfArg::Oracle => RtfSource::Oracle,
            RtfArg::Steering => RtfSource::Steering,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub val_corpus: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of initial beams.
    #[arg(long)]
    pub beams: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    /// Directory with one sub-directory of WAVs per method.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Methods to score, comma separated; all method directories by default.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Directory for `metrics.csv` and `metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// A `.wav` file (spectrogram) or a `.tfwf` weight field.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output image, `.png` or `.pgm`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub channel: Option<usize>,
    /// Spectrogram floor in dB below the maximum.
    #[arg(long, allow_hyphen_values = true)]
    pub floor_db: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    /// Invalid invocation; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl From<tfbeam::Error> for CliError {
    fn from(e: tfbeam::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
