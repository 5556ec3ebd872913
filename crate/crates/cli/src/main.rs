//! `gesturewire`: data generation, ingestion, segmentation, training,
//! evaluation, serving and replay over one project directory.

mod assess;
mod data;
mod fit;
mod project;
mod stream;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gesturewire::model::{param_count, ModelConfig};

use project::Project;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Signal(#[from] gesturewire::signal::SignalError),
    #[error(transparent)]
    Baseline(#[from] gesturewire::baseline::BaselineError),
    #[error(transparent)]
    Model(#[from] gesturewire::model::ModelError),
    #[error(transparent)]
    Train(#[from] gesturewire::train::TrainError),
    #[error(transparent)]
    Eval(#[from] gesturewire::eval::EvalError),
    #[error(transparent)]
    Serve(#[from] gesturewire::serve::ServeError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gesturewire", version, about = "Personalized IMU gesture recognition")]
struct Cli {
    /// Project directory holding recordings/, annotations/, models/, reports/.
    #[arg(long, global = true, env = "GESTUREWIRE_PROJECT", default_value = ".")]
    project: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// Model size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// d_model 32, 2 blocks: fast enough for a laptop run.
    Desk,
    /// d_model 128, 3 blocks, d_ff 512.
    Paper,
}

impl Preset {
    pub fn model_config(self, n_classes: usize) -> ModelConfig {
        match self {
            Self::Desk => ModelConfig::desk(n_classes),
            Self::Paper => ModelConfig::paper(n_classes),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/val recordings with ground truth.
    Synth(data::SynthArgs),
    /// Import a recording CSV (and optional annotations) into the project.
    Ingest(data::IngestArgs),
    /// Split coarse regions into gesture instances by motion energy.
    Segment(data::SegmentArgs),
    /// Fit the K-means + LCSS template baseline.
    TrainBaseline(fit::BaselineArgs),
    /// Self-supervised pretraining on unlabeled windows.
    Pretrain(fit::PretrainArgs),
    /// Supervised fine-tuning; writes a model bundle.
    Finetune(fit::FinetuneArgs),
    /// Macro-F1 of a bundle or baseline on a split.
    Eval(assess::EvalArgs),
    /// Export pooled window embeddings as CSV.
    Embed(assess::EmbedArgs),
    /// Majority-vote precision and AC1 of a rating sheet.
    RateEval(assess::RateEvalArgs),
    /// Run the TCP recognition service.
    Serve(stream::ServeArgs),
    /// Stream a recording through the service and log its events.
    Replay(stream::ReplayArgs),
    /// Print the classifier parameter count of a model preset.
    Paramcount(ParamcountArgs),
}

#[derive(clap::Args, Debug)]
struct ParamcountArgs {
    #[arg(long, value_enum, default_value = "paper")]
    config: Preset,
    /// Output classes including IDLE.
    #[arg(long, default_value_t = 5)]
    classes: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Paramcount(a) = &cli.command {
        let cfg = a.config.model_config(a.classes);
        cfg.validate()?;
        println!("{}", param_count(&cfg));
        return Ok(());
    }
    let project = Project::open(&cli.project)?;
    match cli.command {
        Command::Synth(a) => data::synth(&project, a),
        Command::Ingest(a) => data::ingest(&project, a),
        Command::Segment(a) => data::segment(&project, a),
        Command::TrainBaseline(a) => fit::train_baseline(&project, a),
        Command::Pretrain(a) => fit::pretrain(&project, a),
        Command::Finetune(a) => fit::finetune(&project, a),
        Command::Eval(a) => assess::eval(&project, a),
        Command::Embed(a) => assess::embed(&project, a),
        Command::RateEval(a) => assess::rate_eval(&project, a),
        Command::Serve(a) => stream::serve(&project, a),
        Command::Replay(a) => stream::replay(&project, a),
        Command::Paramcount(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    gesturewire::tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
