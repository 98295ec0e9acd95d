use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod hyps;

#[derive(Parser)]
#[command(name = "ctcgmm", version, about = "Streaming transducer speech translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate speech, MT and test corpora from a synthetic task spec.
    GenData(GenDataArgs),
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode a corpus with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score hypotheses against a reference corpus.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        entities: Option<PathBuf>,
    },
    /// Compare decoding cost across compression modes.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Task parameters (key=value file).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_speech: PathBuf,
    #[arg(long)]
    pub out_mt: PathBuf,
    #[arg(long)]
    pub out_test: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_speech: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_mt: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Hypothesis file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Beam width; defaults to the config's `beam_width`.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Greedy decoding instead of beam search.
    #[arg(long, conflicts_with = "beam")]
    pub greedy: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path; `{mode}` is replaced by each mode name.
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated subset of baseline-tr4, baseline-tr8, average,
    /// attention, discrete-keep-blank, discrete-remove-blank.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train { config } => commands::train(&config),
        Command::Decode(a) => commands::decode(&a),
        Command::Eval {
            hyp,
            reference,
            entities,
        } => commands::eval(&hyp, &reference, entities.as_deref()),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
