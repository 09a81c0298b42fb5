//! `jrrelp`: preprocess corpora, generate synthetic data, train, evaluate,
//! ablate and report from the command line.

mod commands;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jrrelp_core::config::TrainConfig;
use jrrelp_core::corpus::{DatasetFormat, Split};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "jrrelp", version, about = "Joint relation extraction and link prediction")]
struct Cli {
    /// Print the default training configuration, with every key documented.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus and write its vocabulary and answer sets.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "tacred-json")]
        format: DatasetFormat,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        /// Let NoRelation sentences contribute answer-set triples.
        #[arg(long)]
        include_negative_kg: bool,
    },
    /// Generate a synthetic train/dev/test corpus.
    Synth {
        /// TOML generator spec; the built-in spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and keep the best-dev checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory with train.json and optionally dev.json and test.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Print the full evaluation as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Train every ablation arm once per seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs and export their loss curves.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Write table.txt and loss_curves.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_config {
        print!("{}", TrainConfig::documented_defaults());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("a subcommand is required; see --help".into()));
    };
    match command {
        Command::Preprocess {
            input,
            format,
            out,
            min_count,
            include_negative_kg,
        } => commands::preprocess_cmd(&input, format, &out, min_count, include_negative_kg),
        Command::Synth { spec, seed, out } => commands::synth_cmd(spec.as_deref(), seed, &out),
        Command::Train { config, data, out } => commands::train_cmd(&config, &data, &out),
        Command::Eval {
            checkpoint,
            data,
            split,
            json,
        } => commands::eval_cmd(&checkpoint, &data, split, json),
        Command::Ablate {
            config,
            data,
            seeds,
            out,
        } => commands::ablate_cmd(&config, &data, &seeds, out.as_deref()),
        Command::Report { runs, out } => commands::report_cmd(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
