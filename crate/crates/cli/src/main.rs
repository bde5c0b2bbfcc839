mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "fastconformer",
    version,
    about = "Conformer / Fast Conformer encoder toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttentionArg {
    Full,
    Limited,
    LimitedWithGlobal,
}

/// Model selection shared by every command that builds an encoder.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Ablation preset (A0..A4).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON encoder config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the attention backend.
    #[arg(long, value_enum)]
    pub attention: Option<AttentionArg>,
    #[arg(long)]
    pub window_left: Option<usize>,
    #[arg(long)]
    pub window_right: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter, MAC and activation-memory report.
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        /// Input duration in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare downsampling schedules by MACs.
    Compare {
        /// Schema names: conformer, squeezeformer, efficient_conformer, fast_conformer.
        #[arg(required = true, num_args = 2..)]
        schemas: Vec<String>,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Encode an FCFT feature file.
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// FCWT weight file; seeded random weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Compare the chunked attention backend with the masked reference.
    CheckEquivalence {
        #[command(flatten)]
        model: ModelArgs,
        /// Sequence length in encoded frames.
        #[arg(long, default_value_t = 300)]
        frames: usize,
        /// Symmetric window; overrides --window-left/--window-right.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// CTC length feasibility over a JSONL manifest.
    Feasibility {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest field holding the target length in tokens.
        #[arg(long, default_value = "transcript_len")]
        length_field: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Buffered long-form encoding plus greedy CTC decoding with a random head.
    Longform {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        buffer_s: f64,
        #[arg(long, default_value_t = 2.0)]
        context_s: f64,
        #[arg(long, default_value_t = 128)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        blank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the decode result JSON here.
        #[arg(long)]
        decode_output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Profile {
            model,
            duration,
            format,
            output,
        } => commands::profile(&model, duration, format, output.as_deref()),
        Command::Compare {
            schemas,
            duration,
            format,
        } => commands::compare(&schemas, duration, format),
        Command::Encode {
            model,
            input,
            output,
            weights,
            seed,
            format,
        } => commands::encode(&model, &input, &output, weights.as_deref(), seed, format),
        Command::CheckEquivalence {
            model,
            frames,
            window,
            seed,
            format,
        } => commands::check_equivalence(&model, frames, window, seed, format),
        Command::Feasibility {
            model,
            manifest,
            length_field,
            format,
        } => commands::feasibility(&model, &manifest, &length_field, format),
        Command::Longform {
            model,
            input,
            output,
            weights,
            buffer_s,
            context_s,
            vocab,
            blank,
            seed,
            decode_output,
            format,
        } => commands::longform(&commands::LongformArgs {
            model: &model,
            input: &input,
            output: &output,
            weights: weights.as_deref(),
            buffer_s,
            context_s,
            vocab,
            blank,
            seed,
            decode_output: decode_output.as_deref(),
            format,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let line = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("usage_error: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
