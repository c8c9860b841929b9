use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heterfc::config::{Precision, TrainConfig};
use heterfc::graph::ExportFormat;

mod commands;

#[derive(Parser)]
#[command(
    name = "heterfc",
    version,
    about = "Fact verification over word-level heterogeneous evidence graphs"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Worker threads for data-parallel work; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the arithmetic precision.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Dot,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ExportFormat::Json,
            FormatArg::Dot => ExportFormat::Dot,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes the evidence graph of every training instance.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; files are named `<claim_id>.<source>.<ext>`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Trains a model and writes `model.hfck` and `train_log.jsonl`.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores a checkpoint on a claim file.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Configuration the checkpoint must match; defaults to the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes metrics and per-claim predictions as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Lists the parameters stored in a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Measures cross-evidence influence for each claim.
    Influence {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restricts the report to one claim.
        #[arg(long)]
        claim: Option<String>,
    },
    /// Writes the token alignment manifest an external exporter fills in.
    ExportEmbeddingsTemplate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest output path.
        #[arg(long)]
        out: PathBuf,
        /// Model name recorded in the manifest.
        #[arg(long, default_value = "hashed")]
        model: String,
        /// Also writes a complete hashed embedding file to this path.
        #[arg(long)]
        hashed: Option<PathBuf>,
    },
}

impl GlobalOpts {
    fn apply(&self, mut cfg: TrainConfig) -> heterfc::Result<TrainConfig> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = self.precision {
            cfg.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_logging() {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    builder.format_timestamp(None).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match commands::run(cli.command, &cli.global) {
        Ok(()) => ExitCode::SUCCESS,
        Err(heterfc::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
