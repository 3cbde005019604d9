mod commands;
mod io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cir_audit::rank_store::MissingPolicy;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent input data.
    Data(String),
    /// Failure not attributable to the inputs (e.g. cannot write output).
    Internal(String),
}

impl CliError {
    /// A library error with the offending file prefixed.
    pub fn at(path: &Path, e: cir_audit::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<cir_audit::Error> for CliError {
    fn from(e: cir_audit::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cir-audit", version, about = "Unimodal shortcut audit for composed image retrieval benchmarks")]
pub struct Cli {
    /// Output directory for artifacts.
    #[arg(long, global = true, env = "CIR_AUDIT_OUT", default_value = "cir-audit-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Benchmark manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Rank export(s), one JSON record per line. Repeat or comma-separate.
    #[arg(long, required = true, value_delimiter = ',')]
    pub runs: Vec<PathBuf>,
    /// Restrict the retriever pool to these ids (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub pool: Vec<String>,
    /// Treatment of cells absent from the rank exports.
    #[arg(long, default_value = "strict")]
    pub policy: MissingPolicy,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify every query and report category counts.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        /// Rank cutoff K.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
    },
    /// Shortcut rate across cutoffs plus leave-one-retriever-out rates.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        cutoffs: Vec<u32>,
        /// Cutoff used for the leave-one-out analysis.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
    },
    /// Per-retriever MM score and signed deltas for each split.
    Metrics {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        splits: SplitArgs,
        /// recall@K, mrr, mrr@K, ndcg or ndcg@K.
        #[arg(long, default_value = "recall@10")]
        metric: String,
    },
    /// Retriever-averaged composition gap per split.
    Compgap {
        /// Compute from rank exports instead of a published score table.
        #[arg(long, requires = "runs")]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        runs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        pool: Vec<String>,
        #[arg(long, default_value = "strict")]
        policy: MissingPolicy,
        #[command(flatten)]
        splits: SplitArgs,
        /// Score table CSV (defaults to the bundled transcription).
        #[arg(long, conflicts_with = "manifest")]
        table: Option<PathBuf>,
        #[arg(long, default_value = "ndcg")]
        metric: String,
    },
    /// Bootstrap intervals for MM scores, paired deltas and split differences.
    Uncertainty {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        splits: SplitArgs,
        #[arg(long, default_value = "recall@10")]
        metric: String,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        resamples: u64,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seed: u64,
    },
    /// Inter-rater agreement over judgments that share queries.
    Agreement {
        /// Judgment log(s).
        #[arg(long, required = true, value_delimiter = ',')]
        judgments: Vec<PathBuf>,
    },
    /// Stratified sample of query ids by audit category.
    Sample {
        /// Per-query label file written by `audit`.
        #[arg(long)]
        labels: PathBuf,
        /// category=count pairs, e.g. composition_required=1000,unresolved=1000.
        #[arg(long, value_delimiter = ',', required = true)]
        requests: Vec<String>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seed: u64,
    },
    /// Write Full, SF and V split manifests.
    Export {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
        /// Judgment log(s); needed for V.
        #[arg(long, value_delimiter = ',')]
        judgments: Vec<PathBuf>,
        /// single or majority:THRESHOLD:QUORUM.
        #[arg(long, default_value = "single")]
        aggregation: String,
        /// Splits to write.
        #[arg(long, value_delimiter = ',', default_value = "full,sf,v")]
        split: Vec<String>,
    },
    /// Generate a synthetic benchmark with planted audit categories.
    Fixture {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seed: u64,
        /// Category counts as category=count pairs; overrides the preset.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<String>,
        /// `small` (60 queries) or `cirr` (the 4,170-query CIRR audit shape).
        #[arg(long, default_value = "small")]
        preset: String,
        #[arg(long, default_value_t = 11)]
        retrievers: usize,
        #[arg(long)]
        gallery: Option<u32>,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
        /// Relevant items per query.
        #[arg(long, default_value_t = 1)]
        relevant: usize,
    },
    /// Serve the validation workflow over TCP or stdin/stdout.
    Serve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
        /// Append-only judgment log.
        #[arg(long)]
        log: PathBuf,
        /// Read-only asset directory.
        #[arg(long)]
        assets: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        #[arg(long, default_value_t = 50)]
        batch_size: usize,
        /// Leading SF queries served to every annotator.
        #[arg(long, default_value_t = 0)]
        overlap: usize,
        #[arg(long, default_value = "single")]
        aggregation: String,
        /// Address to listen on, e.g. 127.0.0.1:7878.
        #[arg(long, conflicts_with = "stdio")]
        listen: Option<String>,
        /// Serve a single session on stdin/stdout.
        #[arg(long)]
        stdio: bool,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// Splits to evaluate: full, sf, v.
    #[arg(long, value_delimiter = ',', default_value = "full,sf")]
    pub splits: Vec<String>,
    /// Audit cutoff that defines SF.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    /// V split manifest written by `export`.
    #[arg(long)]
    pub v_manifest: Option<PathBuf>,
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
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cir-audit: {e}");
            ExitCode::from(match e {
                CliError::Data(_) => 2,
                CliError::Internal(_) => 3,
            })
        }
    }
}
