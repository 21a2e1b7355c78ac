use clap::{Args, Parser, Subcommand};
use evidrank::config::{Overrides, PipelineConfig};
use evidrank::pipeline::{Pipeline, PipelineError, Stage};
use evidrank::rerank::Strategy;
use std::path::PathBuf;
use std::process::ExitCode;
use tracing_subscriber::EnvFilter;

/// Evidence retrieval, LLM re-ranking and claim verification.
#[derive(Parser, Debug)]
#[command(name = "evidrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage.
        #[arg(long, value_parser = parse_stage)]
        stage: Option<Stage>,
    },
    /// Normalize the corpus and claims into the output directory.
    Ingest(Common),
    /// Dense top-N retrieval for every claim.
    Retrieve(Common),
    /// Re-rank retrieved pools with the relevance oracle.
    Rerank(Common),
    /// Predict a verdict per claim from the top re-ranked evidence.
    Verify(Common),
    /// Compute retrieval and verification metrics.
    Evaluate(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; relative paths inside it are resolved against its directory.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Comma-separated cut-offs, e.g. 1,2,5,10.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: evidrank::rerank::RerankError| e.to_string())
}

fn build(common: Common) -> Result<Pipeline, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(Overrides {
        strategy: common.strategy,
        k_values: common.k,
        lambda: common.lambda,
        oracle_url: common.oracle_url,
        mock_script: common.mock_script,
        out_dir: common.out_dir,
        jobs: common.jobs,
    });
    Pipeline::new(cfg)
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Pipeline { common, stage } => build(common)?.run(stage),
        Command::Ingest(c) => build(c)?.run_stage(Stage::Ingest),
        Command::Retrieve(c) => build(c)?.run_stage(Stage::Retrieve),
        Command::Rerank(c) => build(c)?.run_stage(Stage::Rerank),
        Command::Verify(c) => build(c)?.run_stage(Stage::Verify),
        Command::Evaluate(c) => build(c)?.run_stage(Stage::Evaluate),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("EVIDRANK_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(exit_code = e.exit_code(), "{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
