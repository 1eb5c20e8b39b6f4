//! `rankgraph`: one binary wiring graph building, training, serving and
//! evaluation into reproducible file-based pipelines.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rankgraph::Error;

#[derive(Parser, Debug)]
#[command(name = "rankgraph", version, about = "Heterogeneous graph embedding engine")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// root seed; every random stream is derived from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// worker threads for parallel loops
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-partition dataset (schema, nodes, edges, features, log)
    Generate,
    /// Build a graph binary from a schema and an edge TSV
    Ingest(commands::IngestArgs),
    /// Add a co-engagement relation to a graph binary
    SemanticEdges(commands::SemanticArgs),
    /// Train a model and write its checkpoint and loss log
    Train(commands::TrainArgs),
    /// Export per-type, per-head embedding tables
    Embed(commands::EmbedArgs),
    /// Exact cosine nearest neighbors for listed ids
    Retrieve(commands::RetrieveArgs),
    /// Spherical k-means over an embedding table
    Cluster(commands::ClusterArgs),
    /// Homogeneous co-engagement projection of one node type
    Subgraph(commands::SubgraphArgs),
    /// Write an embedding table as graph tokens
    ExportTokens(commands::TableArg),
    /// Next-period edge recall@k
    EvalEdgeRecall(commands::EdgeRecallArgs),
    /// Trigger-based engagement recall@k
    EvalEngagementRecall(commands::EngagementArgs),
    /// Finite-difference check of the full training loss
    GradCheck(commands::GradCheckArgs),
}

fn run(cli: Cli) -> rankgraph::Result<u8> {
    if cli.global.threads == 0 {
        return Err(Error::validation("--threads must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let g = &cli.global;
    match &cli.command {
        Command::Generate => commands::generate(g),
        Command::Ingest(a) => commands::ingest(g, a),
        Command::SemanticEdges(a) => commands::semantic_edges(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Embed(a) => commands::embed(g, a),
        Command::Retrieve(a) => commands::retrieve(g, a),
        Command::Cluster(a) => commands::cluster(g, a),
        Command::Subgraph(a) => commands::subgraph(g, a),
        Command::ExportTokens(a) => commands::export_tokens(g, a),
        Command::EvalEdgeRecall(a) => commands::eval_edge_recall(g, a),
        Command::EvalEngagementRecall(a) => commands::eval_engagement_recall(g, a),
        Command::GradCheck(a) => commands::grad_check(g, a),
    }
}

fn main() -> ExitCode {
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
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
