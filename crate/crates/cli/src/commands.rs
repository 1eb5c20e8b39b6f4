//! Subcommand bodies. Each resolves its config (file, then flags), writes
//! a manifest into `--out`, then writes its outputs.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use rankgraph::eval::{
    self, generate_synthetic, EdgeRecallConfig, EngagementRecallConfig, InteractionLog, SyntheticConfig, SyntheticData,
};
use rankgraph::graph::{derive_semantic_edges, ingest_edges, GraphSchema, HeteroGraph, IdDictionary};
use rankgraph::model::{load_checkpoint, save_checkpoint, FeatureStore};
use rankgraph::rng::stream;
use rankgraph::serving::{self, export_all, export_graph_tokens, knn, project_subgraph, EmbeddingTable};
use rankgraph::training::{self, grad_check_fixture, write_history, TrainConfig};
use rankgraph::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::write_manifest;
use crate::Global;

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    /// node dictionary TSV fixing local ids (and isolated nodes)
    #[arg(long)]
    nodes: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SemanticArgs {
    #[arg(long)]
    graph: PathBuf,
    /// engagement relation to project through
    #[arg(long)]
    via: String,
    /// name of the new relation (default `co_<via>`)
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    min_weight: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    table: PathBuf,
    /// comma-separated external ids; all rows when omitted
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SubgraphArgs {
    #[arg(long)]
    graph: PathBuf,
    /// node type to project
    #[arg(long = "type")]
    node_type: String,
    #[arg(long)]
    via: String,
    /// relation name written in the output (default `co_<via>`)
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    min_weight: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TableArg {
    #[arg(long)]
    table: PathBuf,
}

#[derive(Args, Debug)]
pub struct EdgeRecallArgs {
    /// one table per node type, all from the same head
    #[arg(long, num_args = 1.., required = true)]
    tables: Vec<PathBuf>,
    /// next-period graph binary
    #[arg(long)]
    next: PathBuf,
    /// replace every table with random unit rows of the same shape
    #[arg(long)]
    random: bool,
}

#[derive(Args, Debug)]
pub struct EngagementArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// replace the table with random unit rows of the same shape
    #[arg(long)]
    random: bool,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NoConfig {}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProjectionConfig {
    top_k: usize,
    min_weight: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            top_k: 20,
            min_weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RetrieveConfig {
    k: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ClusterConfig {
    k: usize,
    max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 8, max_iters: 100 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradCheckConfig {
    epsilon: f64,
    tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(g: &Global) -> Result<T> {
    let Some(path) = &g.config else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.clone(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn require_out(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| Error::validation("--out is required for this subcommand"))
}

/// Inputs plus the config file, for digests and the overwrite guard.
fn with_config<'a>(g: &'a Global, inputs: &[&'a Path]) -> Vec<&'a Path> {
    let mut all = inputs.to_vec();
    all.extend(g.config.as_deref());
    all
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Manifest first, after refusing to overwrite any input.
fn start(g: &Global, name: &str, seed: Option<u64>, config: &impl Serialize, inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
    let out = require_out(g)?;
    let inputs = with_config(g, inputs);
    if let Some(clash) = outputs.iter().find(|o| inputs.iter().any(|i| same_file(i, o))) {
        return Err(Error::validation(format!("output {} would overwrite an input", clash.display())));
    }
    write_manifest(out, name, seed, config, &inputs, outputs)
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<String> {
    let text = serde_json::to_string_pretty(value)?;
    let mut w = create(path)?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(text)
}

/// Prints to stdout; a closed pipe downstream is not an error.
fn emit(lines: &[String]) -> Result<()> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for l in lines {
        match writeln!(w, "{l}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r?,
        }
    }
    Ok(())
}

fn root_seed(g: &Global) -> u64 {
    g.seed.unwrap_or(0)
}

pub fn generate(g: &Global) -> Result<u8> {
    let mut cfg: SyntheticConfig = load_config(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let data = generate_synthetic(&cfg)?;
    let out = require_out(g)?;
    let outputs: Vec<PathBuf> = SyntheticData::FILES.iter().map(|f| out.join(f)).collect();
    start(g, "generate", Some(cfg.seed), &cfg, &[], &outputs)?;
    data.write_dir(out)?;
    log::info!(
        "wrote {} edges, {} next-period edges, {} log records to {}",
        data.edges.len(),
        data.next_edges.len(),
        data.log.len(),
        out.display()
    );
    Ok(0)
}

pub fn ingest(g: &Global, a: &IngestArgs) -> Result<u8> {
    let _: NoConfig = load_config(g)?;
    let schema = GraphSchema::load(&a.schema)?;
    let ids = a.nodes.as_deref().map(|p| IdDictionary::load(&schema, p)).transpose()?;
    let graph = ingest_edges(&a.edges, &schema, ids)?;
    let path = require_out(g)?.join("graph.rgg");
    let mut inputs = vec![a.schema.as_path(), a.edges.as_path()];
    inputs.extend(a.nodes.as_deref());
    start(g, "ingest", None, &NoConfig {}, &inputs, &[path.clone()])?;
    graph.save(&path)?;
    Ok(0)
}

pub fn semantic_edges(g: &Global, a: &SemanticArgs) -> Result<u8> {
    let mut cfg: ProjectionConfig = load_config(g)?;
    cfg.top_k = a.top_k.unwrap_or(cfg.top_k);
    cfg.min_weight = a.min_weight.unwrap_or(cfg.min_weight);
    let graph = HeteroGraph::load(&a.graph)?;
    let via = graph.schema().require_relation(&a.via)?;
    let name = a.name.clone().unwrap_or_else(|| format!("co_{}", a.via));
    let derived = derive_semantic_edges(&graph, via, &name, cfg.top_k, cfg.min_weight)?;
    let path = require_out(g)?.join("graph.rgg");
    start(g, "semantic-edges", None, &cfg, &[&a.graph], &[path.clone()])?;
    derived.save(&path)?;
    Ok(0)
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<u8> {
    let mut cfg: TrainConfig = load_config(g)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let seed = root_seed(g);
    let graph = HeteroGraph::load(&a.graph)?;
    let features = FeatureStore::load(&graph, &a.features)?;
    let out = require_out(g)?;
    let (ckpt, loss) = (out.join("checkpoint.rgc"), out.join("loss.tsv"));
    start(g, "train", Some(seed), &cfg, &[&a.graph, &a.features], &[ckpt.clone(), loss.clone()])?;
    let result = training::train(&graph, &features, &cfg, seed)?;
    save_checkpoint(&result.params, &ckpt)?;
    let mut w = create(&loss)?;
    write_history(&result.history, &mut w)?;
    w.flush()?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        log::info!("loss {:.5} -> {:.5} over {} steps", first.loss, last.loss, result.history.len());
    }
    Ok(0)
}

fn table_file(t: &EmbeddingTable) -> String {
    format!("{}.h{}.rge", t.node_type(), t.head())
}

pub fn embed(g: &Global, a: &EmbedArgs) -> Result<u8> {
    let _: NoConfig = load_config(g)?;
    let graph = HeteroGraph::load(&a.graph)?;
    let features = FeatureStore::load(&graph, &a.features)?;
    let params = load_checkpoint(&a.checkpoint, graph.schema())?;
    let tables = export_all(&params, &graph, &features)?;
    let out = require_out(g)?;
    let outputs: Vec<PathBuf> = tables.iter().flatten().map(|t| out.join(table_file(t))).collect();
    start(g, "embed", None, &NoConfig {}, &[&a.graph, &a.features, &a.checkpoint], &outputs)?;
    for (t, path) in tables.iter().flatten().zip(&outputs) {
        t.save(path)?;
    }
    Ok(0)
}

pub fn retrieve(g: &Global, a: &RetrieveArgs) -> Result<u8> {
    let mut cfg: RetrieveConfig = load_config(g)?;
    cfg.k = a.k.unwrap_or(cfg.k);
    let table = EmbeddingTable::load(&a.table)?;
    let queries: Vec<u32> = if a.ids.is_empty() {
        (0..table.len() as u32).collect()
    } else {
        a.ids.iter().map(|id| table.require(id)).collect::<Result<_>>()?
    };
    let mut lines = Vec::new();
    for &q in &queries {
        for (j, s) in knn(&table, q, cfg.k)? {
            lines.push(format!("{}\t{}\t{}", table.external(q), table.external(j), s));
        }
    }
    if let Some(out) = &g.out {
        let path = out.join("neighbors.tsv");
        start(g, "retrieve", None, &cfg, &[&a.table, &EmbeddingTable::ids_path(&a.table)], &[path.clone()])?;
        let mut w = create(&path)?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
    }
    emit(&lines)?;
    Ok(0)
}

pub fn cluster(g: &Global, a: &ClusterArgs) -> Result<u8> {
    let mut cfg: ClusterConfig = load_config(g)?;
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.max_iters = a.max_iters.unwrap_or(cfg.max_iters);
    let seed = root_seed(g);
    let table = EmbeddingTable::load(&a.table)?;
    let model = serving::cluster(&table, cfg.k, cfg.max_iters, &mut stream(seed, "cluster"))?;
    let out = require_out(g)?;
    let (json, tsv) = (out.join("clusters.json"), out.join("assignments.tsv"));
    start(g, "cluster", Some(seed), &cfg, &[&a.table, &EmbeddingTable::ids_path(&a.table)], &[json.clone(), tsv.clone()])?;
    write_json(&json, &model)?;
    let mut w = create(&tsv)?;
    for (i, c) in model.assignment.iter().enumerate() {
        writeln!(w, "{}\t{c}", table.external(i as u32))?;
    }
    w.flush()?;
    log::info!("inertia {} after {} iterations", model.inertia, model.iterations);
    Ok(0)
}

pub fn subgraph(g: &Global, a: &SubgraphArgs) -> Result<u8> {
    let mut cfg: ProjectionConfig = load_config(g)?;
    cfg.top_k = a.top_k.unwrap_or(cfg.top_k);
    cfg.min_weight = a.min_weight.unwrap_or(cfg.min_weight);
    let graph = HeteroGraph::load(&a.graph)?;
    let projection = project_subgraph(&graph, &a.node_type, &a.via, cfg.top_k, cfg.min_weight)?;
    let name = a.name.clone().unwrap_or_else(|| format!("co_{}", a.via));
    let path = require_out(g)?.join("subgraph.tsv");
    start(g, "subgraph", None, &cfg, &[&a.graph], &[path.clone()])?;
    let mut w = create(&path)?;
    projection.write_tsv(&graph, &name, &mut w)?;
    w.flush()?;
    Ok(0)
}

pub fn export_tokens(g: &Global, a: &TableArg) -> Result<u8> {
    let _: NoConfig = load_config(g)?;
    let table = EmbeddingTable::load(&a.table)?;
    let stem = a.table.file_stem().map_or("tokens".into(), |s| s.to_string_lossy().into_owned());
    let path = require_out(g)?.join(format!("{stem}.rgk"));
    start(g, "export-tokens", None, &NoConfig {}, &[&a.table, &EmbeddingTable::ids_path(&a.table)], &[path.clone()])?;
    export_graph_tokens(&table, &path)?;
    Ok(0)
}

fn randomized(table: EmbeddingTable, seed: u64) -> Result<EmbeddingTable> {
    let name = format!("random-table:{}:{}", table.node_type(), table.head());
    EmbeddingTable::random_like(&table, &mut stream(seed, &name))
}

pub fn eval_edge_recall(g: &Global, a: &EdgeRecallArgs) -> Result<u8> {
    let mut cfg: EdgeRecallConfig = load_config(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let mut tables = a.tables.iter().map(|p| EmbeddingTable::load(p)).collect::<Result<Vec<_>>>()?;
    if a.random {
        tables = tables.into_iter().map(|t| randomized(t, cfg.seed)).collect::<Result<_>>()?;
    }
    let next = HeteroGraph::load(&a.next)?;
    let report = eval::eval_edge_recall(&tables, &next, &cfg)?;
    let path = require_out(g)?.join("edge_recall.json");
    let ids: Vec<PathBuf> = a.tables.iter().map(|p| EmbeddingTable::ids_path(p)).collect();
    let mut inputs: Vec<&Path> = a.tables.iter().map(PathBuf::as_path).collect();
    inputs.extend(ids.iter().map(PathBuf::as_path));
    inputs.push(&a.next);
    start(g, "eval-edge-recall", Some(cfg.seed), &cfg, &inputs, &[path.clone()])?;
    let text = write_json(&path, &report)?;
    emit(&[text])?;
    Ok(0)
}

pub fn eval_engagement_recall(g: &Global, a: &EngagementArgs) -> Result<u8> {
    let cfg: EngagementRecallConfig = load_config(g)?;
    let seed = root_seed(g);
    let mut table = EmbeddingTable::load(&a.table)?;
    if a.random {
        table = randomized(table, seed)?;
    }
    let log = InteractionLog::load(&a.log)?;
    let report = eval::eval_engagement_recall(&table, &log, &cfg)?;
    let path = require_out(g)?.join("engagement_recall.json");
    let ids = EmbeddingTable::ids_path(&a.table);
    start(g, "eval-engagement-recall", Some(seed), &cfg, &[&a.table, &ids, &a.log], &[path.clone()])?;
    let text = write_json(&path, &report)?;
    emit(&[text])?;
    Ok(0)
}

#[derive(Serialize)]
struct GradCheckOutput {
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    max_rel_error: f64,
    entries_checked: usize,
    passed: bool,
}

pub fn grad_check(g: &Global, a: &GradCheckArgs) -> Result<u8> {
    let mut cfg: GradCheckConfig = load_config(g)?;
    cfg.epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    cfg.tolerance = a.tolerance.unwrap_or(cfg.tolerance);
    if !(cfg.epsilon > 0.0 && cfg.tolerance > 0.0) {
        return Err(Error::validation("epsilon and tolerance must be > 0"));
    }
    let seed = root_seed(g);
    let fixture = grad_check_fixture(seed)?;
    let report = fixture.check(cfg.epsilon)?;
    let result = GradCheckOutput {
        seed,
        epsilon: cfg.epsilon,
        tolerance: cfg.tolerance,
        max_rel_error: report.max_rel_error,
        entries_checked: report.entries_checked,
        passed: report.max_rel_error <= cfg.tolerance,
    };
    if let Some(out) = &g.out {
        let path = out.join("grad_check.json");
        start(g, "grad-check", Some(seed), &cfg, &[], &[path.clone()])?;
        write_json(&path, &result)?;
    }
    emit(&[
        format!("max_rel_error\t{:e}", result.max_rel_error),
        format!("entries_checked\t{}", result.entries_checked),
        (if result.passed { "PASS" } else { "FAIL" }).to_string(),
    ])?;
    Ok(if result.passed { 0 } else { 2 })
}
