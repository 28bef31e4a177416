//! Command-line pipelines. One subcommand per capability, every run
//! documented by a manifest written beside its outputs: the resolved
//! configuration, input and output content hashes, seeds, and wall time.
//!
//! Flag precedence is flags > config file (`--config`, `key = value`
//! lines) > built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{DecisionBackend, MockBackend, RemoteBackend, RemoteBackendConfig, TokenLedger};
use crate::corpus::{self, Corpus, Split, TruncationCaps};
use crate::detector::model::{self as dmodel, DetectorConfig, DetectorExample};
use crate::detector::router::{route as route_item, BaseClassifier, Route, RouterConfig};
use crate::detector::theory;
use crate::detector::DetectorModel;
use crate::embed::{EmbeddingProvider, HashEmbedder, RemoteEmbedder};
use crate::metrics::{
    behavior_report, compare_report, degree_jsd, mean_stats, DegreeConvention, GOSSIPCOP_P_REAL,
    POLITIFACT_P_REAL,
};
use crate::persona::{self, ExtractionConfig, VerifierFilter};
use crate::sim::{self, SimulationConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("{0}")]
    Persona(#[from] persona::PersonaError),
    #[error("{0}")]
    Sim(#[from] sim::SimError),
    #[error("{0}")]
    Detector(#[from] crate::detector::DetectorError),
    #[error("{0}")]
    Embed(#[from] crate::embed::EmbedError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("theory checks failed:\n{0}")]
    TheoryFailed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    resolved_config: BTreeMap<String, String>,
    inputs: Vec<FileDigest>,
    rng_seeds: Vec<u64>,
    outputs: Vec<FileDigest>,
    wall_ms: u128,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct ManifestBuilder {
    command: String,
    resolved: BTreeMap<String, String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            resolved: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: Vec::new(),
            started: Instant::now(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    /// Writes `<primary output>.manifest.json`; a command with no file
    /// outputs writes no manifest.
    fn finish(self) -> Result<(), CliError> {
        let Some(primary) = self.outputs.first().cloned() else { return Ok(()) };
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>, CliError> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            resolved_config: self.resolved,
            inputs: digest(&self.inputs)?,
            rng_seeds: self.seeds,
            outputs: digest(&self.outputs)?,
            wall_ms: self.started.elapsed().as_millis(),
        };
        let mut name = primary.as_os_str().to_os_string();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable"))
            .map_err(io_err(&path))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

fn load_config_file(path: Option<&Path>) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    let Some(path) = path else { return Ok(map) };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("bad config line: {line}")));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flags beat the config file, which beats the default.
fn resolve<T: std::str::FromStr + ToString>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(raw) = file.get(key) {
        return raw
            .parse::<T>()
            .map_err(|_| CliError::Config(format!("config key {key}: cannot parse {raw:?}")));
    }
    Ok(default)
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "earlycast",
    version,
    about = "Simulate virtual news cascades and train an early fake-news detector"
)]
struct Cli {
    /// key = value config file; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and normalize corpus files into an output directory
    Ingest(IngestArgs),
    /// Distill persona profiles from train-split comments
    ExtractPersonas(ExtractArgs),
    /// Run virtual propagation over a corpus and write a run file
    Simulate(SimulateArgs),
    /// Structural/behavioral metrics and real-vs-virtual comparison
    Metrics(MetricsArgs),
    /// Train the fusion detector on a corpus plus simulated cascades
    Train(TrainArgs),
    /// Evaluate a checkpoint (optionally routing easy items to the base head)
    Evaluate(EvaluateArgs),
    /// Fit the base confidence head and split items into easy/hard
    Route(RouteArgs),
    /// Grid-sweep the reconstruction/alignment loss weights
    Sweep(SweepArgs),
    /// Run the latent-alignment property checks
    TheoryCheck(TheoryArgs),
    /// Print the token ledger of a run file
    TokenReport(TokenReportArgs),
    /// Generate a synthetic demo corpus
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    news: Option<PathBuf>,
    #[arg(long)]
    comments: Option<PathBuf>,
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long)]
    cascades: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    max_sentences: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    comments: PathBuf,
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Topic cluster count; defaults to ceil(sqrt(#train news))
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    per_topic: Option<usize>,
    #[arg(long)]
    wp: Option<f64>,
    /// Evidence subset size per persona group
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Restrict to influential users' high-engagement citing comments
    #[arg(long)]
    verifier: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// mock | remote
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
}

impl BackendArgs {
    fn build(
        &self,
        file: &BTreeMap<String, String>,
    ) -> Result<(Box<dyn DecisionBackend>, String), CliError> {
        let kind = resolve(self.backend.clone(), file, "backend", "mock".to_string())?;
        match kind.as_str() {
            "mock" => Ok((Box::new(MockBackend::new()), "mock".into())),
            "remote" => {
                let endpoint = resolve(self.endpoint.clone(), file, "endpoint", String::new())?;
                if endpoint.is_empty() {
                    return Err(CliError::Config("remote backend needs --endpoint".into()));
                }
                let config = RemoteBackendConfig {
                    endpoint_url: endpoint,
                    model: resolve(self.model.clone(), file, "model", "default".to_string())?,
                    api_key_env: resolve(
                        self.api_key_env.clone(),
                        file,
                        "api_key_env",
                        "EARLYCAST_API_KEY".to_string(),
                    )?,
                    ..RemoteBackendConfig::default()
                };
                Ok((Box::new(RemoteBackend::new(config)), "remote".into()))
            }
            other => Err(CliError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Embedding width for the deterministic hash provider
    #[arg(long)]
    dim: Option<usize>,
    /// JSON-over-HTTP embedding endpoint (hash provider when absent)
    #[arg(long)]
    embed_url: Option<String>,
    #[arg(long)]
    embed_key_env: Option<String>,
}

impl EmbedArgs {
    fn build(
        &self,
        file: &BTreeMap<String, String>,
    ) -> Result<(Box<dyn EmbeddingProvider>, usize), CliError> {
        let dim = resolve(self.dim, file, "dim", crate::embed::DEFAULT_DIM)?;
        match &self.embed_url {
            Some(url) => Ok((
                Box::new(RemoteEmbedder::new(url.clone(), dim, self.embed_key_env.clone())),
                dim,
            )),
            None => Ok((Box::new(HashEmbedder::new(dim)), dim)),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    personas: PathBuf,
    #[arg(long)]
    verifier_personas: Option<PathBuf>,
    /// Only simulate items marked hard in this routing file
    #[arg(long)]
    routes: Option<PathBuf>,
    /// train | val | test | all
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<u64>,
    /// Seed agents per cascade
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    verifier_fraction: Option<f64>,
    #[arg(long)]
    consolidation_period: Option<u64>,
    /// Comma-separated markers for the mock fact-check oracle
    #[arg(long)]
    flag_keywords: Option<String>,
    /// Broadcast warnings to the whole roster instead of neighbors
    #[arg(long)]
    warn_global: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Two files: the reference set then the comparison set (run files or
    /// bare cascade files)
    #[arg(long, num_args = 2)]
    runs: Vec<PathBuf>,
    /// table | json
    #[arg(long)]
    report: Option<String>,
    /// politifact-p | gossipcop-p (adds the published reference column)
    #[arg(long)]
    reference: Option<String>,
    /// total | in | out
    #[arg(long)]
    degree: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    lrec: Option<f64>,
    #[arg(long)]
    lskl: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    content_hidden: Option<usize>,
    #[arg(long)]
    graph_hidden: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    /// Use base-head predictions for items routed easy in this file
    #[arg(long)]
    routes: Option<PathBuf>,
    /// train | val | test
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Debug)]
struct RouteArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    /// start:stop:step, inclusive
    #[arg(long)]
    lrec_grid: Option<String>,
    #[arg(long)]
    lskl_grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    eta_instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TokenReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    news: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ambiguous: Option<f64>,
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Process entry: parses `std::env::args` and maps errors to exit codes
/// (2 for usage problems, 1 for pipeline failures).
pub fn run() -> i32 {
    dispatch(std::env::args().collect())
}

/// Testable dispatcher over an explicit argv.
pub fn dispatch(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    let command_line = argv.join(" ");
    match execute(cli, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli, command_line: &str) -> Result<i32, CliError> {
    let file = load_config_file(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file, command_line),
        Command::ExtractPersonas(args) => cmd_extract(args, &file, command_line),
        Command::Simulate(args) => cmd_simulate(args, &file, command_line),
        Command::Metrics(args) => cmd_metrics(args, &file, command_line),
        Command::Train(args) => cmd_train(args, &file, command_line),
        Command::Evaluate(args) => cmd_evaluate(args, &file, command_line),
        Command::Route(args) => cmd_route(args, &file, command_line),
        Command::Sweep(args) => cmd_sweep(args, &file, command_line),
        Command::TheoryCheck(args) => cmd_theory(args, &file, command_line),
        Command::TokenReport(args) => cmd_token_report(args, command_line),
        Command::Synth(args) => cmd_synth(args, &file, command_line),
    }
}

fn parse_split(raw: &str) -> Result<Option<Split>, CliError> {
    match raw {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(CliError::Config(format!("unknown split {other:?}"))),
    }
}

fn cmd_ingest(
    args: IngestArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps {
        max_sentences: resolve(args.max_sentences, file, "max_sentences", corpus::DEFAULT_MAX_SENTENCES)?,
        max_tokens: resolve(args.max_tokens, file, "max_tokens", corpus::DEFAULT_MAX_TOKENS)?,
    };
    let mut manifest = ManifestBuilder::new(command_line);
    manifest.set("max_sentences", caps.max_sentences);
    manifest.set("max_tokens", caps.max_tokens);
    for path in [&args.news, &args.comments, &args.users, &args.cascades].into_iter().flatten() {
        manifest.input(path);
    }
    let loaded = corpus::load_corpus(
        args.news.as_deref(),
        args.comments.as_deref(),
        args.users.as_deref(),
        args.cascades.as_deref(),
        caps,
    )?;
    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    if args.news.is_some() {
        let out = args.out_dir.join("news.jsonl");
        corpus::save_news(&out, &loaded.news)?;
        manifest.output(&out);
    }
    if args.comments.is_some() {
        let out = args.out_dir.join("comments.jsonl");
        corpus::save_comments(&out, &loaded.comments)?;
        manifest.output(&out);
    }
    if args.users.is_some() {
        let out = args.out_dir.join("users.jsonl");
        corpus::save_users(&out, &loaded.users)?;
        manifest.output(&out);
    }
    if args.cascades.is_some() {
        let out = args.out_dir.join("cascades.jsonl");
        corpus::save_cascades(&out, &loaded.cascades)?;
        manifest.output(&out);
    }
    println!(
        "ingested: {} news, {} comments, {} users, {} cascades",
        loaded.news.len(),
        loaded.comments.len(),
        loaded.users.len(),
        loaded.cascades.len()
    );
    manifest.finish()?;
    Ok(0)
}

fn cmd_extract(
    args: ExtractArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded = corpus::load_corpus(
        Some(&args.news),
        Some(&args.comments),
        args.users.as_deref(),
        None,
        caps,
    )?;
    let dim = resolve(args.dim, file, "dim", crate::embed::DEFAULT_DIM)?;
    let provider = HashEmbedder::new(dim);
    let (backend, backend_name) = args.backend.build(file)?;
    let cfg = ExtractionConfig {
        topics: args.topics,
        per_topic: resolve(args.per_topic, file, "per_topic", 5)?,
        w_p: resolve(args.wp, file, "wp", 0.5)?,
        subset_size: resolve(args.k, file, "k", 8)?,
        seed: resolve(args.seed, file, "seed", 17)?,
        ..ExtractionConfig::default()
    };
    let filter = if args.verifier {
        let mut f = VerifierFilter::default();
        f.allowed_authors = Some(corpus::top_influential(&loaded.users, 0.05));
        Some(f)
    } else {
        None
    };
    let mut ledger = TokenLedger::new();
    let pool =
        persona::extract_personas(&loaded, &provider, backend.as_ref(), &cfg, filter.as_ref(), &mut ledger)?;
    persona::save_personas(&args.out, &pool.profiles).map_err(io_err(&args.out))?;

    let mut manifest = ManifestBuilder::new(command_line);
    manifest.input(&args.news);
    manifest.input(&args.comments);
    if let Some(u) = &args.users {
        manifest.input(u);
    }
    manifest.output(&args.out);
    manifest.seed(cfg.seed);
    manifest.set("backend", backend_name);
    manifest.set("dim", dim);
    manifest.set("topics", cfg.topics.map(|t| t.to_string()).unwrap_or_else(|| "auto".into()));
    manifest.set("per_topic", cfg.per_topic);
    manifest.set("wp", cfg.w_p);
    manifest.set("k", cfg.subset_size);
    manifest.set("verifier", args.verifier);
    manifest.finish()?;
    println!(
        "extracted {} personas over {} topics ({} backend calls)",
        pool.profiles.len(),
        pool.topic_count,
        ledger.grand_total().calls
    );
    Ok(0)
}

fn read_routes(path: &Path) -> Result<BTreeMap<String, Route>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut routes = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("bad routing line: {e}")))?;
        let id = record["news_id"]
            .as_str()
            .ok_or_else(|| CliError::Config("routing line missing news_id".into()))?
            .to_string();
        let route: Route = serde_json::from_value(record["decision"].clone())
            .map_err(|e| CliError::Config(format!("bad routing decision: {e}")))?;
        routes.insert(id, route);
    }
    Ok(routes)
}

fn cmd_simulate(
    args: SimulateArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded =
        corpus::load_corpus(Some(&args.news), None, Some(&args.users), None, caps)?;
    let personas = persona::load_personas(&args.personas)?;
    let verifier_personas = match &args.verifier_personas {
        Some(p) => persona::load_personas(p)?,
        None => vec![],
    };
    let (provider, dim) = args.embed.build(file)?;
    let (backend, backend_name) = args.backend.build(file)?;

    let config = SimulationConfig {
        seed_count: resolve(args.seeds, file, "seeds", 1)?,
        max_depth: resolve(args.depth, file, "depth", 4)?,
        rng_seed: resolve(args.seed, file, "seed", 7)?,
        verifier_fraction: resolve(args.verifier_fraction, file, "verifier_fraction", 0.05)?,
        consolidation_period: resolve(args.consolidation_period, file, "consolidation_period", 10)?,
        warn_global: args.warn_global,
        fact_check_keywords: match resolve(
            args.flag_keywords.clone(),
            file,
            "flag_keywords",
            String::new(),
        )? {
            s if s.is_empty() => vec![],
            s => s.split(',').map(|k| k.trim().to_string()).collect(),
        },
        ..SimulationConfig::default()
    };

    let split = parse_split(&resolve(args.split.clone(), file, "split", "all".to_string())?)?;
    let routes = args.routes.as_deref().map(read_routes).transpose()?;
    let items: Vec<crate::corpus::NewsItem> = loaded
        .news
        .iter()
        .filter(|n| split.map_or(true, |s| n.split == s))
        .filter(|n| {
            routes
                .as_ref()
                .map_or(true, |r| r.get(&n.id).map_or(false, |route| route.is_hard()))
        })
        .cloned()
        .collect();

    let mut env = sim::init_environment(&loaded, &personas, &verifier_personas, provider.as_ref(), &config)?;
    let run = sim::run_batch(&mut env, &items, backend.as_ref(), &backend_name, provider.as_ref())?;
    sim::save_run(&args.out, &run)?;

    let mut manifest = ManifestBuilder::new(command_line);
    manifest.input(&args.news);
    manifest.input(&args.users);
    manifest.input(&args.personas);
    if let Some(p) = &args.verifier_personas {
        manifest.input(p);
    }
    if let Some(p) = &args.routes {
        manifest.input(p);
    }
    manifest.output(&args.out);
    manifest.seed(config.rng_seed);
    manifest.set("backend", &backend_name);
    manifest.set("dim", dim);
    manifest.set("depth", config.max_depth);
    manifest.set("seeds", config.seed_count);
    manifest.set("verifier_fraction", config.verifier_fraction);
    manifest.set("items", items.len());
    manifest.finish()?;
    println!(
        "simulated {} cascades over {} agents ({} tokens)",
        run.cascades.len(),
        run.roster.len(),
        run.ledger.grand_total().total()
    );
    Ok(0)
}

/// Loads either a run file or a bare cascade file.
fn load_cascade_set(
    path: &Path,
) -> Result<(Vec<crate::corpus::CascadeGraph>, std::collections::BTreeSet<String>), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let value: serde_json::Value =
        serde_json::from_str(first).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if value.get("kind").is_some() {
        let run = sim::load_run(path)?;
        let verifiers = run
            .roster
            .iter()
            .filter(|p| p.role == crate::agent::Role::Verifier)
            .map(|p| p.agent_id.clone())
            .collect();
        Ok((run.cascades, verifiers))
    } else {
        Ok((corpus::load_cascades(path)?, Default::default()))
    }
}

fn cmd_metrics(
    args: MetricsArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    if args.runs.len() != 2 {
        return Err(CliError::Config("metrics needs exactly two --runs files".into()));
    }
    let (real, real_verifiers) = load_cascade_set(&args.runs[0])?;
    let (virtual_, virtual_verifiers) = load_cascade_set(&args.runs[1])?;
    if real.is_empty() || virtual_.is_empty() {
        return Err(CliError::Config("both cascade sets must be nonempty".into()));
    }
    let convention = match resolve(args.degree.clone(), file, "degree", "total".to_string())?.as_str() {
        "total" => DegreeConvention::Total,
        "in" => DegreeConvention::In,
        "out" => DegreeConvention::Out,
        other => return Err(CliError::Config(format!("unknown degree convention {other:?}"))),
    };
    let reference = match resolve(args.reference.clone(), file, "reference", String::new())?.as_str() {
        "" => None,
        "politifact-p" => Some(&POLITIFACT_P_REAL),
        "gossipcop-p" => Some(&GOSSIPCOP_P_REAL),
        other => return Err(CliError::Config(format!("unknown reference {other:?}"))),
    };
    let real_stats = mean_stats(&real).expect("nonempty");
    let virtual_stats = mean_stats(&virtual_).expect("nonempty");
    let observed_jsd = degree_jsd(&real, &virtual_, convention);
    let report = compare_report(&real_stats, &virtual_stats, observed_jsd, reference);
    let behavior_real = behavior_report(&real, &real_verifiers);
    let behavior_virtual = behavior_report(&virtual_, &virtual_verifiers);

    let kind = resolve(args.report.clone(), file, "report", "table".to_string())?;
    let rendered = match kind.as_str() {
        "table" => {
            let stance = |b: &crate::metrics::BehaviorStats| match b.stance_pct {
                Some((p, n, g)) => format!("{p:.1} : {n:.1} : {g:.1}"),
                None => "no stance-labeled comments".into(),
            };
            format!(
                "{}\nbehavior (real)   : verifier mean {:.2}, stance {}\nbehavior (virtual): verifier mean {:.2}, stance {}\n",
                report.render_table(),
                behavior_real.verifier_mean,
                stance(&behavior_real),
                behavior_virtual.verifier_mean,
                stance(&behavior_virtual),
            )
        }
        "json" => serde_json::to_string_pretty(&serde_json::json!({
            "comparison": report,
            "behavior_real": behavior_real,
            "behavior_virtual": behavior_virtual,
        }))
        .expect("serializable"),
        other => return Err(CliError::Config(format!("unknown report kind {other:?}"))),
    };
    print!("{rendered}");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered).map_err(io_err(out))?;
        let mut manifest = ManifestBuilder::new(command_line);
        manifest.input(&args.runs[0]);
        manifest.input(&args.runs[1]);
        manifest.output(out);
        manifest.set("degree", format!("{convention:?}"));
        manifest.set("report", kind);
        manifest.finish()?;
    }
    Ok(0)
}

/// Builds detector examples by joining a corpus with a run file's
/// cascades and roster.
fn build_examples(
    loaded: &Corpus,
    run: &sim::SimulationRun,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<DetectorExample>, CliError> {
    let roster: BTreeMap<String, crate::agent::AgentProfile> =
        run.roster.iter().map(|p| (p.agent_id.clone(), p.clone())).collect();
    let mut examples = Vec::new();
    for cascade in &run.cascades {
        let Some(news) = loaded.news_by_id(&cascade.news_id) else { continue };
        examples.push(dmodel::build_example(news, cascade, &roster, provider)?);
    }
    Ok(examples)
}

fn detector_config_from(
    args: &TrainArgs,
    file: &BTreeMap<String, String>,
    dim: usize,
) -> Result<DetectorConfig, CliError> {
    Ok(DetectorConfig {
        embed_dim: dim,
        content_hidden: resolve(args.content_hidden, file, "content_hidden", 64)?,
        graph_hidden: resolve(args.graph_hidden, file, "graph_hidden", 128)?,
        latent_dim: resolve(args.latent, file, "latent", 32)?,
        lambda_rec: resolve(args.lrec, file, "lrec", 0.5)?,
        lambda_skl: resolve(args.lskl, file, "lskl", 0.4)?,
        learning_rate: resolve(args.lr, file, "lr", 1e-4)?,
        batch_size: resolve(args.batch, file, "batch", 32)?,
        max_epochs: resolve(args.epochs, file, "epochs", 100)?,
        patience: resolve(args.patience, file, "patience", 6)?,
        seed: resolve(args.seed, file, "seed", 13)?,
        ..DetectorConfig::default()
    })
}

fn cmd_train(
    args: TrainArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded = corpus::load_corpus(Some(&args.news), None, None, None, caps)?;
    let run = sim::load_run(&args.runs)?;
    let (provider, dim) = args.embed.build(file)?;
    let config = detector_config_from(&args, file, dim)?;
    let examples = build_examples(&loaded, &run, provider.as_ref())?;
    let outcome = dmodel::train(&config, &examples)?;
    outcome.model.save(&args.out)?;

    let val = dmodel::evaluate(&outcome.model, &examples, Split::Val)?;
    println!(
        "trained on {} examples; best epoch {}; val accuracy {:.3} over {}",
        examples.iter().filter(|e| e.split == Split::Train).count(),
        outcome.best_epoch,
        val.accuracy,
        val.n
    );

    let mut manifest = ManifestBuilder::new(command_line);
    manifest.input(&args.news);
    manifest.input(&args.runs);
    manifest.output(&args.out);
    manifest.seed(config.seed);
    manifest.set("dim", dim);
    manifest.set("lrec", config.lambda_rec);
    manifest.set("lskl", config.lambda_skl);
    manifest.set("lr", config.learning_rate);
    manifest.set("batch", config.batch_size);
    manifest.set("epochs", config.max_epochs);
    manifest.set("patience", config.patience);
    manifest.finish()?;
    Ok(0)
}

fn cmd_evaluate(
    args: EvaluateArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded = corpus::load_corpus(Some(&args.news), None, None, None, caps)?;
    let run = sim::load_run(&args.runs)?;
    let (provider, _) = args.embed.build(file)?;
    let model = DetectorModel::load(&args.checkpoint)?;
    let split = parse_split(&resolve(args.split.clone(), file, "split", "test".to_string())?)?
        .ok_or_else(|| CliError::Config("evaluate needs a concrete split".into()))?;
    let examples = build_examples(&loaded, &run, provider.as_ref())?;
    let by_id: BTreeMap<&str, &DetectorExample> =
        examples.iter().map(|e| (e.news_id.as_str(), e)).collect();

    let routes = args.routes.as_deref().map(read_routes).transpose()?;
    let mut predictions = Vec::new();
    let mut easy = 0usize;
    let mut hard = 0usize;
    for news in loaded.news.iter().filter(|n| n.split == split) {
        let Some(label) = news.label else { continue };
        match routes.as_ref().and_then(|r| r.get(&news.id)) {
            Some(Route::Easy { predicted_fake, .. }) => {
                easy += 1;
                predictions.push((if *predicted_fake { 1.0 } else { 0.0 }, label));
            }
            _ => {
                let Some(example) = by_id.get(news.id.as_str()) else { continue };
                hard += 1;
                predictions.push((model.p_fake(example)?, label));
            }
        }
    }
    let metrics = dmodel::metrics_from_predictions(&predictions);
    let rendered = serde_json::to_string_pretty(&serde_json::json!({
        "split": format!("{split:?}").to_lowercase(),
        "easy": easy,
        "hard": hard,
        "metrics": metrics,
    }))
    .expect("serializable");
    println!("{rendered}");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered).map_err(io_err(out))?;
        let mut manifest = ManifestBuilder::new(command_line);
        manifest.input(&args.checkpoint);
        manifest.input(&args.news);
        manifest.input(&args.runs);
        if let Some(r) = &args.routes {
            manifest.input(r);
        }
        manifest.output(out);
        manifest.finish()?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct RouteRecord {
    news_id: String,
    split: String,
    p_fake: f64,
    decision: Route,
}

fn cmd_route(
    args: RouteArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded = corpus::load_corpus(Some(&args.news), None, None, None, caps)?;
    let (provider, dim) = args.embed.build(file)?;
    let router_cfg = RouterConfig {
        tau: resolve(args.tau, file, "tau", 0.8)?,
        epochs: resolve(args.epochs, file, "router_epochs", 300)?,
        seed: resolve(args.seed, file, "seed", 29)?,
        ..RouterConfig::default()
    };
    router_cfg.validate()?;

    let mut train_embeddings = Vec::new();
    let mut train_labels = Vec::new();
    for n in loaded.news.iter().filter(|n| n.split == Split::Train) {
        let Some(label) = n.label else { continue };
        train_embeddings.push(provider.embed(&n.text)?);
        train_labels.push(label);
    }
    let head = BaseClassifier::train(&train_embeddings, &train_labels, &router_cfg)?;

    let mut lines = String::new();
    let mut easy = 0usize;
    let mut hard = 0usize;
    for n in &loaded.news {
        let p_fake = head.p_fake(&provider.embed(&n.text)?);
        let decision = route_item(p_fake, router_cfg.tau);
        if decision.is_hard() {
            hard += 1;
        } else {
            easy += 1;
        }
        let record = RouteRecord {
            news_id: n.id.clone(),
            split: format!("{:?}", n.split).to_lowercase(),
            p_fake,
            decision,
        };
        lines.push_str(&serde_json::to_string(&record).expect("serializable"));
        lines.push('\n');
    }
    std::fs::write(&args.out, &lines).map_err(io_err(&args.out))?;
    println!("routed {} items: {easy} easy, {hard} hard (tau {})", easy + hard, router_cfg.tau);

    let mut manifest = ManifestBuilder::new(command_line);
    manifest.input(&args.news);
    manifest.output(&args.out);
    manifest.seed(router_cfg.seed);
    manifest.set("tau", router_cfg.tau);
    manifest.set("dim", dim);
    manifest.set("router_epochs", router_cfg.epochs);
    manifest.finish()?;
    Ok(0)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!("grid must be start:stop:step, got {raw:?}")));
    }
    let start: f64 = parts[0].parse().map_err(|_| CliError::Config(format!("bad grid start {raw:?}")))?;
    let stop: f64 = parts[1].parse().map_err(|_| CliError::Config(format!("bad grid stop {raw:?}")))?;
    let step: f64 = parts[2].parse().map_err(|_| CliError::Config(format!("bad grid step {raw:?}")))?;
    if step <= 0.0 || stop < start {
        return Err(CliError::Config(format!("degenerate grid {raw:?}")));
    }
    let mut values = Vec::new();
    let mut v = start;
    while v <= stop + 1e-9 {
        values.push((v * 1e9).round() / 1e9);
        v += step;
    }
    Ok(values)
}

fn cmd_sweep(
    args: SweepArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let caps = TruncationCaps::default();
    let loaded = corpus::load_corpus(Some(&args.news), None, None, None, caps)?;
    let run = sim::load_run(&args.runs)?;
    let (provider, dim) = args.embed.build(file)?;
    let examples = build_examples(&loaded, &run, provider.as_ref())?;
    let lrec_grid = parse_grid(&resolve(args.lrec_grid.clone(), file, "lrec_grid", "0.1:1.0:0.1".to_string())?)?;
    let lskl_grid = parse_grid(&resolve(args.lskl_grid.clone(), file, "lskl_grid", "0.1:1.0:0.1".to_string())?)?;
    let seed = resolve(args.seed, file, "seed", 13)?;
    let epochs = resolve(args.epochs, file, "epochs", 30)?;

    #[derive(Serialize)]
    struct SweepCell {
        lrec: f64,
        lskl: f64,
        val_accuracy: f64,
        test_accuracy: f64,
    }
    let mut cells = Vec::new();
    for &lrec in &lrec_grid {
        for &lskl in &lskl_grid {
            let config = DetectorConfig {
                embed_dim: dim,
                content_hidden: resolve(None, file, "content_hidden", 16)?,
                graph_hidden: resolve(None, file, "graph_hidden", 16)?,
                latent_dim: resolve(None, file, "latent", 8)?,
                lambda_rec: lrec,
                lambda_skl: lskl,
                max_epochs: epochs,
                learning_rate: resolve(None, file, "lr", 1e-3)?,
                seed,
                ..DetectorConfig::default()
            };
            let outcome = dmodel::train(&config, &examples)?;
            let val = dmodel::evaluate(&outcome.model, &examples, Split::Val)?;
            let test = dmodel::evaluate(&outcome.model, &examples, Split::Test)?;
            cells.push(SweepCell { lrec, lskl, val_accuracy: val.accuracy, test_accuracy: test.accuracy });
        }
    }
    let rendered = serde_json::to_string_pretty(&cells).expect("serializable");
    std::fs::write(&args.out, &rendered).map_err(io_err(&args.out))?;
    println!("swept {} cells -> {}", cells.len(), args.out.display());

    let mut manifest = ManifestBuilder::new(command_line);
    manifest.input(&args.news);
    manifest.input(&args.runs);
    manifest.output(&args.out);
    manifest.seed(seed);
    manifest.set("lrec_grid", lrec_grid.len());
    manifest.set("lskl_grid", lskl_grid.len());
    manifest.set("epochs", epochs);
    manifest.finish()?;
    Ok(0)
}

fn cmd_theory(
    args: TheoryArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let trials = resolve(args.trials, file, "trials", 1000)?;
    let eta_instances = resolve(args.eta_instances, file, "eta_instances", 50)?;
    let seed = resolve(args.seed, file, "seed", 42)?;
    let report = theory::run_theory_harness(trials, eta_instances, seed);
    print!("{}", report.render());
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report).expect("serializable"))
            .map_err(io_err(out))?;
        let mut manifest = ManifestBuilder::new(command_line);
        manifest.output(out);
        manifest.seed(seed);
        manifest.set("trials", trials);
        manifest.set("eta_instances", eta_instances);
        manifest.finish()?;
    }
    if report.passed {
        Ok(0)
    } else {
        Err(CliError::TheoryFailed(report.render()))
    }
}

fn cmd_token_report(args: TokenReportArgs, command_line: &str) -> Result<i32, CliError> {
    let run = sim::load_run(&args.run)?;
    let rendered = run.ledger.report();
    print!("{rendered}");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered).map_err(io_err(out))?;
        let mut manifest = ManifestBuilder::new(command_line);
        manifest.input(&args.run);
        manifest.output(out);
        manifest.finish()?;
    }
    Ok(0)
}

fn cmd_synth(
    args: SynthArgs,
    file: &BTreeMap<String, String>,
    command_line: &str,
) -> Result<i32, CliError> {
    let cfg = crate::synth::SynthConfig {
        news_count: resolve(args.news, file, "news", 64)?,
        user_count: resolve(args.users, file, "users", 48)?,
        ambiguous_fraction: resolve(args.ambiguous, file, "ambiguous", 0.4)?,
        seed: resolve(args.seed, file, "seed", 2024)?,
        ..crate::synth::SynthConfig::default()
    };
    let corpus = crate::synth::synthetic_corpus(&cfg);
    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let news = args.out_dir.join("news.jsonl");
    let comments = args.out_dir.join("comments.jsonl");
    let users = args.out_dir.join("users.jsonl");
    corpus::save_news(&news, &corpus.news)?;
    corpus::save_comments(&comments, &corpus.comments)?;
    corpus::save_users(&users, &corpus.users)?;
    println!(
        "wrote {} news / {} comments / {} users under {}",
        corpus.news.len(),
        corpus.comments.len(),
        corpus.users.len(),
        args.out_dir.display()
    );
    let mut manifest = ManifestBuilder::new(command_line);
    manifest.output(&news);
    manifest.output(&comments);
    manifest.output(&users);
    manifest.seed(cfg.seed);
    manifest.set("news", cfg.news_count);
    manifest.set("users", cfg.user_count);
    manifest.set("ambiguous", cfg.ambiguous_fraction);
    manifest.finish()?;
    Ok(0)
}

// Re-exported for integration tests that drive pipelines in-process.
pub use dmodel::metrics_from_predictions;
