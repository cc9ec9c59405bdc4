mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use condor_core::canonical;
use condor_core::datastore::{self, DatastoreError};
use condor_core::evalnorm::{self, Benchmark, EvalError, Report, ScoreInput};
use condor_core::gateway::{ChatBackend, Gateway, GatewayError, MockBackend, OpenAiBackend};
use condor_core::pipeline::{self, Engine, PipelineError, RefineOptions, RunManifest, SynthOptions};
use condor_core::prompts::{Difficulty, ExemplarBank, ExemplarBanks, PromptBook, PromptError};
use condor_core::wkt::{ExpandOptions, KnowledgeTree, RootSpec, ScrapedTag, WktError};
use condor_core::Clock;
use serde::Serialize;

use config::PipelineConfig;

/// Synthesize and refine instruction-tuning datasets from a tag tree.
///
/// Exit codes: 0 success, 2 configuration or schema error, 3 backend error,
/// 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "condor", version)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Globals {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the work plan and exit without contacting the backend.
    #[arg(long, global = true)]
    dry_run: bool,
    /// OpenAI-compatible endpoint; overrides the config file.
    #[arg(long, global = true, value_name = "URL")]
    backend_url: Option<String>,
    /// Use the deterministic offline backend.
    #[arg(long, global = true)]
    mock: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tag tree commands.
    Wkt {
        #[command(subcommand)]
        command: WktCommand,
    },
    /// Generate questions and answers for sampled tags (void stage).
    Synthesize(SynthArgs),
    /// Critique and rewrite the answers of a void dataset (refine stage).
    Refine(RefineArgs),
    /// Uniformly subsample a dataset.
    Sample(SampleArgs),
    /// Normalize raw benchmark scores and average them.
    Report(ReportArgs),
    /// Summarize a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Subcommand)]
enum WktCommand {
    /// Build a tree from a roots file, expand it and import scraped tags.
    Build(WktBuildArgs),
}

#[derive(Debug, Args)]
struct WktBuildArgs {
    /// JSONL roots file.
    #[arg(long)]
    roots: Option<PathBuf>,
    /// JSONL scraped-tag file; repeatable.
    #[arg(long)]
    scraped: Vec<PathBuf>,
    /// Expansion levels below the current leaves.
    #[arg(long)]
    depth: Option<u32>,
    /// Subtopics requested per expanded node.
    #[arg(long)]
    fanout: Option<usize>,
    /// Tree JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Tree JSON.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Void dataset to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tag_proportion: Option<f64>,
    /// Number of tasks, taken in inclusion order.
    #[arg(long)]
    tasks: Option<usize>,
    /// Comma-separated subset of easy, medium, hard.
    #[arg(long, value_delimiter = ',')]
    difficulties: Vec<Difficulty>,
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Void dataset.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Refine dataset to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<u32>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction in (0, 1].
    #[arg(long)]
    proportion: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON score object or array of score objects.
    #[arg(long)]
    input: PathBuf,
    /// Also aggregate the eight capability dimensions from sub-scores.
    #[arg(long)]
    dimensions: bool,
    /// Print a two-decimal text table instead of JSON.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Backend(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Backend(m) => write!(f, "backend error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<DatastoreError> for Failure {
    fn from(e: DatastoreError) -> Self {
        match e {
            DatastoreError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<WktError> for Failure {
    fn from(e: WktError) -> Self {
        match e {
            WktError::Backend(_) => Failure::Backend(e.to_string()),
            WktError::Prompt(p) => p.into(),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Tree(t) => t.into(),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// Gateway error classes as recorded in run manifests.
const BACKEND_CLASSES: [&str; 3] = ["Exhausted", "Rejected", "Timeout"];

struct Ctx {
    cli: Globals,
    cfg: PipelineConfig,
}

impl Ctx {
    fn mock(&self) -> bool {
        self.cli.mock || self.cfg.backend.mock
    }

    fn seed(&self) -> Result<u64> {
        self.cli
            .seed
            .or(self.cfg.seed)
            .ok_or_else(|| Failure::Config("a seed is required: pass --seed or set `seed` in the config".into()))
    }

    fn clock(&self) -> Result<Clock> {
        match &self.cfg.created_at {
            Some(ts) => Clock::parse_fixed(ts).map_err(|e| Failure::Config(format!("created_at: {e}"))),
            None if self.mock() => Ok(Clock::epoch()),
            None => Ok(Clock::System),
        }
    }

    fn prompts(&self) -> Result<PromptBook> {
        match &self.cfg.synth.templates_dir {
            Some(dir) => Ok(PromptBook::load_dir(dir)?),
            None => Ok(PromptBook::builtin()),
        }
    }

    fn exemplars(&self) -> Result<ExemplarBanks> {
        let mut banks = ExemplarBanks::default();
        if let Some(p) = &self.cfg.synth.exemplars_en {
            banks.en = ExemplarBank::load(&require_file(p)?)?;
        }
        if let Some(p) = &self.cfg.synth.exemplars_zh {
            banks.zh = ExemplarBank::load(&require_file(p)?)?;
        }
        Ok(banks)
    }

    fn gateway(&self, prompts: &PromptBook) -> Result<Gateway> {
        let backend: Arc<dyn ChatBackend> = if self.mock() {
            Arc::new(MockBackend::new().with_prompts(prompts))
        } else {
            let url = self
                .cli
                .backend_url
                .as_deref()
                .or(self.cfg.backend.base_url.as_deref())
                .ok_or_else(|| {
                    Failure::Config("no backend: pass --backend-url or --mock, or set backend.base_url".into())
                })?;
            Arc::new(OpenAiBackend::from_env(url)?)
        };
        Ok(Gateway::new(backend, self.cfg.backend.policy.clone())?)
    }
}

fn require_file(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path.to_owned())
    } else {
        Err(Failure::Config(format!("input file {} does not exist", path.display())))
    }
}

fn pick(flag: Option<PathBuf>, cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| Failure::Config(format!("no {what} path: pass it as a flag or set it in the config")))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

fn emit<T: Serialize>(value: &T) {
    let mut text = canonical::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_stdout(&text);
}

/// A closed reader (e.g. `| head`) is not an error worth reporting.
fn write_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

async fn wkt_build(ctx: &Ctx, args: WktBuildArgs) -> Result<()> {
    let cfg = &ctx.cfg.wkt;
    let roots = require_file(&pick(args.roots, &cfg.roots, "roots")?)?;
    let scraped_files = if args.scraped.is_empty() { cfg.scraped.clone() } else { args.scraped };
    let scraped_files = scraped_files.iter().map(|p| require_file(p)).collect::<Result<Vec<_>>>()?;
    let depth = args.depth.unwrap_or(cfg.depth);
    let fanout = args.fanout.unwrap_or(cfg.fanout);
    if fanout == 0 {
        return Err(Failure::Config("fanout must be at least 1".into()));
    }
    let clock = ctx.clock()?;

    let specs: Vec<RootSpec> = datastore::read_jsonl(&roots)?;
    let mut tree = KnowledgeTree::from_root_specs(&specs, &clock)?;
    let mut scraped: Vec<ScrapedTag> = Vec::new();
    for f in &scraped_files {
        scraped.extend(datastore::read_jsonl::<ScrapedTag>(f)?);
    }

    if ctx.cli.dry_run {
        #[derive(Serialize)]
        struct Plan {
            seeded_nodes: usize,
            leaves: usize,
            depth: u32,
            fanout: usize,
            max_expanded_nodes: u64,
            max_requests: u64,
            scraped_tags: usize,
        }
        let mut frontier = tree.leaves().len() as u64;
        let (mut requests, mut added) = (0u64, 0u64);
        for _ in 0..depth {
            requests = requests.saturating_add(frontier);
            frontier = frontier.saturating_mul(fanout as u64);
            added = added.saturating_add(frontier);
        }
        emit(&Plan {
            seeded_nodes: tree.len(),
            leaves: tree.leaves().len(),
            depth,
            fanout,
            max_expanded_nodes: added,
            max_requests: requests,
            scraped_tags: scraped.len(),
        });
        return Ok(());
    }

    let out = pick(args.out, &ctx.cfg.output.tree, "output tree")?;
    if depth > 0 {
        let prompts = ctx.prompts()?;
        let gateway = ctx.gateway(&prompts)?;
        let opts = ExpandOptions {
            fanout,
            model_id: ctx.cfg.backend.model_id.clone(),
            temperature: ctx.cfg.backend.temperature,
            max_tokens: ctx.cfg.backend.max_tokens,
        };
        tree = tree.grow(depth, &gateway, &prompts, &opts, &clock).await?;
    }
    if !scraped.is_empty() {
        tree = tree.import_scraped(&scraped, &clock)?;
    }
    datastore::save_tree(&tree, &out)?;
    tracing::info!(path = %out.display(), nodes = tree.len(), "tree written");

    #[derive(Serialize)]
    struct Summary {
        path: PathBuf,
        version: u64,
        content_hash: String,
        counts: condor_core::wkt::TreeCounts,
    }
    emit(&Summary {
        path: out,
        version: tree.version(),
        content_hash: tree.content_hash(),
        counts: tree.counts(),
    });
    Ok(())
}

fn write_run(out: &Path, run: &pipeline::RunOutput) -> Result<datastore::DatasetHandle> {
    let handle = datastore::write_records(&run.records, out)?;
    datastore::write_json(&run.manifest, &sidecar(out, ".manifest.json"))?;
    if !run.rounds.is_empty() {
        let lines: Vec<String> = run
            .rounds
            .iter()
            .map(|r| canonical::to_string(r).expect("round serializes"))
            .collect();
        datastore::write_lines(&lines, &sidecar(out, ".rounds.jsonl"))?;
    }
    Ok(handle)
}

/// A run where nothing came out and every failure was the backend's is a
/// backend error, even though the per-unit failures are already recorded.
fn check_backend(manifest: &RunManifest) -> Result<()> {
    if manifest.attempted > 0
        && manifest.emitted == 0
        && manifest.failures.keys().all(|k| BACKEND_CLASSES.contains(&k.as_str()))
    {
        return Err(Failure::Backend(format!(
            "all {} units failed: {:?}",
            manifest.attempted, manifest.failures
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    dataset: &'a datastore::DatasetHandle,
    attempted: u64,
    emitted: u64,
    failures: &'a BTreeMap<String, u64>,
    requests: u64,
}

fn summarize(handle: &datastore::DatasetHandle, m: &RunManifest) {
    emit(&RunSummary {
        dataset: handle,
        attempted: m.attempted,
        emitted: m.emitted,
        failures: &m.failures,
        requests: m.requests,
    });
}

async fn synthesize(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let tree_path = require_file(&pick(args.tree, &cfg.output.tree, "tree")?)?;
    let tree = datastore::load_tree(&tree_path)?;
    let k = args.tasks.unwrap_or(cfg.synth.tasks);
    let tasks = pipeline::task_subset(k)?;
    let difficulties = if args.difficulties.is_empty() { cfg.synth.difficulties.clone() } else { args.difficulties };
    let opts = SynthOptions {
        seed: ctx.seed()?,
        tag_proportion: args.tag_proportion.unwrap_or(cfg.synth.tag_proportion),
        tasks,
        difficulties,
        model_id: cfg.backend.model_id.clone(),
        temperature: cfg.backend.temperature,
        max_tokens: cfg.backend.max_tokens,
    };
    if ctx.cli.dry_run {
        emit(&pipeline::plan_void(&tree, &opts)?);
        return Ok(());
    }
    let out = pick(args.out, &cfg.output.void, "output dataset")?;
    let prompts = ctx.prompts()?;
    let exemplars = ctx.exemplars()?;
    let gateway = ctx.gateway(&prompts)?;
    let engine = Engine { gateway: &gateway, prompts: &prompts, exemplars: &exemplars, clock: ctx.clock()? };
    let run = engine.synthesize_void(&tree, &opts).await?;
    let handle = write_run(&out, &run)?;
    summarize(&handle, &run.manifest);
    check_backend(&run.manifest)
}

async fn refine(ctx: &Ctx, args: RefineArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    if !cfg.refine.enabled {
        return Err(Failure::Config("refinement is disabled by refine.enabled = false".into()));
    }
    let input = require_file(&pick(args.input, &cfg.output.void, "input dataset")?)?;
    let rounds = args.rounds.unwrap_or(cfg.refine.rounds);
    if rounds == 0 {
        return Err(Failure::Config("rounds must be at least 1".into()));
    }
    let records = datastore::read_records(&input)?;
    if let Some(r) = records.iter().find(|r| r.stage != pipeline::Stage::Void) {
        return Err(PipelineError::StageViolation { id: r.id.clone(), stage: r.stage }.into());
    }
    if ctx.cli.dry_run {
        emit(&pipeline::plan_refine(records.len(), rounds));
        return Ok(());
    }
    let out = pick(args.out, &cfg.output.refine, "output dataset")?;
    let opts = RefineOptions {
        rounds,
        model_id: cfg.backend.model_id.clone(),
        temperature: cfg.backend.temperature,
        max_tokens: cfg.backend.max_tokens,
    };
    let prompts = ctx.prompts()?;
    let exemplars = ctx.exemplars()?;
    let gateway = ctx.gateway(&prompts)?;
    let engine = Engine { gateway: &gateway, prompts: &prompts, exemplars: &exemplars, clock: ctx.clock()? };
    let run = engine.refine(&records, &opts).await?;
    let handle = write_run(&out, &run)?;
    summarize(&handle, &run.manifest);
    check_backend(&run.manifest)
}

fn sample(ctx: &Ctx, args: SampleArgs) -> Result<()> {
    let input = require_file(&args.input)?;
    let seed = ctx.seed()?;
    let rows = datastore::read_records_with_lines(&input)?;
    let picked = pipeline::sample_indices(rows.len(), args.proportion, seed)?;
    if ctx.cli.dry_run {
        emit(&serde_json::json!({ "input": rows.len(), "output": picked.len() }));
        return Ok(());
    }
    let lines: Vec<String> = picked.into_iter().map(|i| rows[i].0.clone()).collect();
    datastore::write_lines(&lines, &args.out)?;
    emit(&datastore::inspect(&args.out)?);
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let path = require_file(&args.input)?;
    let raw = std::fs::read_to_string(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let many = value.is_array();
    let inputs: Vec<ScoreInput> = if many {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|one| vec![one])
    }
    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;

    let reports = inputs
        .iter()
        .map(|i| {
            evalnorm::build_report(i, args.dimensions)
                .map_err(|e| Failure::Config(format!("{}: {e}", i.model)))
        })
        .collect::<Result<Vec<Report>>>()?;

    if args.table {
        write_stdout(&render_table(&reports));
    } else if many {
        emit(&reports);
    } else {
        emit(&reports[0]);
    }
    Ok(())
}

fn render_table(reports: &[Report]) -> String {
    let width = reports.iter().map(|r| r.model.chars().count()).max().unwrap_or(5).max(5);
    let mut head = format!("{:<width$}", "model");
    for b in Benchmark::ALL {
        head.push_str(&format!(" {:>14}", b.name()));
    }
    head.push_str(&format!(" {:>8} {:>9} {:>8}", "Average", "Reference", "Residual"));
    let dims = reports.iter().any(|r| r.dimensions.is_some());
    if dims {
        for d in evalnorm::Dimension::ALL {
            head.push_str(&format!(" {:>9}", d.name()));
        }
    }
    let mut out = head + "\n";
    let cell = |v: Option<f64>, w: usize| match v {
        Some(x) => format!(" {:>w$.2}", evalnorm::round2(x)),
        None => format!(" {:>w$}", "-"),
    };
    for r in reports {
        let mut line = format!("{:<width$}", r.model);
        for b in Benchmark::ALL {
            line.push_str(&cell(r.normalized.get(&b).copied(), 14));
        }
        line.push_str(&cell(Some(r.average), 8));
        line.push_str(&cell(r.reference_average, 9));
        line.push_str(&cell(r.residual, 8));
        if dims {
            for d in evalnorm::Dimension::ALL {
                line.push_str(&cell(r.dimensions.as_ref().and_then(|m| m.get(&d).copied()), 9));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn stats(args: StatsArgs) -> Result<()> {
    let input = require_file(&args.input)?;
    emit(&datastore::stats(&input)?);
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.globals.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::Config)?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx { cli: cli.globals, cfg };
    match cli.command {
        Command::Wkt { command: WktCommand::Build(a) } => wkt_build(&ctx, a).await,
        Command::Synthesize(a) => synthesize(&ctx, a).await,
        Command::Refine(a) => refine(&ctx, a).await,
        Command::Sample(a) => sample(&ctx, a),
        Command::Report(a) => report(a),
        Command::Stats(a) => stats(a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("condor: cannot start runtime: {e}");
            return ExitCode::from(4);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("condor: {e}");
            ExitCode::from(e.code())
        }
    }
}
