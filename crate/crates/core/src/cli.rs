//! The `factcheck` command line. Exit codes: 0 success, 1 invalid
//! arguments or configuration, 2 a stage failed while running.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{load_normalized, split_stats, write_normalized, Claim, Dataset, Partition};
use crate::eval::{evaluate, render_confusion, render_results};
use crate::evidence::{FilterPolicy, Retriever, RetrieverConfig, SearchCache, DEFAULT_BLOCKED_DOMAINS, DEFAULT_MAX_RESULTS};
use crate::inference::{
    predict_prompts, write_verdicts, Backend, BatchOptions, DecodeParams, HttpBackend, HttpBackendConfig, MockBackend,
    PromptJob,
};
use crate::lora::demo::{run_demo_with_model, DemoConfig};
use crate::lora::{save_checkpoint, TrainConfig};
use crate::pipeline::{
    self, load_claims, read_bundles, retrieve_bundles, select_partition, write_bundles, PipelineConfig, PipelineError,
    RunOptions,
};
use crate::promptgen::{build_example, export_training_set, read_examples, write_examples, PromptTemplate, TemplateOverrides};

#[derive(Debug, Parser)]
#[command(name = "factcheck", version, about = "Evidence-augmented claim verification and a low-rank adaptation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a raw corpus and write it in the normalized record-per-line form.
    Ingest(IngestArgs),
    /// Search for evidence for each claim and filter it.
    Retrieve(RetrieveArgs),
    /// Assemble instruction/evidence/input prompts.
    BuildPrompts(BuildPromptsArgs),
    /// Export instruction-tuning records for one partition.
    ExportTrain(ExportTrainArgs),
    /// Generate and parse verdicts for assembled prompts.
    Predict(PredictArgs),
    /// Score verdicts against gold labels.
    Evaluate(EvaluateArgs),
    /// Run every stage from a config file.
    Run(RunArgs),
    /// Train rank-r adapters on a synthetic problem and verify the math.
    LoraDemo(LoraDemoArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub dataset: Dataset,
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Extra domain to drop (repeatable).
    #[arg(long = "block", value_name = "DOMAIN")]
    pub block: Vec<String>,
    /// Don't drop the default fact-checking sites.
    #[arg(long)]
    pub no_default_blocklist: bool,
    /// Keep results published after the claim date.
    #[arg(long)]
    pub no_date_ceiling: bool,
    /// Drop results without a publication date.
    #[arg(long)]
    pub drop_undated: bool,
}

impl FilterArgs {
    fn policy(&self) -> FilterPolicy {
        let mut policy = FilterPolicy {
            blocked_domains: Default::default(),
            enforce_date_ceiling: !self.no_date_ceiling,
            drop_undated: self.drop_undated,
        };
        if !self.no_default_blocklist {
            policy = policy.with_blocked(DEFAULT_BLOCKED_DOMAINS);
        }
        policy.with_blocked(&self.block)
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Normalized claims.
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_RESULTS)]
    pub max_results: usize,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Fail on a cache miss instead of calling the provider.
    #[arg(long)]
    pub offline: bool,
    /// `google`, or `fixture` together with --fixture.
    #[arg(long, default_value = "google")]
    pub provider: String,
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Dataset assumed for records that don't name one.
    #[arg(long, default_value = "rawfc")]
    pub dataset: Dataset,
    /// train, validation, test or all.
    #[arg(long, default_value = "all")]
    pub partition: String,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct BuildPromptsArgs {
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    /// TOML overrides for the prompt template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "rawfc")]
    pub dataset: Dataset,
    #[arg(long, default_value = "all")]
    pub partition: String,
}

#[derive(Debug, Args)]
pub struct ExportTrainArgs {
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub partition: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "rawfc")]
    pub dataset: Dataset,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    /// `mock` or `http`.
    #[arg(long)]
    pub backend: String,
    /// Lookup file for the mock backend.
    #[arg(long)]
    pub mock_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub model: Option<String>,
    /// Completions base URL; the environment variable takes precedence.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub max_new_tokens: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long)]
    pub fail_fast: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Normalized claims holding the gold labels.
    #[arg(long)]
    pub golds: PathBuf,
    #[arg(long)]
    pub taxonomy: Dataset,
    #[arg(long)]
    pub out: PathBuf,
    /// Print the published comparison rows alongside.
    #[arg(long)]
    pub with_reference: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub claims: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub mock_file: Option<PathBuf>,
    #[arg(long)]
    pub with_reference: bool,
    /// Re-execute stages whose stamps match.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct LoraDemoArgs {
    #[arg(long, default_value_t = DemoConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = DemoConfig::default().rank)]
    pub rank: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr0)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().dropout_p)]
    pub dropout: f64,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    pub json: bool,
    /// Save the trained model (base and adapters) to this directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Failed(_) => 2,
            CliError::Pipeline(e) => e.exit_code(),
        }
    }
}

fn invalid(m: impl ToString) -> CliError {
    CliError::Invalid(m.to_string())
}

fn failed(m: impl ToString) -> CliError {
    CliError::Failed(m.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn parse_partition(raw: &str) -> Result<Option<Partition>, CliError> {
    if raw.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    raw.parse::<Partition>().map(Some).map_err(invalid)
}

fn io(stream: std::io::Result<()>) -> Result<(), CliError> {
    stream.map_err(|e| failed(format!("cannot write output: {e}")))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(a, out),
        Command::Retrieve(a) => retrieve(a, out),
        Command::BuildPrompts(a) => build_prompts(a, out),
        Command::ExportTrain(a) => export_train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Run(a) => run(a, out),
        Command::LoraDemo(a) => lora_demo(a, out),
    }
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.path, "corpus")?;
    let split = load_claims(a.dataset, &a.path).map_err(failed)?;
    write_normalized(&split, &a.out).map_err(failed)?;
    let stats = split_stats(&split);
    io(writeln!(out, "{} claims ({}) -> {}", stats.total(), a.dataset, a.out.display()))?;
    for (name, p) in [("train", &stats.train), ("validation", &stats.validation), ("test", &stats.test)] {
        let labels: Vec<String> = p.per_label.iter().map(|(l, n)| format!("{l}={n}")).collect();
        io(writeln!(out, "  {name:<10} {:>6}  {}", p.total, labels.join(" ")))?;
    }
    Ok(())
}

fn load_selected(path: &Path, dataset: Dataset, partition: &str) -> Result<Vec<Claim>, CliError> {
    require_file(path, "claims file")?;
    let partition = parse_partition(partition)?;
    let split = load_normalized(path, dataset).map_err(failed)?;
    Ok(select_partition(&split, partition))
}

fn retrieve(a: RetrieveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let claims = load_selected(&a.claims, a.dataset, &a.partition)?;
    if a.max_results == 0 {
        return Err(invalid("--max-results must be at least 1"));
    }
    if a.offline && a.cache_dir.is_none() {
        return Err(invalid("--offline needs --cache-dir"));
    }
    let provider: Box<dyn crate::evidence::SearchProvider> = match a.provider.as_str() {
        "fixture" => {
            let path = a.fixture.as_deref().ok_or_else(|| invalid("--provider fixture needs --fixture"))?;
            require_file(path, "fixture")?;
            Box::new(crate::evidence::FixtureProvider::from_file(path).map_err(failed)?)
        }
        "google" => {
            let cfg = crate::evidence::GoogleProviderConfig {
                engine_id: std::env::var(pipeline::SEARCH_CX_ENV).unwrap_or_default(),
                ..Default::default()
            };
            Box::new(crate::evidence::GoogleProvider::from_env(cfg).map_err(invalid)?)
        }
        other => return Err(invalid(format!("unknown provider `{other}` (expected google or fixture)"))),
    };
    let cache = match &a.cache_dir {
        Some(dir) => Some(SearchCache::open(dir).map_err(failed)?),
        None => None,
    };
    let config = RetrieverConfig { offline: a.offline, concurrency: a.concurrency.max(1), ..RetrieverConfig::default() };
    let retriever = Retriever::new(provider, cache, config);
    let bundles = retrieve_bundles(&claims, &retriever, a.max_results, &a.filter.policy())?;
    write_bundles(&bundles, &a.out).map_err(failed)?;
    let kept: usize = bundles.iter().map(|b| b.stats.kept).sum();
    let retrieved: usize = bundles.iter().map(|b| b.stats.retrieved).sum();
    io(writeln!(
        out,
        "{} claims: {retrieved} results, {kept} kept, {} provider calls -> {}",
        bundles.len(),
        retriever.network_calls(),
        a.out.display()
    ))
}

/// Templates per dataset, each resolved once from the same overrides.
struct Templates {
    overrides: TemplateOverrides,
    resolved: BTreeMap<&'static str, PromptTemplate>,
}

impl Templates {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let overrides = match path {
            Some(p) => {
                require_file(p, "template")?;
                TemplateOverrides::from_toml_file(p).map_err(invalid)?
            }
            None => TemplateOverrides::default(),
        };
        Ok(Self { overrides, resolved: BTreeMap::new() })
    }

    fn get(&mut self, dataset: Dataset) -> Result<&PromptTemplate, CliError> {
        if !self.resolved.contains_key(dataset.name()) {
            let t = self.overrides.resolve(dataset.taxonomy()).map_err(invalid)?;
            self.resolved.insert(dataset.name(), t);
        }
        Ok(&self.resolved[dataset.name()])
    }
}

fn examples_for(
    claims: &[Claim],
    bundles_path: &Path,
    templates: &mut Templates,
) -> Result<Vec<crate::promptgen::TuningExample>, CliError> {
    require_file(bundles_path, "bundles file")?;
    let bundles: HashMap<String, _> =
        read_bundles(bundles_path).map_err(failed)?.into_iter().map(|b| (b.claim_id.clone(), b)).collect();
    claims
        .iter()
        .map(|claim| {
            let bundle = bundles.get(&claim.id).ok_or_else(|| failed(format!("no evidence bundle for claim `{}`", claim.id)))?;
            let template = templates.get(claim.dataset)?;
            build_example(claim, bundle, template).map_err(|e| failed(format!("claim `{}`: {e}", claim.id)))
        })
        .collect()
}

fn build_prompts(a: BuildPromptsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let claims = load_selected(&a.claims, a.dataset, &a.partition)?;
    let mut templates = Templates::load(a.template.as_deref())?;
    let examples = examples_for(&claims, &a.bundles, &mut templates)?;
    write_examples(&examples, &a.out).map_err(failed)?;
    io(writeln!(out, "{} prompts -> {}", examples.len(), a.out.display()))
}

fn export_train(a: ExportTrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let claims = load_selected(&a.claims, a.dataset, &a.partition)?;
    let mut templates = Templates::load(a.template.as_deref())?;
    let examples = examples_for(&claims, &a.bundles, &mut templates)?;
    let template = templates.get(examples.first().map_or(a.dataset, |e| e.dataset))?.clone();
    let partition = parse_partition(&a.partition)?.map(Partition::name).unwrap_or("all");
    let meta = export_training_set(&examples, &a.out, &template, &a.filter.policy(), Some(partition)).map_err(failed)?;
    io(writeln!(
        out,
        "{} records -> {} (metadata {})",
        meta.records,
        a.out.display(),
        crate::promptgen::metadata_path(&a.out).display()
    ))
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.prompts, "prompts file")?;
    let decode = DecodeParams { max_new_tokens: a.max_new_tokens, ..DecodeParams::default() };
    decode.validate().map_err(invalid)?;
    let backend: Box<dyn Backend> = match a.backend.as_str() {
        "mock" => {
            let path = a.mock_file.as_deref().ok_or_else(|| invalid("--backend mock needs --mock-file"))?;
            require_file(path, "mock file")?;
            Box::new(MockBackend::from_file(path).map_err(invalid)?)
        }
        "http" => {
            let mut cfg = HttpBackendConfig { max_concurrency: a.concurrency.max(1), ..HttpBackendConfig::default() };
            if let Some(m) = a.model {
                cfg.model = m;
            }
            if let Some(u) = a.base_url {
                cfg.base_url = u;
            }
            Box::new(HttpBackend::from_env(cfg).map_err(invalid)?)
        }
        other => return Err(invalid(format!("unknown backend `{other}` (expected mock or http)"))),
    };
    let examples = read_examples(&a.prompts).map_err(failed)?;
    let jobs: Vec<PromptJob> = examples.iter().map(PromptJob::from).collect();
    let options = BatchOptions { concurrency: a.concurrency.max(1), fail_fast: a.fail_fast };
    let verdicts = predict_prompts(&jobs, backend.as_ref(), &decode, options).map_err(failed)?;
    write_verdicts(&verdicts, &a.out).map_err(failed)?;
    let parsed = verdicts.iter().filter(|v| v.label.is_some()).count();
    io(writeln!(out, "{} verdicts ({parsed} parsed) -> {}", verdicts.len(), a.out.display()))
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.verdicts, "verdicts file")?;
    require_file(&a.golds, "golds file")?;
    let split = load_normalized(&a.golds, a.taxonomy).map_err(failed)?;
    let claims: Vec<Claim> = split.iter().map(|(_, c)| c.clone()).collect();
    let verdicts = crate::inference::read_verdicts(&a.verdicts).map_err(failed)?;
    let report = evaluate(&claims, &verdicts, a.taxonomy, a.with_reference).map_err(failed)?;
    let mut json = serde_json::to_vec_pretty(&report).expect("reports serialize");
    json.push(b'\n');
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(failed)?;
    }
    std::fs::write(&a.out, json).map_err(failed)?;
    io(write!(out, "{}", render_results(&report.metrics, report.reference.as_ref())))?;
    io(writeln!(out))?;
    io(write!(out, "{}", render_confusion(&report.confusion)))?;
    let p = report.parse_counts;
    io(writeln!(
        out,
        "\nparsed {} of {} (exact {}, fuzzy {}, unparsed {}); {} undefined ratios scored 0",
        p.parsed(),
        report.metrics.samples,
        p.exact,
        p.fuzzy,
        p.unparsed,
        report.metrics.zero_division
    ))
}

fn run(a: RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg = PipelineConfig::from_toml(&text).map_err(PipelineError::Validation)?;
    // Flag values are taken relative to the working directory, config
    // values relative to the config file.
    let absolute = |p: PathBuf| std::path::absolute(&p).unwrap_or(p);
    if let Some(d) = a.dataset {
        cfg.dataset = d;
    }
    if let Some(p) = a.claims {
        cfg.paths.claims = Some(absolute(p));
    }
    if let Some(p) = a.cache_dir {
        cfg.paths.cache_dir = Some(absolute(p));
    }
    if let Some(p) = a.output_dir {
        cfg.paths.output_dir = Some(absolute(p));
    }
    if let Some(p) = a.partition {
        cfg.partition = p;
    }
    if let Some(b) = a.backend {
        cfg.backend.kind = b;
    }
    if let Some(p) = a.mock_file {
        cfg.backend.mock_file = Some(absolute(p));
    }
    cfg.retrieval.offline |= a.offline;
    cfg.with_reference |= a.with_reference;

    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let validated = cfg.validate(&base).map_err(PipelineError::Validation)?;
    let outcome = pipeline::run_pipeline(&validated, RunOptions { force: a.force })?;
    let m = &outcome.manifest;
    for stage in &m.stages {
        io(writeln!(out, "{:<14} {}", stage.stage, if stage.reused { "reused" } else { "done" }))?;
    }
    io(writeln!(
        out,
        "{} claims, evidence {} kept / {} retrieved, {} verdicts ({} parsed)\n",
        m.counts.claims_in, m.counts.evidence.kept, m.counts.evidence.retrieved, m.counts.verdicts.total, m.counts.verdicts.parsed
    ))?;
    io(write!(out, "{}", render_results(&outcome.report.metrics, outcome.report.reference.as_ref())))?;
    io(writeln!(out))?;
    io(write!(out, "{}", render_confusion(&outcome.report.confusion)))?;
    io(writeln!(out, "\nmanifest: {}", outcome.output_dir.join(pipeline::MANIFEST_FILE).display()))
}

fn lora_demo(a: LoraDemoArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = DemoConfig {
        seed: a.seed,
        rank: a.rank,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        dropout_p: a.dropout,
        ..DemoConfig::default()
    };
    cfg.train_config().validate().map_err(invalid)?;
    if cfg.rank == 0 || cfg.rank > cfg.features.min(cfg.hidden) {
        return Err(invalid(format!("--rank must be between 1 and {}", cfg.features.min(cfg.hidden))));
    }
    let (report, model) = run_demo_with_model(&cfg).map_err(failed)?;
    if a.json {
        io(writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("reports serialize")))?;
    } else {
        io(write!(out, "{}", report.render()))?;
    }
    if let Some(dir) = a.checkpoint {
        let (base, adapters) = save_checkpoint(&model, &dir).map_err(failed)?;
        // keep --json output parseable
        if a.json {
            log::info!("checkpoint: {} + {}", base.display(), adapters.display());
        } else {
            io(writeln!(out, "checkpoint: {} + {}", base.display(), adapters.display()))?;
        }
    }
    Ok(())
}
