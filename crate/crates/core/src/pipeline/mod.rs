//! End-to-end runs: ingest → retrieve → build-prompts → predict → evaluate.
//!
//! Every stage writes its outputs under the run's output directory together
//! with a stamp recording a hash of everything the stage read. A rerun
//! whose inputs hash the same, and whose outputs are still intact, reuses
//! them instead of executing the stage again.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{write_normalized, Claim};
use crate::eval::{evaluate, render_confusion, render_results, EvaluationReport};
use crate::evidence::{EvidenceBundle, Retriever, SearchCache};
use crate::inference::{predict_prompts, read_verdicts, write_verdicts, PromptJob, Verdict};
use crate::promptgen::{build_example, read_examples, write_examples};

pub use config::{
    BackendKind, BackendSection, ConfigIssue, FilterSection, PathsSection, PipelineConfig, ProviderKind,
    RetrievalSection, ValidatedConfig, SEARCH_CX_ENV,
};
pub use stages::{load_claims, make_backend, make_provider, read_bundles, retrieve_bundles, select_partition, write_bundles};

pub const NORMALIZED_FILE: &str = "normalized.jsonl";
pub const BUNDLES_FILE: &str = "bundles.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.txt";
pub const RESULTS_FILE: &str = "results.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
const STAMP_DIR: &str = ".stamps";

/// Bumped whenever a stage's output format or semantics change, which
/// invalidates earlier stamps.
pub const STAGE_VERSIONS: [(&str, u32); 5] =
    [("ingest", 1), ("retrieve", 1), ("build-prompts", 1), ("predict", 1), ("evaluate", 1)];

fn stage_version(stage: &str) -> u32 {
    STAGE_VERSIONS.iter().find(|(s, _)| *s == stage).map_or(0, |(_, v)| *v)
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<ConfigIssue>),
    #[error("stage `{stage}` failed{}: {message}", .claim_id.as_ref().map(|c| format!(" on claim `{c}`")).unwrap_or_default())]
    Stage { stage: &'static str, claim_id: Option<String>, message: String },
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, message: impl ToString) -> Self {
        Self::Stage { stage, claim_id: None, message: message.to_string() }
    }

    pub(crate) fn claim(stage: &'static str, claim_id: &str, message: impl ToString) -> Self {
        Self::Stage { stage, claim_id: Some(claim_id.to_string()), message: message.to_string() }
    }

    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Stage { .. } => 2,
        }
    }
}

/// Length-prefixed SHA-256 over named fields, so adjacent fields can't
/// run together.
#[derive(Default)]
pub(crate) struct InputHasher(Sha256);

impl InputHasher {
    pub(crate) fn field(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        for part in [name.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    pub(crate) fn json<T: Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        let bytes = serde_json::to_vec(value).expect("config values serialize");
        self.field(name, &bytes)
    }

    pub(crate) fn finish(&mut self) -> String {
        hex::encode(std::mem::take(&mut self.0).finalize())
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Hash of a file, or of every file under a directory keyed by relative path.
pub fn hash_path(path: &Path) -> std::io::Result<String> {
    if path.is_file() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    let mut pending = vec![path.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                pending.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = InputHasher::default();
    for file in files {
        let rel = file.strip_prefix(path).unwrap_or(&file).to_string_lossy().replace('\\', "/");
        h.field(&rel, &fs::read(&file)?);
    }
    Ok(h.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    version: u32,
    input_hash: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: u32,
    pub input_hash: String,
    /// Output file name → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// True when the outputs from an earlier run were reused.
    pub reused: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCounts {
    pub retrieved: usize,
    pub kept: usize,
    pub dropped_blocked: usize,
    pub dropped_post_dated: usize,
    pub dropped_undated: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub total: usize,
    pub parsed: usize,
    pub exact: usize,
    pub fuzzy: usize,
    pub unparsed: usize,
    /// Unparsed because generation itself failed.
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub claims_ingested: usize,
    pub claims_in: usize,
    pub evidence: EvidenceCounts,
    pub prompts: usize,
    pub verdicts: VerdictCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Everything needed to audit or repeat a run. Apart from `timestamps`,
/// two runs over the same inputs produce equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub stage_versions: BTreeMap<String, u32>,
    /// Input name → SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub counts: RunCounts,
    pub metrics: MacroScores,
    pub timestamps: Timestamps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Execute every stage even when its stamp matches.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: EvaluationReport,
    pub output_dir: PathBuf,
}

fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

struct Runner<'a> {
    cfg: &'a ValidatedConfig,
    options: RunOptions,
    records: Vec<StageRecord>,
    timings: Vec<StageTiming>,
}

impl Runner<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.cfg.output_dir.join(STAMP_DIR).join(format!("{stage}.json"))
    }

    fn output_hashes(&self, stage: &'static str, outputs: &[&str]) -> Result<BTreeMap<String, String>, PipelineError> {
        outputs
            .iter()
            .map(|name| {
                sha256_file(&self.out(name))
                    .map(|h| (name.to_string(), h))
                    .map_err(|e| PipelineError::stage(stage, format!("cannot hash {name}: {e}")))
            })
            .collect()
    }

    fn reusable(&self, stage: &str, input_hash: &str, outputs: &[&str]) -> Option<StageStamp> {
        if self.options.force {
            return None;
        }
        let body = fs::read(self.stamp_path(stage)).ok()?;
        let stamp: StageStamp = serde_json::from_slice(&body).ok()?;
        if stamp.version != stage_version(stage) || stamp.input_hash != input_hash {
            return None;
        }
        let intact = outputs.iter().all(|name| {
            stamp.outputs.get(*name).is_some_and(|h| sha256_file(&self.out(name)).is_ok_and(|actual| &actual == h))
        });
        intact.then_some(stamp)
    }

    fn stage(
        &mut self,
        stage: &'static str,
        input_hash: String,
        outputs: &[&str],
        exec: impl FnOnce() -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let started_at = now();
        let (outputs, reused) = match self.reusable(stage, &input_hash, outputs) {
            Some(stamp) => {
                log::info!("{stage}: inputs unchanged, reusing outputs");
                (stamp.outputs, true)
            }
            None => {
                exec()?;
                let hashes = self.output_hashes(stage, outputs)?;
                let stamp = StageStamp {
                    stage: stage.to_string(),
                    version: stage_version(stage),
                    input_hash: input_hash.clone(),
                    outputs: hashes.clone(),
                };
                let path = self.stamp_path(stage);
                fs::create_dir_all(path.parent().expect("stamp has a parent"))
                    .and_then(|_| fs::write(&path, serde_json::to_vec_pretty(&stamp).expect("stamps serialize")))
                    .map_err(|e| PipelineError::stage(stage, format!("cannot write stamp: {e}")))?;
                (hashes, false)
            }
        };
        self.records.push(StageRecord {
            stage: stage.to_string(),
            version: stage_version(stage),
            input_hash,
            outputs,
            reused,
        });
        self.timings.push(StageTiming { stage: stage.to_string(), started_at, finished_at: now() });
        Ok(())
    }

    fn output_hash(&self, name: &str) -> String {
        self.records
            .iter()
            .find_map(|r| r.outputs.get(name).cloned())
            .expect("upstream stage recorded this output")
    }
}

fn selected_claims(cfg: &ValidatedConfig, normalized: &Path, stage: &'static str) -> Result<(usize, Vec<Claim>), PipelineError> {
    let split = crate::corpus::load_normalized(normalized, cfg.dataset).map_err(|e| PipelineError::stage(stage, e))?;
    let claims = select_partition(&split, cfg.partition);
    Ok((split.len(), claims))
}

/// Runs all five stages and writes the manifest.
pub fn run_pipeline(cfg: &ValidatedConfig, options: RunOptions) -> Result<RunOutcome, PipelineError> {
    let started_at = now();
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| PipelineError::stage("ingest", format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let mut inputs = BTreeMap::new();
    let input_err = |what: &str, e: std::io::Error| PipelineError::Validation(vec![ConfigIssue {
        field: what.to_string(),
        message: format!("cannot read: {e}"),
    }]);
    inputs.insert("claims".to_string(), hash_path(&cfg.claims).map_err(|e| input_err("paths.claims", e))?);
    if let (ProviderKind::Fixture, Some(f)) = (cfg.provider, &cfg.fixture) {
        inputs.insert("retrieval.fixture".to_string(), sha256_file(f).map_err(|e| input_err("retrieval.fixture", e))?);
    }
    if let (BackendKind::Mock, Some(f)) = (cfg.backend, &cfg.mock_file) {
        inputs.insert("backend.mock_file".to_string(), sha256_file(f).map_err(|e| input_err("backend.mock_file", e))?);
    }

    let mut runner = Runner { cfg, options, records: Vec::new(), timings: Vec::new() };
    let snap = &cfg.snapshot;

    // ingest
    let hash = InputHasher::default()
        .field("claims", inputs["claims"].as_bytes())
        .field("dataset", cfg.dataset.name().as_bytes())
        .finish();
    runner.stage("ingest", hash, &[NORMALIZED_FILE], || {
        let split = load_claims(cfg.dataset, &cfg.claims).map_err(|e| PipelineError::stage("ingest", e))?;
        write_normalized(&split, &runner_out(cfg, NORMALIZED_FILE)).map_err(|e| PipelineError::stage("ingest", e))
    })?;

    // retrieve
    let mut h = InputHasher::default();
    h.field("normalized", runner.output_hash(NORMALIZED_FILE).as_bytes())
        .json("partition", &snap.partition)
        .json("provider", &snap.retrieval.provider)
        .json("max_results", &snap.retrieval.max_results)
        .json("policy", &cfg.policy);
    if let Some(f) = inputs.get("retrieval.fixture") {
        h.field("fixture", f.as_bytes());
    }
    if cfg.provider == ProviderKind::Google {
        h.json("google", &cfg.google_config());
    }
    runner.stage("retrieve", h.finish(), &[BUNDLES_FILE], || {
        let (_, claims) = selected_claims(cfg, &runner_out(cfg, NORMALIZED_FILE), "retrieve")?;
        let provider = make_provider(cfg).map_err(|e| PipelineError::stage("retrieve", e))?;
        let cache = match &cfg.cache_dir {
            Some(dir) => Some(SearchCache::open(dir).map_err(|e| PipelineError::stage("retrieve", e))?),
            None => None,
        };
        let retriever = Retriever::new(provider, cache, cfg.retriever_config());
        let bundles = retrieve_bundles(&claims, &retriever, snap.retrieval.max_results, &cfg.policy)?;
        log::info!("retrieve: {} provider calls", retriever.network_calls());
        write_bundles(&bundles, &runner_out(cfg, BUNDLES_FILE)).map_err(|e| PipelineError::stage("retrieve", e))
    })?;

    // build-prompts
    let hash = InputHasher::default()
        .field("normalized", runner.output_hash(NORMALIZED_FILE).as_bytes())
        .field("bundles", runner.output_hash(BUNDLES_FILE).as_bytes())
        .json("partition", &snap.partition)
        .json("template", &cfg.template)
        .finish();
    runner.stage("build-prompts", hash, &[PROMPTS_FILE], || {
        let (_, claims) = selected_claims(cfg, &runner_out(cfg, NORMALIZED_FILE), "build-prompts")?;
        let bundles = read_bundles(&runner_out(cfg, BUNDLES_FILE)).map_err(|e| PipelineError::stage("build-prompts", e))?;
        let by_id: BTreeMap<&str, &EvidenceBundle> = bundles.iter().map(|b| (b.claim_id.as_str(), b)).collect();
        let examples = claims
            .iter()
            .map(|claim| {
                let bundle = by_id
                    .get(claim.id.as_str())
                    .ok_or_else(|| PipelineError::claim("build-prompts", &claim.id, "no evidence bundle"))?;
                build_example(claim, bundle, &cfg.template).map_err(|e| PipelineError::claim("build-prompts", &claim.id, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_examples(&examples, &runner_out(cfg, PROMPTS_FILE)).map_err(|e| PipelineError::stage("build-prompts", e))
    })?;

    // predict
    let mut h = InputHasher::default();
    h.field("prompts", runner.output_hash(PROMPTS_FILE).as_bytes())
        .json("backend", &snap.backend)
        .json("decode", &snap.decode);
    if let Some(f) = inputs.get("backend.mock_file") {
        h.field("mock_file", f.as_bytes());
    }
    if cfg.backend == BackendKind::Http {
        // The endpoint may come from the environment; make it part of the key.
        h.json("endpoint", &std::env::var(crate::inference::INFERENCE_URL_ENV).ok());
    }
    runner.stage("predict", h.finish(), &[VERDICTS_FILE], || {
        let examples = read_examples(&runner_out(cfg, PROMPTS_FILE)).map_err(|e| PipelineError::stage("predict", e))?;
        let jobs: Vec<PromptJob> = examples.iter().map(PromptJob::from).collect();
        let backend = make_backend(cfg).map_err(|e| PipelineError::stage("predict", e))?;
        let verdicts = predict_prompts(&jobs, backend.as_ref(), &snap.decode, snap.backend.batch_options())
            .map_err(|e| match e {
                crate::inference::InferenceError::Claim { claim_id, source } => {
                    PipelineError::claim("predict", &claim_id, source)
                }
                other => PipelineError::stage("predict", other),
            })?;
        write_verdicts(&verdicts, &runner_out(cfg, VERDICTS_FILE)).map_err(|e| PipelineError::stage("predict", e))
    })?;

    // evaluate
    let hash = InputHasher::default()
        .field("normalized", runner.output_hash(NORMALIZED_FILE).as_bytes())
        .field("verdicts", runner.output_hash(VERDICTS_FILE).as_bytes())
        .json("partition", &snap.partition)
        .json("with_reference", &snap.with_reference)
        .finish();
    let eval_outputs = [REPORT_FILE, CONFUSION_FILE, RESULTS_FILE];
    runner.stage("evaluate", hash, &eval_outputs, || {
        let (_, claims) = selected_claims(cfg, &runner_out(cfg, NORMALIZED_FILE), "evaluate")?;
        let verdicts = read_verdicts(&runner_out(cfg, VERDICTS_FILE)).map_err(|e| PipelineError::stage("evaluate", e))?;
        let report = evaluate(&claims, &verdicts, cfg.dataset, snap.with_reference)
            .map_err(|e| PipelineError::stage("evaluate", e))?;
        write_report(&report, &cfg.output_dir).map_err(|e| PipelineError::stage("evaluate", e))
    })?;

    let (counts, report) = reconcile(cfg)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: snap.clone(),
        stage_versions: STAGE_VERSIONS.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
        inputs,
        stages: runner.records,
        counts,
        metrics: MacroScores {
            precision: report.metrics.macro_precision,
            recall: report.metrics.macro_recall,
            f1: report.metrics.macro_f1,
        },
        timestamps: Timestamps { started_at, finished_at: now(), stages: runner.timings },
    };
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    body.push(b'\n');
    fs::write(cfg.output_dir.join(MANIFEST_FILE), body)
        .map_err(|e| PipelineError::stage("evaluate", format!("cannot write manifest: {e}")))?;
    Ok(RunOutcome { manifest, report, output_dir: cfg.output_dir.clone() })
}

fn runner_out(cfg: &ValidatedConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

/// Writes `report.json`, `confusion.txt` and `results.txt` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> std::io::Result<()> {
    let mut json = serde_json::to_vec_pretty(report).expect("reports serialize");
    json.push(b'\n');
    fs::write(dir.join(REPORT_FILE), json)?;
    fs::write(dir.join(CONFUSION_FILE), render_confusion(&report.confusion))?;
    fs::write(dir.join(RESULTS_FILE), render_results(&report.metrics, report.reference.as_ref()))
}

/// Derives the manifest counts from the stage outputs and checks that they
/// agree with each other.
fn reconcile(cfg: &ValidatedConfig) -> Result<(RunCounts, EvaluationReport), PipelineError> {
    let fail = |m: String| PipelineError::stage("evaluate", m);
    let (claims_ingested, claims) = selected_claims(cfg, &runner_out(cfg, NORMALIZED_FILE), "evaluate")?;
    let bundles = read_bundles(&runner_out(cfg, BUNDLES_FILE)).map_err(|e| fail(e.to_string()))?;
    let prompts = read_examples(&runner_out(cfg, PROMPTS_FILE)).map_err(|e| fail(e.to_string()))?;
    let verdicts: Vec<Verdict> = read_verdicts(&runner_out(cfg, VERDICTS_FILE)).map_err(|e| fail(e.to_string()))?;
    let report: EvaluationReport = serde_json::from_slice(
        &fs::read(runner_out(cfg, REPORT_FILE)).map_err(|e| fail(format!("cannot read report: {e}")))?,
    )
    .map_err(|e| fail(format!("invalid report: {e}")))?;

    let mut evidence = EvidenceCounts::default();
    for b in &bundles {
        let s = &b.stats;
        if s.kept + s.dropped() != s.retrieved || s.kept != b.snippets.len() {
            return Err(PipelineError::claim("retrieve", &b.claim_id, "evidence counts do not reconcile"));
        }
        evidence.retrieved += s.retrieved;
        evidence.kept += s.kept;
        evidence.dropped_blocked += s.dropped_blocked;
        evidence.dropped_post_dated += s.dropped_post_dated;
        evidence.dropped_undated += s.dropped_undated;
    }
    let parse = crate::eval::ParseCounts::tally(&verdicts);
    let counts = RunCounts {
        claims_ingested,
        claims_in: claims.len(),
        evidence,
        prompts: prompts.len(),
        verdicts: VerdictCounts {
            total: verdicts.len(),
            parsed: parse.parsed(),
            exact: parse.exact,
            fuzzy: parse.fuzzy,
            unparsed: parse.unparsed,
            failed: verdicts.iter().filter(|v| v.error.is_some()).count(),
        },
    };
    let sizes = [bundles.len(), prompts.len(), verdicts.len(), report.metrics.samples as usize];
    if sizes.iter().any(|&n| n != counts.claims_in) {
        return Err(fail(format!(
            "stage counts disagree: {} claims, {} bundles, {} prompts, {} verdicts, {} scored",
            counts.claims_in, sizes[0], sizes[1], sizes[2], sizes[3]
        )));
    }
    Ok((counts, report))
}

/// Manifest JSON with the run-specific `timestamps` removed, for comparing
/// two runs.
pub fn manifest_without_timestamps(manifest: &RunManifest) -> serde_json::Value {
    let mut value = serde_json::to_value(manifest).expect("manifest serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("timestamps");
    }
    value
}
