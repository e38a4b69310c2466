//! Verdict generation: pluggable text-generation backends and the parser
//! that maps generated text back onto a taxonomy label.

mod backend;
mod parse;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Dataset, VeracityLabel};
use crate::evidence::EvidenceBundle;
use crate::promptgen::{assemble_prompt, PromptTemplate, TuningExample};

pub use backend::{
    apply_stop_sequences, prompt_hash, Backend, HttpBackend, HttpBackendConfig, MockBackend, MockKey,
    INFERENCE_KEY_ENV, INFERENCE_URL_ENV,
};
pub use parse::{parse_verdict, ParseStatus, ParsedVerdict};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {message}; payload: {body}")]
    Malformed { message: String, body: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("prompt for claim `{claim_id}`: {source}")]
    Prompt {
        claim_id: String,
        #[source]
        source: crate::promptgen::PromptError,
    },
    #[error("claim `{claim_id}`: {source}")]
    Claim {
        claim_id: String,
        #[source]
        source: Box<InferenceError>,
    },
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl InferenceError {
    fn is_retryable(&self) -> bool {
        match self {
            InferenceError::Transport { .. } => true,
            InferenceError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
    /// 0 means greedy.
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { max_new_tokens: 16, temperature: 0.0, stop_sequences: vec!["\n".into()] }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be a finite non-negative number".into());
        }
        Ok(())
    }
}

/// A parsed generation. `label` is `None` exactly when `parse_status` is
/// `Unparsed`. Read back with [`read_verdicts`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub claim_id: String,
    pub dataset: Dataset,
    pub raw_text: String,
    pub label: Option<VeracityLabel>,
    pub parse_status: ParseStatus,
    /// Why generation failed, for verdicts recorded instead of aborting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    pub fn from_text(claim_id: impl Into<String>, dataset: Dataset, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let parsed = parse_verdict(&raw_text, dataset.taxonomy());
        Self {
            claim_id: claim_id.into(),
            dataset,
            raw_text,
            label: parsed.label,
            parse_status: parsed.status,
            error: None,
        }
    }

    pub fn failed(claim_id: impl Into<String>, dataset: Dataset, error: impl Into<String>) -> Self {
        Self {
            claim_id: claim_id.into(),
            dataset,
            raw_text: String::new(),
            label: None,
            parse_status: ParseStatus::Unparsed,
            error: Some(error.into()),
        }
    }
}

#[derive(Deserialize)]
struct VerdictRecord {
    claim_id: String,
    dataset: Dataset,
    raw_text: String,
    label: Option<String>,
    parse_status: ParseStatus,
    #[serde(default)]
    error: Option<String>,
}

pub fn write_verdicts(verdicts: &[Verdict], path: &Path) -> Result<(), InferenceError> {
    let mut body = Vec::new();
    for v in verdicts {
        serde_json::to_writer(&mut body, v).expect("verdicts always serialize");
        body.push(b'\n');
    }
    let io = |e: std::io::Error| InferenceError::Io { path: path.to_path_buf(), message: e.to_string() };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&body)).map_err(io)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, InferenceError> {
    let io = |message: String| InferenceError::Io { path: path.to_path_buf(), message };
    let reader = BufReader::new(fs::File::open(path).map_err(|e| io(e.to_string()))?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: VerdictRecord =
            serde_json::from_str(&line).map_err(|e| io(format!("line {}: {e}", idx + 1)))?;
        let label = match &r.label {
            Some(name) => Some(
                r.dataset
                    .taxonomy()
                    .parse_label(name)
                    .ok_or_else(|| io(format!("line {}: unknown {} label `{name}`", idx + 1, r.dataset)))?,
            ),
            None => None,
        };
        if label.is_none() != (r.parse_status == ParseStatus::Unparsed) {
            return Err(io(format!("line {}: label and parse_status disagree", idx + 1)));
        }
        out.push(Verdict {
            claim_id: r.claim_id,
            dataset: r.dataset,
            raw_text: r.raw_text,
            label,
            parse_status: r.parse_status,
            error: r.error,
        });
    }
    Ok(out)
}

/// Assembles the prompt, generates and parses. `raw_text` is kept verbatim.
pub fn predict(
    claim: &Claim,
    bundle: &EvidenceBundle,
    template: &PromptTemplate,
    backend: &dyn Backend,
    decode: &DecodeParams,
) -> Result<Verdict, InferenceError> {
    let prompt = assemble_prompt(claim, bundle, template)
        .map_err(|source| InferenceError::Prompt { claim_id: claim.id.clone(), source })?;
    let raw = backend.generate(&claim.id, &prompt.text, decode)?;
    Ok(Verdict::from_text(&claim.id, claim.dataset, raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub concurrency: usize,
    /// Abort on the first failure instead of recording an unparsed verdict.
    pub fail_fast: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { concurrency: 4, fail_fast: false }
    }
}

/// Input to a batch generation: an already assembled prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptJob {
    pub claim_id: String,
    pub dataset: Dataset,
    pub prompt: String,
}

impl From<&TuningExample> for PromptJob {
    fn from(e: &TuningExample) -> Self {
        Self { claim_id: e.claim_id.clone(), dataset: e.dataset, prompt: e.prompt.clone() }
    }
}

/// Generates for every job with bounded concurrency. Output order equals
/// input order whatever the completion order.
pub fn predict_prompts(
    jobs: &[PromptJob],
    backend: &dyn Backend,
    decode: &DecodeParams,
    options: BatchOptions,
) -> Result<Vec<Verdict>, InferenceError> {
    let workers = options.concurrency.min(backend.max_concurrency()).clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<String, InferenceError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let result = backend.generate(&job.claim_id, &job.prompt, decode);
                *slots[i].lock().expect("slot poisoned") = Some(result);
            });
        }
    });
    let mut verdicts = Vec::with_capacity(jobs.len());
    for (job, slot) in jobs.iter().zip(slots) {
        match slot.into_inner().expect("slot poisoned").expect("every job runs") {
            Ok(raw) => verdicts.push(Verdict::from_text(&job.claim_id, job.dataset, raw)),
            Err(err) if options.fail_fast => {
                return Err(InferenceError::Claim { claim_id: job.claim_id.clone(), source: Box::new(err) })
            }
            Err(err) => {
                log::warn!("generation failed for `{}`: {err}", job.claim_id);
                verdicts.push(Verdict::failed(&job.claim_id, job.dataset, err.to_string()));
            }
        }
    }
    Ok(verdicts)
}

/// [`predict`] over many claims. Prompt failures are recorded like backend
/// failures unless `fail_fast` is set.
pub fn predict_batch(
    claims: &[Claim],
    bundles: &HashMap<String, EvidenceBundle>,
    template: &PromptTemplate,
    backend: &dyn Backend,
    decode: &DecodeParams,
    options: BatchOptions,
) -> Result<Vec<Verdict>, InferenceError> {
    let mut jobs = Vec::with_capacity(claims.len());
    let mut prompt_errors: HashMap<usize, String> = HashMap::new();
    for (i, claim) in claims.iter().enumerate() {
        let empty;
        let bundle = match bundles.get(&claim.id) {
            Some(b) => b,
            None => {
                empty = EvidenceBundle::empty(&claim.id);
                &empty
            }
        };
        match assemble_prompt(claim, bundle, template) {
            Ok(p) => jobs.push(PromptJob { claim_id: claim.id.clone(), dataset: claim.dataset, prompt: p.text }),
            Err(source) if options.fail_fast => {
                return Err(InferenceError::Prompt { claim_id: claim.id.clone(), source })
            }
            Err(source) => {
                prompt_errors.insert(i, source.to_string());
            }
        }
    }
    let mut generated = predict_prompts(&jobs, backend, decode, options)?.into_iter();
    Ok(claims
        .iter()
        .enumerate()
        .map(|(i, claim)| match prompt_errors.remove(&i) {
            Some(err) => Verdict::failed(&claim.id, claim.dataset, err),
            None => generated.next().expect("one verdict per assembled prompt"),
        })
        .collect())
}
