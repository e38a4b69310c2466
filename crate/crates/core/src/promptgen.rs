//! Instruction / evidence / input prompt assembly and instruction-tuning
//! export.
//!
//! A prompt is laid out as
//!
//! ```text
//! ### Instruction:
//! <instruction>
//!
//! ### Evidence:
//! <title>: <snippet>
//! <title>: <snippet>
//!
//! ### Input:
//! <claim>
//!
//! ### Response:
//! ```
//!
//! Budgets are in characters. Only the evidence section shrinks to fit; the
//! instruction and the claim are never truncated.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Dataset, VeracityLabel, VeracityTaxonomy};
use crate::evidence::{EvidenceBundle, FilterPolicy};

pub const DEFAULT_CHAR_BUDGET: usize = 8_000;
pub const DEFAULT_TOP_K_EVIDENCE: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("claim `{claim_id}` does not fit: needs {needed} characters without evidence, budget is {budget}")]
    ClaimTooLong { claim_id: String, needed: usize, budget: usize },
    #[error("bundle for `{bundle_id}` passed with claim `{claim_id}`")]
    BundleMismatch { claim_id: String, bundle_id: String },
    #[error("no evidence bundle for claim `{0}`")]
    MissingBundle(String),
    #[error("label `{label}` is not in the {taxonomy} taxonomy")]
    ForeignLabel { label: String, taxonomy: &'static str },
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: invalid record: {message}")]
    Record { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionMarkers {
    pub instruction: String,
    pub evidence: String,
    pub input: String,
}

impl Default for SectionMarkers {
    fn default() -> Self {
        Self {
            instruction: "### Instruction:".into(),
            evidence: "### Evidence:".into(),
            input: "### Input:".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction_text: String,
    pub section_markers: SectionMarkers,
    pub response_marker: String,
    pub top_k_evidence: usize,
    pub evidence_separator: String,
    pub char_budget: usize,
}

pub fn default_instruction(taxonomy: &VeracityTaxonomy) -> String {
    format!(
        "Determine whether the claim is true based on the evidence provided. Answer with exactly one of: {}.",
        taxonomy.label_names().join(", ")
    )
}

impl PromptTemplate {
    pub fn for_taxonomy(taxonomy: &VeracityTaxonomy) -> Self {
        Self {
            instruction_text: default_instruction(taxonomy),
            section_markers: SectionMarkers::default(),
            response_marker: "### Response:".into(),
            top_k_evidence: DEFAULT_TOP_K_EVIDENCE,
            evidence_separator: "\n".into(),
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }

    pub fn markers(&self) -> [&str; 4] {
        [
            &self.section_markers.instruction,
            &self.section_markers.evidence,
            &self.section_markers.input,
            &self.response_marker,
        ]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let markers = self.markers();
        for (i, m) in markers.iter().enumerate() {
            if m.trim().is_empty() {
                return Err(PromptError::InvalidTemplate("markers must be nonempty".into()));
            }
            if m.contains('\n') {
                return Err(PromptError::InvalidTemplate(format!("marker `{m}` spans lines")));
            }
            if let Some(other) = markers[i + 1..].iter().find(|o| o.contains(*m) || m.contains(**o)) {
                return Err(PromptError::InvalidTemplate(format!("markers `{m}` and `{other}` overlap")));
            }
        }
        let marker_len: usize = markers.iter().map(|m| m.chars().count()).sum();
        if self.char_budget <= marker_len {
            return Err(PromptError::InvalidTemplate(format!(
                "char_budget {} must exceed the combined marker length {marker_len}",
                self.char_budget
            )));
        }
        Ok(())
    }

    /// Replaces marker occurrences inside free text with the marker minus
    /// its `#` characters (or with nothing when that leaves it unchanged),
    /// until no marker remains.
    pub fn sanitize(&self, text: &str) -> String {
        let mut out = text.to_string();
        loop {
            let Some(marker) = self.markers().into_iter().find(|m| out.contains(*m)) else {
                return out;
            };
            let stripped: String = marker.chars().filter(|&c| c != '#').collect();
            let stripped = stripped.trim_start();
            let replacement = if stripped == marker { "" } else { stripped };
            out = out.replace(marker, replacement);
        }
    }
}

/// Optional overrides read from a template TOML file; unset fields keep the
/// taxonomy defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateOverrides {
    pub instruction_text: Option<String>,
    pub instruction_marker: Option<String>,
    pub evidence_marker: Option<String>,
    pub input_marker: Option<String>,
    pub response_marker: Option<String>,
    pub top_k_evidence: Option<usize>,
    pub evidence_separator: Option<String>,
    pub char_budget: Option<usize>,
}

impl TemplateOverrides {
    pub fn from_toml_file(path: &Path) -> Result<Self, PromptError> {
        let body = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        toml::from_str(&body).map_err(|e| PromptError::InvalidTemplate(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, taxonomy: &VeracityTaxonomy) -> Result<PromptTemplate, PromptError> {
        let mut t = PromptTemplate::for_taxonomy(taxonomy);
        let set = |slot: &mut String, value: &Option<String>| {
            if let Some(v) = value {
                *slot = v.clone();
            }
        };
        set(&mut t.instruction_text, &self.instruction_text);
        set(&mut t.section_markers.instruction, &self.instruction_marker);
        set(&mut t.section_markers.evidence, &self.evidence_marker);
        set(&mut t.section_markers.input, &self.input_marker);
        set(&mut t.response_marker, &self.response_marker);
        set(&mut t.evidence_separator, &self.evidence_separator);
        if let Some(k) = self.top_k_evidence {
            t.top_k_evidence = k;
        }
        if let Some(b) = self.char_budget {
            t.char_budget = b;
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub evidence_count_used: usize,
    /// Instruction body (sanitized), without its marker.
    pub instruction: String,
    /// Evidence section followed by the input section, markers included.
    pub input: String,
}

fn input_block(template: &PromptTemplate, evidence: &str, claim: &str) -> String {
    let m = &template.section_markers;
    format!("{}\n{}\n\n{}\n{}", m.evidence, evidence, m.input, claim)
}

fn full_prompt(template: &PromptTemplate, instruction: &str, input: &str) -> String {
    format!(
        "{}\n{}\n\n{}\n\n{}\n",
        template.section_markers.instruction, instruction, input, template.response_marker
    )
}

pub fn assemble_prompt(claim: &Claim, bundle: &EvidenceBundle, template: &PromptTemplate) -> Result<AssembledPrompt, PromptError> {
    if bundle.claim_id != claim.id {
        return Err(PromptError::BundleMismatch { claim_id: claim.id.clone(), bundle_id: bundle.claim_id.clone() });
    }
    template.validate()?;
    let instruction = template.sanitize(&template.instruction_text);
    let claim_text = template.sanitize(&claim.text);
    let items: Vec<String> = bundle
        .snippets
        .iter()
        .take(template.top_k_evidence)
        .map(|r| template.sanitize(&format!("{}: {}", r.title, r.snippet)))
        .collect();

    let build = |k: usize| {
        let evidence = template.sanitize(&items[..k].join(&template.evidence_separator));
        let input = input_block(template, &evidence, &claim_text);
        let text = full_prompt(template, &instruction, &input);
        (text, input)
    };

    let (mut text, mut input) = build(0);
    let base_len = text.chars().count();
    if base_len > template.char_budget {
        return Err(PromptError::ClaimTooLong { claim_id: claim.id.clone(), needed: base_len, budget: template.char_budget });
    }
    let mut used = 0;
    for k in 1..=items.len() {
        let (t, i) = build(k);
        if t.chars().count() > template.char_budget {
            break;
        }
        (text, input, used) = (t, i, k);
    }
    Ok(AssembledPrompt { text, evidence_count_used: used, instruction, input })
}

/// The label's canonical verbalization, used as the generation target.
pub fn verbalize_label(label: VeracityLabel, taxonomy: &VeracityTaxonomy) -> Result<&'static str, PromptError> {
    if !taxonomy.contains(label) {
        return Err(PromptError::ForeignLabel { label: label.canonical_name().into(), taxonomy: taxonomy.name() });
    }
    Ok(taxonomy.verbalizations(label)[0])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningExample {
    pub claim_id: String,
    pub dataset: Dataset,
    pub prompt: String,
    pub target: String,
    pub label: String,
    pub evidence_count_used: usize,
    pub instruction: String,
    pub input: String,
}

pub fn build_example(claim: &Claim, bundle: &EvidenceBundle, template: &PromptTemplate) -> Result<TuningExample, PromptError> {
    let taxonomy = claim.dataset.taxonomy();
    let assembled = assemble_prompt(claim, bundle, template)?;
    Ok(TuningExample {
        claim_id: claim.id.clone(),
        dataset: claim.dataset,
        prompt: assembled.text,
        target: verbalize_label(claim.label, taxonomy)?.to_string(),
        label: claim.label.canonical_name().to_string(),
        evidence_count_used: assembled.evidence_count_used,
        instruction: assembled.instruction,
        input: assembled.input,
    })
}

/// One example per claim, in input order.
pub fn build_training_set(
    claims: &[Claim],
    bundles: &HashMap<String, EvidenceBundle>,
    template: &PromptTemplate,
) -> Result<Vec<TuningExample>, PromptError> {
    claims
        .iter()
        .map(|claim| {
            let bundle = bundles.get(&claim.id).ok_or_else(|| PromptError::MissingBundle(claim.id.clone()))?;
            build_example(claim, bundle, template)
        })
        .collect()
}

/// Alpaca-style training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl From<&TuningExample> for TrainingRecord {
    fn from(e: &TuningExample) -> Self {
        Self { instruction: e.instruction.clone(), input: e.input.clone(), output: e.target.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: String,
    pub dropout: f64,
    pub optimizer: String,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-4,
            lr_schedule: "linear-to-zero".into(),
            dropout: 0.05,
            optimizer: "adam".into(),
        }
    }
}

/// Sidecar written next to an exported training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMetadata {
    pub dataset: Option<Dataset>,
    pub partition: Option<String>,
    pub records: usize,
    pub template: PromptTemplate,
    pub policy: FilterPolicy,
    pub hyperparameters: Hyperparameters,
}

/// `train.jsonl` -> `train.meta.json`
pub fn metadata_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "train".into());
    path.with_file_name(format!("{stem}.meta.json"))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PromptError {
    PromptError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn export_training_set(
    examples: &[TuningExample],
    path: &Path,
    template: &PromptTemplate,
    policy: &FilterPolicy,
    partition: Option<&str>,
) -> Result<ExportMetadata, PromptError> {
    let mut body = Vec::new();
    for example in examples {
        serde_json::to_writer(&mut body, &TrainingRecord::from(example)).expect("records always serialize");
        body.push(b'\n');
    }
    write_file(path, &body)?;
    let meta = ExportMetadata {
        dataset: examples.first().map(|e| e.dataset),
        partition: partition.map(str::to_string),
        records: examples.len(),
        template: template.clone(),
        policy: policy.clone(),
        hyperparameters: Hyperparameters::default(),
    };
    let meta_body = serde_json::to_vec_pretty(&meta).expect("metadata always serializes");
    write_file(&metadata_path(path), &meta_body)?;
    Ok(meta)
}

pub fn read_training_set(path: &Path) -> Result<Vec<TrainingRecord>, PromptError> {
    read_jsonl(path)
}

pub fn read_metadata(path: &Path) -> Result<ExportMetadata, PromptError> {
    let body = fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&body).map_err(|e| PromptError::Record { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

pub fn write_examples(examples: &[TuningExample], path: &Path) -> Result<(), PromptError> {
    let mut body = Vec::new();
    for example in examples {
        serde_json::to_writer(&mut body, example).expect("examples always serialize");
        body.push(b'\n');
    }
    write_file(path, &body)
}

pub fn read_examples(path: &Path) -> Result<Vec<TuningExample>, PromptError> {
    read_jsonl(path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PromptError> {
    let reader = BufReader::new(fs::File::open(path).map_err(|e| io_error(path, e))?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PromptError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), PromptError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(body).map_err(|e| io_error(path, e))
}
