use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Partition};
use crate::evidence::{
    FilterPolicy, GoogleProviderConfig, RetrieverConfig, RetryPolicy, DEFAULT_BLOCKED_DOMAINS, DEFAULT_MAX_RESULTS,
};
use crate::inference::{BatchOptions, DecodeParams, HttpBackendConfig};
use crate::promptgen::{PromptTemplate, TemplateOverrides};

/// Engine id for the Google-compatible provider when the config leaves it
/// unset.
pub const SEARCH_CX_ENV: &str = "FACTCHECK_SEARCH_CX";

/// One problem found while validating a config, tied to its field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Raw corpus: a normalized record file or directory, or LIAR TSVs.
    pub claims: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    /// `google` or `fixture`.
    pub provider: String,
    /// Canned responses for the `fixture` provider.
    pub fixture: Option<PathBuf>,
    pub max_results: usize,
    pub offline: bool,
    pub concurrency: usize,
    pub requests_per_second: f64,
    pub burst: u32,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub endpoint: Option<String>,
    pub engine_id: Option<String>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let r = RetrieverConfig::default();
        Self {
            provider: "google".into(),
            fixture: None,
            max_results: DEFAULT_MAX_RESULTS,
            offline: false,
            concurrency: r.concurrency,
            requests_per_second: r.requests_per_second,
            burst: r.burst,
            retry_attempts: r.retry.attempts,
            retry_base_delay_ms: r.retry.base_delay_ms,
            endpoint: None,
            engine_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Replaces the default fact-checker blocklist when set.
    pub blocked_domains: Option<Vec<String>>,
    pub enforce_date_ceiling: bool,
    pub drop_undated: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let p = FilterPolicy::default();
        Self { blocked_domains: None, enforce_date_ceiling: p.enforce_date_ceiling, drop_undated: p.drop_undated }
    }
}

impl FilterSection {
    pub fn policy(&self) -> FilterPolicy {
        let base = FilterPolicy {
            blocked_domains: Default::default(),
            enforce_date_ceiling: self.enforce_date_ceiling,
            drop_undated: self.drop_undated,
        };
        match &self.blocked_domains {
            Some(list) => base.with_blocked(list),
            None => base.with_blocked(DEFAULT_BLOCKED_DOMAINS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `mock` or `http`.
    pub kind: String,
    pub mock_file: Option<PathBuf>,
    /// Overridden by the inference URL environment variable.
    pub base_url: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub concurrency: usize,
    pub fail_fast: bool,
}

impl Default for BackendSection {
    fn default() -> Self {
        let h = HttpBackendConfig::default();
        Self {
            kind: "mock".into(),
            mock_file: None,
            base_url: None,
            model: h.model,
            timeout_ms: h.timeout_ms,
            attempts: h.attempts,
            concurrency: BatchOptions::default().concurrency,
            fail_fast: false,
        }
    }
}

impl BackendSection {
    pub fn http_config(&self) -> HttpBackendConfig {
        let mut c = HttpBackendConfig {
            model: self.model.clone(),
            timeout_ms: self.timeout_ms,
            attempts: self.attempts,
            max_concurrency: self.concurrency.max(1),
            ..HttpBackendConfig::default()
        };
        if let Some(url) = &self.base_url {
            c.base_url = url.clone();
        }
        c
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions { concurrency: self.concurrency.max(1), fail_fast: self.fail_fast }
    }
}

fn default_partition() -> String {
    "test".into()
}

/// The `run` configuration file. Secrets never live here; they come from
/// the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: String,
    /// Recorded in the manifest. Greedy decoding and mock backends draw no
    /// randomness, so nothing else consumes it.
    #[serde(default)]
    pub seed: u64,
    /// Partition to predict and score: train, validation, test or all.
    #[serde(default = "default_partition")]
    pub partition: String,
    #[serde(default)]
    pub with_reference: bool,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub template: TemplateOverrides,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Google,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
}

/// A config that passed validation, with typed fields and paths resolved
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    /// As written (relative paths kept); embedded in the manifest.
    pub snapshot: PipelineConfig,
    pub dataset: Dataset,
    /// `None` selects every partition.
    pub partition: Option<Partition>,
    pub claims: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub provider: ProviderKind,
    pub fixture: Option<PathBuf>,
    pub backend: BackendKind,
    pub mock_file: Option<PathBuf>,
    pub template: PromptTemplate,
    pub policy: FilterPolicy,
}

impl ValidatedConfig {
    pub fn retriever_config(&self) -> RetrieverConfig {
        let r = &self.snapshot.retrieval;
        RetrieverConfig {
            offline: r.offline,
            concurrency: r.concurrency.max(1),
            retry: RetryPolicy { attempts: r.retry_attempts.max(1), base_delay_ms: r.retry_base_delay_ms },
            requests_per_second: r.requests_per_second,
            burst: r.burst,
        }
    }

    pub fn google_config(&self) -> GoogleProviderConfig {
        let r = &self.snapshot.retrieval;
        let mut c = GoogleProviderConfig::default();
        if let Some(endpoint) = &r.endpoint {
            c.endpoint = endpoint.clone();
        }
        c.engine_id = r
            .engine_id
            .clone()
            .or_else(|| std::env::var(SEARCH_CX_ENV).ok())
            .unwrap_or_default();
        c
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .and_then(|s| text.get(..s.start))
                .map(|head| format!("line {}", head.lines().count().max(1)))
                .unwrap_or_else(|| "config".into());
            vec![ConfigIssue::new(&field, message)]
        })
    }

    /// Reads and validates a config file. Relative paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<ValidatedConfig, Vec<ConfigIssue>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![ConfigIssue::new("config", format!("cannot read {}: {e}", path.display()))])?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text)?.validate(&base)
    }

    /// Checks every field and reports all problems together.
    pub fn validate(self, base_dir: &Path) -> Result<ValidatedConfig, Vec<ConfigIssue>> {
        let mut issues = Vec::new();

        let dataset = match self.dataset.parse::<Dataset>() {
            Ok(d) => Some(d),
            Err(_) => {
                issues.push(ConfigIssue::new("dataset", format!("unknown dataset `{}` (expected rawfc or liar)", self.dataset)));
                None
            }
        };
        let partition = match self.partition.trim().to_ascii_lowercase().as_str() {
            "all" => Some(None),
            other => match other.parse::<Partition>() {
                Ok(p) => Some(Some(p)),
                Err(e) => {
                    issues.push(ConfigIssue::new("partition", format!("{e} (expected train, validation, test or all)")));
                    None
                }
            },
        };

        let claims = match &self.paths.claims {
            Some(p) => {
                let p = resolve(base_dir, p);
                if !p.exists() {
                    issues.push(ConfigIssue::new("paths.claims", format!("{} does not exist", p.display())));
                }
                Some(p)
            }
            None => {
                issues.push(ConfigIssue::new("paths.claims", "missing"));
                None
            }
        };
        let output_dir = match &self.paths.output_dir {
            Some(p) => Some(resolve(base_dir, p)),
            None => {
                issues.push(ConfigIssue::new("paths.output_dir", "missing"));
                None
            }
        };
        let cache_dir = self.paths.cache_dir.as_ref().map(|p| resolve(base_dir, p));

        let r = &self.retrieval;
        let provider = match r.provider.as_str() {
            "google" => Some(ProviderKind::Google),
            "fixture" => Some(ProviderKind::Fixture),
            other => {
                issues.push(ConfigIssue::new("retrieval.provider", format!("unknown provider `{other}` (expected google or fixture)")));
                None
            }
        };
        let fixture = r.fixture.as_ref().map(|p| resolve(base_dir, p));
        if provider == Some(ProviderKind::Fixture) {
            match &fixture {
                None => issues.push(ConfigIssue::new("retrieval.fixture", "required for the fixture provider")),
                Some(p) if !p.is_file() => {
                    issues.push(ConfigIssue::new("retrieval.fixture", format!("{} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if r.max_results == 0 {
            issues.push(ConfigIssue::new("retrieval.max_results", "must be at least 1"));
        }
        if !(r.requests_per_second >= 0.0 && r.requests_per_second.is_finite()) {
            issues.push(ConfigIssue::new("retrieval.requests_per_second", "must be a finite non-negative number"));
        }
        if r.offline && cache_dir.is_none() {
            issues.push(ConfigIssue::new("paths.cache_dir", "required when retrieval.offline is set"));
        }

        let backend = match self.backend.kind.as_str() {
            "mock" => Some(BackendKind::Mock),
            "http" => Some(BackendKind::Http),
            other => {
                issues.push(ConfigIssue::new("backend.kind", format!("unknown backend `{other}` (expected mock or http)")));
                None
            }
        };
        let mock_file = self.backend.mock_file.as_ref().map(|p| resolve(base_dir, p));
        if backend == Some(BackendKind::Mock) {
            match &mock_file {
                None => issues.push(ConfigIssue::new("backend.mock_file", "required for the mock backend")),
                Some(p) if !p.is_file() => {
                    issues.push(ConfigIssue::new("backend.mock_file", format!("{} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let Err(e) = self.decode.validate() {
            issues.push(ConfigIssue::new("decode", e));
        }

        let template = dataset.and_then(|d| match self.template.resolve(d.taxonomy()) {
            Ok(t) => Some(t),
            Err(e) => {
                issues.push(ConfigIssue::new("template", e.to_string()));
                None
            }
        });

        if !issues.is_empty() {
            return Err(issues);
        }
        // Every `None` above pushed an issue, so these are all present.
        let policy = self.filter.policy();
        Ok(ValidatedConfig {
            dataset: dataset.expect("validated"),
            partition: partition.expect("validated"),
            claims: claims.expect("validated"),
            cache_dir,
            output_dir: output_dir.expect("validated"),
            provider: provider.expect("validated"),
            fixture,
            backend: backend.expect("validated"),
            mock_file,
            template: template.expect("validated"),
            policy,
            snapshot: self,
        })
    }
}
