use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecodeParams, InferenceError};

pub const INFERENCE_URL_ENV: &str = "FACTCHECK_INFERENCE_URL";
pub const INFERENCE_KEY_ENV: &str = "FACTCHECK_INFERENCE_KEY";

/// A text generator. With `temperature == 0` and unchanged backend state,
/// `generate` must be a pure function of its arguments.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// `claim_id` identifies the request for lookup-style backends; remote
    /// backends ignore it.
    fn generate(&self, claim_id: &str, prompt: &str, params: &DecodeParams) -> Result<String, InferenceError>;

    /// Upper bound on concurrent `generate` calls.
    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}

/// Hex SHA-256 of the prompt, used as a mock lookup key.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Cuts `text` at the first stop sequence.
pub fn apply_stop_sequences<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockKey {
    #[default]
    ClaimId,
    PromptHash,
}

/// Canned responses keyed by claim id (rule-based mock) or by prompt hash
/// (deterministic mock).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockBackend {
    #[serde(default)]
    pub key: MockKey,
    pub responses: BTreeMap<String, String>,
    /// Served on a lookup miss; a miss is an error when absent.
    #[serde(default)]
    pub default: Option<String>,
}

impl MockBackend {
    pub fn by_claim_id<I, K, V>(responses: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            key: MockKey::ClaimId,
            responses: responses.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            default: None,
        }
    }

    pub fn by_prompt_hash<I, K, V>(responses: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self { key: MockKey::PromptHash, ..Self::by_claim_id(responses) }
    }

    pub fn from_file(path: &Path) -> Result<Self, InferenceError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| InferenceError::Config(format!("cannot read mock file {}: {e}", path.display())))?;
        serde_json::from_str(&body).map_err(|e| InferenceError::Config(format!("invalid mock file {}: {e}", path.display())))
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        match self.key {
            MockKey::ClaimId => "mock-rule",
            MockKey::PromptHash => "mock-hash",
        }
    }

    fn generate(&self, claim_id: &str, prompt: &str, params: &DecodeParams) -> Result<String, InferenceError> {
        let key = match self.key {
            MockKey::ClaimId => claim_id.to_string(),
            MockKey::PromptHash => prompt_hash(prompt),
        };
        let text = self
            .responses
            .get(&key)
            .or(self.default.as_ref())
            .ok_or_else(|| InferenceError::Backend(format!("mock has no response for `{key}`")))?;
        Ok(apply_stop_sequences(text, &params.stop_sequences).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Base URL such as `http://localhost:8000/v1`; `/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub retry_base_delay_ms: u64,
    pub max_concurrency: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_ms: 60_000,
            attempts: 3,
            retry_base_delay_ms: 1_000,
            max_concurrency: 4,
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// Client for a completions-style endpoint: POST `{model, prompt,
/// max_tokens, temperature, stop}`, generated text at `choices[0].text`.
pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, api_key: Option<String>) -> Result<Self, InferenceError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| InferenceError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { config, api_key, http })
    }

    /// Base URL and key from [`INFERENCE_URL_ENV`] / [`INFERENCE_KEY_ENV`];
    /// the URL falls back to `config.base_url`.
    pub fn from_env(mut config: HttpBackendConfig) -> Result<Self, InferenceError> {
        if let Ok(url) = std::env::var(INFERENCE_URL_ENV) {
            if !url.trim().is_empty() {
                config.base_url = url;
            }
        }
        let key = std::env::var(INFERENCE_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &str, params: &DecodeParams) -> Result<String, InferenceError> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: params.max_new_tokens,
            temperature: params.temperature,
            stop: &params.stop_sequences,
        };
        let mut request = self.http.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| InferenceError::Transport { attempts: 1, message: e.to_string() })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| InferenceError::Transport { attempts: 1, message: e.to_string() })?;
        if !status.is_success() {
            return Err(InferenceError::Status { status: status.as_u16(), body: text });
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| InferenceError::Malformed { message: e.to_string(), body: text.clone() })?;
        if let Some(error) = parsed.error {
            return Err(InferenceError::Backend(error.to_string()));
        }
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| InferenceError::Malformed { message: "response has no choices".into(), body: text })
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn generate(&self, _claim_id: &str, prompt: &str, params: &DecodeParams) -> Result<String, InferenceError> {
        let attempts = self.config.attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(prompt, params) {
                Ok(text) => return Ok(text),
                Err(err) if attempt < attempts && err.is_retryable() => {
                    let delay = self.config.retry_base_delay_ms.saturating_mul(1 << (attempt - 1).min(20));
                    log::warn!("completion attempt {attempt} failed ({err}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(InferenceError::Transport { message, .. }) => {
                    return Err(InferenceError::Transport { attempts: attempt, message })
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_sequences_cut_at_earliest() {
        let stops = vec!["\n".to_string(), "###".to_string()];
        assert_eq!(apply_stop_sequences("false\nbecause", &stops), "false");
        assert_eq!(apply_stop_sequences("true ### x\n", &stops), "true ");
        assert_eq!(apply_stop_sequences("true", &[]), "true");
    }

    #[test]
    fn mock_lookup_modes() {
        let params = DecodeParams::default();
        let rule = MockBackend::by_claim_id([("c1", "false\nexplanation")]);
        assert_eq!(rule.generate("c1", "anything", &params).unwrap(), "false");
        assert!(rule.generate("c2", "anything", &params).is_err());

        let hashed = MockBackend::by_prompt_hash([(prompt_hash("p"), "true")]);
        assert_eq!(hashed.generate("ignored", "p", &params).unwrap(), "true");
        assert!(hashed.generate("ignored", "q", &params).is_err());

        let with_default = MockBackend { default: Some("half".into()), ..MockBackend::default() };
        assert_eq!(with_default.generate("x", "y", &params).unwrap(), "half");
    }

    #[test]
    fn mock_file_format() {
        let m: MockBackend = serde_json::from_str(r#"{"key":"prompt_hash","responses":{"ab":"true"}}"#).unwrap();
        assert_eq!(m.key, MockKey::PromptHash);
        let m: MockBackend = serde_json::from_str(r#"{"responses":{"c":"true"}}"#).unwrap();
        assert_eq!(m.key, MockKey::ClaimId);
    }
}
