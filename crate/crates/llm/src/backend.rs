//! Completion backends: a table-driven mock and a chat-style HTTP client.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use cuefuse_core::{JointOutcome, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::LlmError;

/// Everything a backend may look at when producing one completion.
#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub outcome: JointOutcome,
    pub task: Task,
    pub sample_index: usize,
    /// 0 for the first try, incremented on every retry.
    pub attempt: usize,
}

pub trait Backend: Send + Sync {
    /// Stable identity folded into cache keys, so answers from different
    /// models or mock tables never mix.
    fn id(&self) -> String;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, LlmError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Response `(sample_index + attempt) mod len`.
    #[default]
    Cyclic,
    /// Uniform pick from a ChaCha stream keyed by seed, sample and attempt.
    Seeded,
}

/// Canned responses. `overrides` is keyed by `"<task>/<outcome>"`, e.g.
/// `"basic_emotion/CC"`, and falls back to `responses`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub mode: MockMode,
    #[serde(default)]
    pub seed: u64,
    pub responses: Vec<String>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Vec<String>>,
}

impl MockTable {
    pub fn constant(response: &str) -> Self {
        Self::cyclic(&[response])
    }

    pub fn cyclic(responses: &[&str]) -> Self {
        MockTable {
            mode: MockMode::Cyclic,
            seed: 0,
            responses: responses.iter().map(|s| s.to_string()).collect(),
            overrides: BTreeMap::new(),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.responses.is_empty() {
            return Err(LlmError::MockTable("`responses` is empty".into()));
        }
        if let Some((key, _)) = self.overrides.iter().find(|(_, v)| v.is_empty()) {
            return Err(LlmError::MockTable(format!("override `{key}` is empty")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MockBackend {
    table: MockTable,
    id: String,
}

impl MockBackend {
    pub fn new(table: MockTable) -> Result<Self, LlmError> {
        table.validate()?;
        let bytes = serde_json::to_vec(&table).expect("mock table serializes");
        let id = format!("mock:{}", hex::encode(&Sha256::digest(&bytes)[..8]));
        Ok(MockBackend { table, id })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::MockTable(format!("{}: {e}", path.display())))?;
        let table = serde_json::from_str(&text)
            .map_err(|e| LlmError::MockTable(format!("{}: {e}", path.display())))?;
        Self::new(table)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, r: &CompletionRequest<'_>) -> Result<String, LlmError> {
        let key = format!("{}/{}", r.task, r.outcome);
        let list = self.table.overrides.get(&key).unwrap_or(&self.table.responses);
        let i = match self.table.mode {
            MockMode::Cyclic => (r.sample_index + r.attempt) % list.len(),
            MockMode::Seeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.table.seed);
                rng.set_stream(((r.sample_index as u64) << 8) | r.attempt as u64);
                rng.random_range(0..list.len())
            }
        };
        Ok(list[i].clone())
    }
}

pub const DEFAULT_API_KEY_ENV: &str = "CUEFUSE_API_KEY";

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    60
}

fn default_temperature() -> f64 {
    1.0
}

/// Any service accepting `POST {base_url}/chat/completions` with a
/// `messages` array and answering with `choices[0].message.content`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveBackend {
    /// Reads the key from the configured environment variable.
    pub fn from_env(config: LiveConfig) -> Result<Self, LlmError> {
        match std::env::var(&config.api_key_env) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::with_key(config, key)),
            _ => Err(LlmError::AuthMissing(config.api_key_env.clone())),
        }
    }

    pub fn with_key(config: LiveConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LiveBackend {
            config,
            api_key,
            agent,
        }
    }
}

impl Backend for LiveBackend {
    fn id(&self) -> String {
        format!("live:{}:{}", self.config.base_url, self.config.model)
    }

    fn complete(&self, r: &CompletionRequest<'_>) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": r.prompt}],
        });
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| LlmError::BackendUnavailable(format!("{url}: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::BackendUnavailable(format!("{url}: HTTP {status}")));
        }
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::BackendUnavailable(format!("{url}: bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                LlmError::BackendUnavailable(format!("{url}: response lacks choices[0].message.content"))
            })
    }
}
