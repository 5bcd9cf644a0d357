//! Completion clients: the HTTP client for a remote chat-completions
//! service and a deterministic offline mock.

use std::collections::BTreeSet;
use std::time::Duration;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::FieldHasher;

/// Environment variable holding the remote service API key.
pub const API_KEY_ENV: &str = "AUG_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
}

impl ClientError {
    /// Short tag persisted in augmentation records.
    pub fn tag(&self) -> &'static str {
        match self {
            ClientError::Timeout => "timeout",
            ClientError::Transport(_) => "transport",
            ClientError::Http { .. } => "http_status",
            ClientError::MissingApiKey => "missing_api_key",
            ClientError::BadResponse(_) => "bad_response",
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns a prompt into raw completion text.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, ClientError>;

    fn name(&self) -> &str;
}

/// Offline client whose output is a pure function of `(prompt, params)`.
///
/// It locates the sample text between `prefix` and `suffix` in the prompt
/// (the default template's delimiters), then answers with a numbered list of
/// `variants` paraphrases: the sample's tokens shuffled with a seeded RNG,
/// followed by a `v{i}` variant token.
///
/// For testing audits, texts listed in `corrupt` get their first variant
/// prefixed with [`MockClient::FLIP_MARKER`], standing in for a generation
/// that no longer fits the parent label. Texts in `fail` time out.
#[derive(Debug, Clone)]
pub struct MockClient {
    pub variants: usize,
    pub seed: u64,
    pub prefix: String,
    pub suffix: String,
    pub corrupt: BTreeSet<String>,
    pub fail: BTreeSet<String>,
}

impl Default for MockClient {
    fn default() -> Self {
        Self {
            variants: 3,
            seed: 0,
            prefix: "Given the following text sample: ".into(),
            suffix: ", please generate".into(),
            corrupt: BTreeSet::new(),
            fail: BTreeSet::new(),
        }
    }
}

impl MockClient {
    pub const FLIP_MARKER: &'static str = "[label-flip]";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_variants(mut self, variants: usize) -> Self {
        self.variants = variants;
        self
    }

    fn extract<'a>(&self, prompt: &'a str) -> &'a str {
        let Some(start) = prompt.find(&self.prefix).map(|i| i + self.prefix.len()) else {
            return prompt;
        };
        match prompt.rfind(&self.suffix) {
            Some(end) if end >= start => &prompt[start..end],
            _ => &prompt[start..],
        }
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, ClientError> {
        let text = self.extract(prompt);
        if self.fail.contains(text) {
            return Err(ClientError::Timeout);
        }
        let mut h = FieldHasher::new();
        h.u64(self.seed)
            .field(prompt)
            .u64(params.temperature.to_bits())
            .u64(u64::from(params.max_tokens))
            .u64(params.seed.unwrap_or(u64::MAX));
        let base = h.seed();

        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut out = String::new();
        for i in 0..self.variants {
            let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(i as u64));
            let mut shuffled = tokens.clone();
            shuffled.shuffle(&mut rng);
            let flip = i == 0 && self.corrupt.contains(text);
            out.push_str(&format!(
                "{}. {}{} v{}\n",
                i + 1,
                if flip { "[label-flip] " } else { "" },
                shuffled.join(" "),
                i + 1
            ));
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// Client for an OpenAI-compatible `chat/completions` endpoint.
pub struct RemoteClient {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl RemoteClient {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ClientError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| ClientError::MissingApiKey)?;
        Ok(Self::new(endpoint, model, key, timeout))
    }
}

impl CompletionClient for RemoteClient {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, ClientError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = seed.into();
        }
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Status(status, resp) => ClientError::Http {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                },
                ureq::Error::Transport(t) => {
                    let msg = t.to_string();
                    if msg.contains("timed out") || msg.contains("Timeout") {
                        ClientError::Timeout
                    } else {
                        ClientError::Transport(msg)
                    }
                }
            })?;
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| ClientError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ClientError::BadResponse("no choices".into()))
    }

    fn name(&self) -> &str {
        "remote"
    }
}
