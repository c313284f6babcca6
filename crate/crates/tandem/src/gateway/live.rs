//! Live HTTP backend speaking the common JSON chat-completions and
//! embeddings interface (`POST {base}/chat/completions`,
//! `POST {base}/embeddings`, bearer credential).

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    Backend, BackendSession, ChatRequest, ChatResponse, EmbedResponse, EmbeddingVector,
    GatewayError,
};

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "TANDEM_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    pub api_key: String,
    pub request_timeout: Duration,
}

impl LiveConfig {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: &str,
        model: &str,
        embedding_model: &str,
    ) -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::MissingCredential(API_KEY_ENV.into()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            embedding_model: embedding_model.to_string(),
            api_key,
            request_timeout: Duration::from_secs(120),
        })
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Rejected(format!("failed to build HTTP client: {e}")))?;
        Ok(Self { config, client })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}{path}", self.config.endpoint);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(GatewayError::Transient(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(GatewayError::Rejected(format!(
                "{url}: HTTP {status}: {detail}"
            )));
        }
        response
            .json()
            .map_err(|e| GatewayError::Transient(format!("{url}: bad response body: {e}")))
    }
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireChatChoice {
    message: WireChatMessage,
}

#[derive(Deserialize)]
struct WireChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct WireEmbedResponse {
    data: Vec<WireEmbedding>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

impl Backend for LiveBackend {
    fn start_session(&self) -> Box<dyn BackendSession> {
        Box::new(LiveSession {
            config: self.config.clone(),
            client: self.client.clone(),
        })
    }
}

struct LiveSession {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveSession {
    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        LiveBackend {
            config: self.config.clone(),
            client: self.client.clone(),
        }
        .post(path, body)
    }
}

impl BackendSession for LiveSession {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let raw = self.post("/chat/completions", body)?;
        let parsed: WireChatResponse = serde_json::from_value(raw)
            .map_err(|e| GatewayError::Transient(format!("malformed chat response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Transient("chat response had no choices".into()))?;
        let usage = parsed.usage.unwrap_or(WireUsage {
            prompt_tokens: super::whitespace_tokens(&request.rendered_text()),
            completion_tokens: super::whitespace_tokens(&text),
        });
        Ok(ChatResponse {
            text,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
        })
    }

    fn embed(&mut self, texts: &[String]) -> Result<EmbedResponse, GatewayError> {
        let body = json!({
            "model": self.config.embedding_model,
            "input": texts,
        });
        let raw = self.post("/embeddings", body)?;
        let parsed: WireEmbedResponse = serde_json::from_value(raw)
            .map_err(|e| GatewayError::Transient(format!("malformed embeddings response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::Transient(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut vectors = Vec::with_capacity(parsed.data.len());
        for item in parsed.data {
            vectors.push(EmbeddingVector::new(item.embedding)?);
        }
        let input_tokens = parsed
            .usage
            .map(|u| u.prompt_tokens)
            .unwrap_or_else(|| texts.iter().map(|t| super::whitespace_tokens(t)).sum());
        Ok(EmbedResponse {
            vectors,
            input_tokens,
        })
    }
}
