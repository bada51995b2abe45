//! OpenAI-compatible completion client and caption-endpoint adapter.
//!
//! Single-shot completions at temperature 0 with bounded retry on transient
//! faults. Auth tokens come from the environment; failures surface with
//! their status and are never silently replaced by mock output.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::behavior::CaptionBackend;
use crate::error::{Error, Result};
use crate::llm::{ForwardOutput, LlmBackend, MultimodalTokens, PrefixEmbeddings, TextGenerate, TokenId};

/// Connection settings for a completion or caption endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_attempts() -> u32 {
    3
}
fn default_max_tokens() -> u32 {
    256
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// Completion-API language model backend.
pub struct HttpLlm {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Http {
                status: None,
                detail: e.to_string(),
            })?;
        Ok(HttpLlm { config, client })
    }

    fn bearer(&self) -> Result<Option<String>> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(key)),
                Err(_) => Err(Error::Http {
                    status: None,
                    detail: format!("api key environment variable {var} is not set"),
                }),
            },
        }
    }

    fn post_with_retry(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let bearer = self.bearer()?;
        let mut last_err = None;
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut req = self.client.post(url).json(body);
            if let Some(token) = &bearer {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<serde_json::Value>().map_err(|e| Error::Http {
                            status: Some(status.as_u16()),
                            detail: format!("bad response body: {e}"),
                        });
                    }
                    let detail = resp.text().unwrap_or_default();
                    let err = Error::Http {
                        status: Some(status.as_u16()),
                        detail,
                    };
                    if status.is_server_error() {
                        last_err = Some(err);
                        continue;
                    }
                    return Err(err); // 4xx: retrying will not help
                }
                Err(e) => {
                    last_err = Some(Error::Http {
                        status: None,
                        detail: e.to_string(),
                    });
                }
            }
        }
        Err(last_err.unwrap_or(Error::Http {
            status: None,
            detail: "request failed with no attempts".into(),
        }))
    }
}

impl TextGenerate for HttpLlm {
    fn generate(&self, prompt: &str) -> Result<String> {
        let url = format!("{}/v1/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::to_value(CompletionRequest {
            model: &self.config.model,
            prompt,
            temperature: 0.0,
            max_tokens: self.config.max_tokens,
        })?;
        let value = self.post_with_retry(&url, &body)?;
        let parsed: CompletionResponse = serde_json::from_value(value).map_err(|e| Error::Http {
            status: None,
            detail: format!("unexpected completion schema: {e}"),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or(Error::Http {
                status: None,
                detail: "completion response had no choices".into(),
            })
    }
}

impl LlmBackend for HttpLlm {
    fn tokenize(&self, prompt: &str) -> Vec<TokenId> {
        // whitespace proxy; remote backends do not expose their tokenizer
        prompt.split_whitespace().enumerate().map(|(i, _)| i).collect()
    }

    fn embedding_dim(&self) -> usize {
        0
    }

    fn context_limit(&self) -> usize {
        usize::MAX
    }

    fn num_layers(&self) -> usize {
        0
    }

    fn forward(
        &self,
        _prefixes: &PrefixEmbeddings,
        _prompt_tokens: &[TokenId],
        _mm_tokens: &MultimodalTokens,
    ) -> Result<ForwardOutput> {
        Err(Error::Unsupported(
            "the completion API exposes no forward embeddings; soft embeddings require the in-process model"
                .into(),
        ))
    }
}

/// Caption endpoint adapter: posts the image bytes, receives a caption.
pub struct HttpCaptioner {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpCaptioner {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Http {
                status: None,
                detail: e.to_string(),
            })?;
        Ok(HttpCaptioner { config, client })
    }
}

impl CaptionBackend for HttpCaptioner {
    fn caption(&self, image_ref: &Path, _tags: &[String]) -> Result<String> {
        let bytes = std::fs::read(image_ref)?;
        let b64 = base64_encode(&bytes);
        let url = format!("{}/v1/captions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "image_b64": b64,
        });
        let mut req = self.client.post(&url).json(&body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| Error::Http {
            status: None,
            detail: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Http {
                status: Some(status.as_u16()),
                detail: resp.text().unwrap_or_default(),
            });
        }
        let value: serde_json::Value = resp.json().map_err(|e| Error::Http {
            status: Some(status.as_u16()),
            detail: e.to_string(),
        })?;
        value
            .get("caption")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or(Error::Http {
                status: Some(status.as_u16()),
                detail: "caption response had no caption field".into(),
            })
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
