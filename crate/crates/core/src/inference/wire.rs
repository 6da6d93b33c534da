//! HTTP backend.
//!
//! Two request shapes are supported:
//! - `simple`: `POST {model, prompt, image}` with a base64 PNG, answered by
//!   `{text}`;
//! - `chat`: a chat-completion body with one user message holding a text
//!   part and an `image_url` data-URI part, answered by
//!   `choices[0].message.content`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, CoordConvention, ViewRequest};

pub const ENV_URL: &str = "R_VLM_BACKEND_URL";
pub const ENV_TOKEN: &str = "R_VLM_BACKEND_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WireApi {
    #[default]
    Simple,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    pub url: String,
    /// Sent as `Authorization: Bearer <token>`.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub model: String,
    pub api: WireApi,
    pub convention: CoordConvention,
    pub timeout_secs: u64,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            token: None,
            model: "default".into(),
            api: WireApi::Simple,
            convention: CoordConvention::default(),
            timeout_secs: 120,
        }
    }
}

impl WireConfig {
    /// Apply `R_VLM_BACKEND_URL` / `R_VLM_BACKEND_TOKEN` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            if !url.is_empty() {
                self.url = url;
            }
        }
        if let Ok(token) = std::env::var(ENV_TOKEN) {
            if !token.is_empty() {
                self.token = Some(token);
            }
        }
        self
    }
}

pub struct WireBackend {
    cfg: WireConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for WireBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireBackend").field("url", &self.cfg.url).field("model", &self.cfg.model).finish()
    }
}

impl WireBackend {
    pub fn new(cfg: WireConfig) -> Result<Self, BackendError> {
        if cfg.url.is_empty() {
            return Err(BackendError::Protocol(format!("no backend URL configured (set {ENV_URL} or backend.url)")));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    pub fn config(&self) -> &WireConfig {
        &self.cfg
    }

    pub fn request_body(&self, prompt: &str, image_png: &[u8]) -> Value {
        let image = base64::engine::general_purpose::STANDARD.encode(image_png);
        match self.cfg.api {
            WireApi::Simple => json!({
                "model": self.cfg.model,
                "prompt": prompt,
                "image": image,
            }),
            WireApi::Chat => json!({
                "model": self.cfg.model,
                "messages": [{
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}},
                    ],
                }],
            }),
        }
    }

    pub fn extract_text(&self, body: &Value) -> Result<String, BackendError> {
        let text = match self.cfg.api {
            WireApi::Simple => body.get("text"),
            WireApi::Chat => body.pointer("/choices/0/message/content"),
        };
        text.and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol(format!("response has no text field: {body}")))
    }
}

impl Backend for WireBackend {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError> {
        let png = request
            .image_png
            .as_deref()
            .ok_or_else(|| BackendError::Protocol("wire backend needs image bytes".into()))?;
        let mut req = self.client.post(&self.cfg.url).json(&self.request_body(request.prompt, png));
        if let Some(token) = &self.cfg.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(BackendError::Transport(format!("server returned {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Protocol(format!("server returned {status}: {body}")));
        }
        let body: Value = resp.json().map_err(|e| BackendError::Protocol(format!("invalid JSON response: {e}")))?;
        self.extract_text(&body)
    }

    fn convention(&self) -> CoordConvention {
        self.cfg.convention
    }
}
