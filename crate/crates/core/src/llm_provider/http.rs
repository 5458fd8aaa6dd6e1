use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_complete_args, check_edit_args, strip_stop_sequences, FinishReason, GenerationParams,
    LlmProvider, ProviderError, ProviderErrorKind, ProviderResponse,
};
use crate::prompting::RenderedPrompt;

pub const DEFAULT_PROVIDER_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    #[serde(default = "default_provider_id")]
    pub id: String,
    pub completion_url: String,
    /// Instruction-edit endpoint. When absent, edits are sent to the
    /// completion endpoint as an adapted prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_url: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_provider_id() -> String {
    "http".into()
}

fn default_timeout_ms() -> u64 {
    DEFAULT_PROVIDER_TIMEOUT_MS
}

impl HttpProviderConfig {
    pub fn new(completion_url: impl Into<String>) -> Self {
        Self {
            id: default_provider_id(),
            completion_url: completion_url.into(),
            edit_url: None,
            model: String::new(),
            api_key: None,
            timeout_ms: DEFAULT_PROVIDER_TIMEOUT_MS,
        }
    }
}

/// Provider speaking a completion-style JSON protocol.
///
/// Request: `{"model", "prompt", "temperature", "top_p", "max_tokens", "stop"?, "seed"?}`.
/// Response text is read from `choices[0].text`, with chat-style
/// `choices[0].message.content` and a bare `{"text"}` also accepted.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("id", &self.config.id)
            .field("completion_url", &self.config.completion_url)
            .field("edit_url", &self.config.edit_url)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }

    fn post(&self, url: &str, body: &Value, stops: &[String]) -> Result<ProviderResponse, ProviderError> {
        let started = Instant::now();
        let mut request = self.agent.post(url).header("Accept", "application/json");
        if let Some(key) = self.config.api_key.as_deref().filter(|k| !k.is_empty()) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(transport_error)?;
        if let Some(kind) = status_error(status) {
            return Err(ProviderError::new(
                kind,
                format!("HTTP {status}: {}", snippet(&text)),
            ));
        }
        let (raw, finish_reason) = parse_body(&text)?;
        let text = match finish_reason {
            FinishReason::Error => String::new(),
            _ => strip_stop_sequences(&raw, stops),
        };
        Ok(ProviderResponse {
            text,
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_id: self.config.id.clone(),
        })
    }

    fn completion_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_output_tokens,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        if let Some(seed) = params.seed_hint {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl LlmProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError> {
        check_complete_args(prompt, params)?;
        let body = self.completion_body(&prompt.text, params);
        self.post(&self.config.completion_url, &body, &params.stop_sequences)
    }

    fn edit(
        &self,
        input: &str,
        instruction: &str,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError> {
        check_edit_args(input, instruction, params)?;
        match &self.config.edit_url {
            Some(url) => {
                let body = json!({
                    "model": self.config.model,
                    "input": input,
                    "instruction": instruction,
                    "temperature": params.temperature,
                    "top_p": params.top_p,
                });
                self.post(url, &body, &params.stop_sequences)
            }
            None => {
                let prompt = edit_as_completion(input, instruction);
                let body = self.completion_body(&prompt, params);
                self.post(&self.config.completion_url, &body, &params.stop_sequences)
            }
        }
    }
}

/// Prompt used when the backend has no dedicated edit endpoint.
pub fn edit_as_completion(input: &str, instruction: &str) -> String {
    format!(
        "Rewrite the SQL below according to the instruction. Reply with the revised SQL only.\n\n\
         ### SQL\n{input}\n\n### Instruction\n{instruction}\n\n### Revised SQL\n"
    )
}

fn status_error(status: u16) -> Option<ProviderErrorKind> {
    match status {
        200..=299 => None,
        401 | 403 => Some(ProviderErrorKind::Auth),
        408 => Some(ProviderErrorKind::Timeout),
        429 => Some(ProviderErrorKind::RateLimit),
        400..=499 => Some(ProviderErrorKind::MalformedResponse),
        _ => Some(ProviderErrorKind::Transport),
    }
}

fn transport_error(err: ureq::Error) -> ProviderError {
    let kind = match err {
        ureq::Error::Timeout(_) => ProviderErrorKind::Timeout,
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
            ProviderErrorKind::Timeout
        }
        ureq::Error::Json(_) => ProviderErrorKind::MalformedResponse,
        _ => ProviderErrorKind::Transport,
    };
    ProviderError::new(kind, err.to_string())
}

fn snippet(text: &str) -> String {
    const MAX: usize = 200;
    match text.char_indices().nth(MAX) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_owned(),
    }
}

fn malformed(message: impl Into<String>) -> ProviderError {
    ProviderError::new(ProviderErrorKind::MalformedResponse, message)
}

fn parse_body(text: &str) -> Result<(String, FinishReason), ProviderError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| malformed(format!("response is not JSON: {e}")))?;
    if let Some(err) = value.get("error").filter(|e| !e.is_null()) {
        return Err(malformed(format!("provider reported error: {err}")));
    }
    let (content, finish) = match value.get("choices").and_then(Value::as_array) {
        Some(choices) => {
            let first = choices.first().ok_or_else(|| malformed("empty choices array"))?;
            let content = first
                .get("text")
                .or_else(|| first.get("message").and_then(|m| m.get("content")))
                .and_then(Value::as_str);
            (content, first.get("finish_reason").and_then(Value::as_str))
        }
        None => (
            value.get("text").and_then(Value::as_str),
            value.get("finish_reason").and_then(Value::as_str),
        ),
    };
    let content = content.ok_or_else(|| malformed("response has no completion text"))?;
    let finish_reason = match finish {
        Some("length") | Some("max_tokens") => FinishReason::Length,
        Some("error") => FinishReason::Error,
        _ => FinishReason::Stop,
    };
    Ok((content.to_owned(), finish_reason))
}
