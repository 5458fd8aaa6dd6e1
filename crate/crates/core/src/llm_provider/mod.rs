//! Text/code generation backends.
//!
//! A provider has two capabilities, `complete` and `edit`. Providers never
//! retry on their own; the orchestrator owns retry accounting and the
//! sampling schedule.

mod http;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompting::RenderedPrompt;

pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{CallRecord, MatchKey, OpFilter, ProviderOp, ScriptedProvider, TranscriptEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            top_p: 1.0,
            max_output_tokens: 512,
            stop_sequences: Vec::new(),
            seed_hint: None,
        }
    }
}

impl GenerationParams {
    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::invalid_input(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::invalid_input(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::invalid_input("max_output_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    /// Empty whenever `finish_reason` is `Error`.
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub provider_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderErrorKind {
    Timeout,
    Auth,
    RateLimit,
    MalformedResponse,
    Transport,
    InvalidInput,
}

impl ProviderErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderErrorKind::Timeout => "timeout",
            ProviderErrorKind::Auth => "auth",
            ProviderErrorKind::RateLimit => "rate-limit",
            ProviderErrorKind::MalformedResponse => "malformed-response",
            ProviderErrorKind::Transport => "transport",
            ProviderErrorKind::InvalidInput => "invalid-input",
        }
    }

    /// Whether another attempt may succeed. Credentials and caller mistakes
    /// do not fix themselves.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ProviderErrorKind::Auth | ProviderErrorKind::InvalidInput)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub message: String,
    pub retryable: bool,
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "provider {} error: {}", self.kind.as_str(), self.message)
    }
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            retryable: kind.is_retryable(),
        }
    }

    pub fn invalid_input(message: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::InvalidInput, message)
    }
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError>;

    /// Revises `input` according to a natural-language instruction.
    fn edit(
        &self,
        input: &str,
        instruction: &str,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError>;
}

pub(crate) fn check_complete_args(
    prompt: &RenderedPrompt,
    params: &GenerationParams,
) -> Result<(), ProviderError> {
    if prompt.text.trim().is_empty() {
        return Err(ProviderError::invalid_input("prompt must not be empty"));
    }
    params.validate()
}

pub(crate) fn check_edit_args(
    input: &str,
    instruction: &str,
    params: &GenerationParams,
) -> Result<(), ProviderError> {
    if input.trim().is_empty() {
        return Err(ProviderError::invalid_input("edit input must not be empty"));
    }
    if instruction.trim().is_empty() {
        return Err(ProviderError::invalid_input("edit instruction must not be empty"));
    }
    params.validate()
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn strip_stop_sequences(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_owned()
}
