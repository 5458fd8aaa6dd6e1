use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_complete_args, check_edit_args, strip_stop_sequences, FinishReason, GenerationParams,
    LlmProvider, ProviderError, ProviderErrorKind, ProviderResponse,
};
use crate::prompting::{RenderedPrompt, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderOp {
    Complete,
    Edit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpFilter {
    #[default]
    Any,
    Complete,
    Edit,
}

impl OpFilter {
    fn admits(&self, op: ProviderOp) -> bool {
        match self {
            OpFilter::Any => true,
            OpFilter::Complete => op == ProviderOp::Complete,
            OpFilter::Edit => op == ProviderOp::Edit,
        }
    }
}

/// How a transcript entry selects calls. The subject is the prompt text for
/// `complete` and `input + "\n" + instruction` for `edit`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKey {
    #[default]
    Any,
    Contains(String),
    /// Hex SHA-256 of the subject.
    PromptHash(String),
}

impl MatchKey {
    fn matches(&self, subject: &str, subject_hash: &str) -> bool {
        match self {
            MatchKey::Any => true,
            MatchKey::Contains(needle) => subject.contains(needle.as_str()),
            MatchKey::PromptHash(hash) => hash.eq_ignore_ascii_case(subject_hash),
        }
    }
}

/// One scripted reply. Exactly one of `text` and `error` is used; `error`
/// wins when both are present.
///
/// JSON form: `{"op": "complete", "match": {"contains": "### SQL"}, "text": "SELECT 1"}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default)]
    pub op: OpFilter,
    #[serde(default, rename = "match")]
    pub key: MatchKey,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ProviderErrorKind>,
}

impl TranscriptEntry {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            op: OpFilter::Any,
            key: MatchKey::Any,
            text: text.into(),
            finish_reason: None,
            error: None,
        }
    }

    pub fn error(kind: ProviderErrorKind) -> Self {
        Self {
            error: Some(kind),
            ..Self::text("")
        }
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.key = MatchKey::Contains(needle.into());
        self
    }

    pub fn when_hash(mut self, hash: impl Into<String>) -> Self {
        self.key = MatchKey::PromptHash(hash.into());
        self
    }

    pub fn on(mut self, op: OpFilter) -> Self {
        self.op = op;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub op: ProviderOp,
    /// Prompt text for `complete`, input text for `edit`.
    pub input: String,
    pub instruction: Option<String>,
    pub prompt_kind: Option<TemplateKind>,
    pub params: GenerationParams,
    /// Index of the transcript entry consumed, if any matched.
    pub entry: Option<usize>,
}

#[derive(Debug, Default)]
struct ScriptState {
    consumed: Vec<bool>,
    log: Vec<CallRecord>,
}

/// Deterministic provider replaying a fixed transcript. Each call consumes
/// the first unconsumed entry that matches it; calls with no match fail
/// with `malformed-response`.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    entries: Vec<TranscriptEntry>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        let consumed = vec![false; entries.len()];
        Self {
            id: "scripted".into(),
            entries,
            state: Mutex::new(ScriptState {
                consumed,
                log: Vec::new(),
            }),
        }
    }

    /// Transcript of plain-text replies consumed in order.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(TranscriptEntry::text).collect())
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state.lock().expect("script lock poisoned").log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("script lock poisoned").log.len()
    }

    pub fn remaining(&self) -> usize {
        self.state
            .lock()
            .expect("script lock poisoned")
            .consumed
            .iter()
            .filter(|c| !**c)
            .count()
    }

    fn respond(
        &self,
        op: ProviderOp,
        subject: &str,
        mut record: CallRecord,
        stops: &[String],
    ) -> Result<ProviderResponse, ProviderError> {
        let subject_hash = hex::encode(Sha256::digest(subject.as_bytes()));
        let mut state = self.state.lock().expect("script lock poisoned");
        let found = self.entries.iter().enumerate().position(|(i, entry)| {
            !state.consumed[i] && entry.op.admits(op) && entry.key.matches(subject, &subject_hash)
        });
        record.entry = found;
        state.log.push(record);
        let Some(index) = found else {
            return Err(ProviderError::new(
                ProviderErrorKind::MalformedResponse,
                "scripted transcript has no remaining entry for this call",
            ));
        };
        state.consumed[index] = true;
        let entry = &self.entries[index];
        if let Some(kind) = entry.error {
            return Err(ProviderError::new(kind, "scripted failure"));
        }
        let finish_reason = entry.finish_reason.unwrap_or(FinishReason::Stop);
        let text = if finish_reason == FinishReason::Error {
            String::new()
        } else {
            strip_stop_sequences(&entry.text, stops)
        };
        Ok(ProviderResponse {
            text,
            finish_reason,
            latency_ms: 0,
            provider_id: self.id.clone(),
        })
    }
}

impl LlmProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError> {
        check_complete_args(prompt, params)?;
        let record = CallRecord {
            op: ProviderOp::Complete,
            input: prompt.text.clone(),
            instruction: None,
            prompt_kind: Some(prompt.kind),
            params: params.clone(),
            entry: None,
        };
        self.respond(ProviderOp::Complete, &prompt.text, record, &params.stop_sequences)
    }

    fn edit(
        &self,
        input: &str,
        instruction: &str,
        params: &GenerationParams,
    ) -> Result<ProviderResponse, ProviderError> {
        check_edit_args(input, instruction, params)?;
        let subject = format!("{input}\n{instruction}");
        let record = CallRecord {
            op: ProviderOp::Edit,
            input: input.to_owned(),
            instruction: Some(instruction.to_owned()),
            prompt_kind: None,
            params: params.clone(),
            entry: None,
        };
        self.respond(ProviderOp::Edit, &subject, record, &params.stop_sequences)
    }
}
