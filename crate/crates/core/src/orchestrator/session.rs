use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::chartspec::{ChartSpec, VegaInvalid};
use crate::datasource::{ExecutionError, ResultTable};
use crate::llm_provider::{GenerationParams, ProviderError};
use crate::prompting::TemplateKind;
use crate::sql_guard::ValidationVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Pending,
    SqlFailed,
    Succeeded,
    Summarizing,
    Complete,
}

impl SessionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionStatus::Pending => "pending",
            SessionStatus::SqlFailed => "sql-failed",
            SessionStatus::Succeeded => "succeeded",
            SessionStatus::Summarizing => "summarizing",
            SessionStatus::Complete => "complete",
        }
    }

    /// No further pipeline work will happen without a user action.
    pub fn is_settled(&self) -> bool {
        matches!(self, SessionStatus::SqlFailed | SessionStatus::Complete)
    }
}

/// One pass of generate, extract, validate, execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    /// 1-based.
    pub index: u32,
    /// SHA-256 of the rendered prompt text (or edit input for edit attempts).
    pub prompt_fingerprint: String,
    pub raw_output: String,
    pub extracted_sql: String,
    /// Absent only when the provider call itself failed.
    pub verdict: Option<ValidationVerdict>,
    pub execution_error: Option<ExecutionError>,
    pub provider_error: Option<ProviderError>,
    pub extraction_error: Option<String>,
    pub params_used: GenerationParams,
}

impl GenerationAttempt {
    pub fn succeeded(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.accepted)
            && self.execution_error.is_none()
            && self.provider_error.is_none()
            && self.extraction_error.is_none()
    }
}

/// Serialized as `{"invalid": {...}}` or `{"provider": {...}}`; both
/// payloads carry their own `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartFailure {
    Invalid(VegaInvalid),
    Provider(ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartAttempt {
    pub index: u32,
    pub raw_output: String,
    pub error: Option<ChartFailure>,
    pub params_used: GenerationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    Manual,
    Instruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditOutcome {
    Applied,
    Exhausted,
}

/// A human-in-the-loop change request and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: EditKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub sql_before: Option<String>,
    pub sql_after: Option<String>,
    #[serde(default)]
    pub attempts: Vec<GenerationAttempt>,
    pub outcome: EditOutcome,
    pub at: DateTime<Utc>,
}

/// A rendered prompt kept for template authors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLog {
    pub kind: TemplateKind,
    pub template_id: String,
    pub fingerprint: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySession {
    pub id: String,
    pub datasource_id: String,
    pub question: String,
    pub status: SessionStatus,
    pub attempts: Vec<GenerationAttempt>,
    pub final_sql: Option<String>,
    pub table: Option<ResultTable>,
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_error: Option<ProviderError>,
    pub chart: Option<ChartSpec>,
    pub chart_attempts: Vec<ChartAttempt>,
    #[serde(default)]
    pub edits: Vec<EditRecord>,
    /// Latest user-facing note, e.g. why an edit did not apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    #[serde(default)]
    pub prompts: Vec<PromptLog>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl QuerySession {
    pub fn new(datasource_id: impl Into<String>, question: impl Into<String>) -> Self {
        let now = Utc::now();
        Self {
            id: uuid::Uuid::new_v4().to_string(),
            datasource_id: datasource_id.into(),
            question: question.into(),
            status: SessionStatus::Pending,
            attempts: Vec::new(),
            final_sql: None,
            table: None,
            summary: None,
            summary_error: None,
            chart: None,
            chart_attempts: Vec::new(),
            edits: Vec::new(),
            notice: None,
            prompts: Vec::new(),
            created_at: now,
            updated_at: now,
        }
    }

    pub(crate) fn touch(&mut self) {
        self.updated_at = Utc::now().max(self.updated_at);
    }

    pub(crate) fn log_prompt(&mut self, entry: PromptLog) {
        if !self.prompts.iter().any(|p| p.fingerprint == entry.fingerprint) {
            self.prompts.push(entry);
        }
    }

    pub(crate) fn clear_stage_two(&mut self) {
        self.summary = None;
        self.summary_error = None;
        self.chart = None;
        self.chart_attempts.clear();
    }

    /// Checks the structural invariants of the session.
    pub fn check_invariants(&self) -> Result<(), String> {
        if matches!(self.status, SessionStatus::Succeeded | SessionStatus::Complete)
            && (self.final_sql.is_none() || self.table.is_none())
        {
            return Err(format!("status {} without sql and table", self.status.as_str()));
        }
        if self.status == SessionStatus::SqlFailed {
            if self.attempts.is_empty() {
                return Err("sql-failed with no attempts".into());
            }
            for a in &self.attempts {
                if a.verdict.is_none() && a.execution_error.is_none() && a.provider_error.is_none() {
                    return Err(format!("attempt {} carries no diagnosis", a.index));
                }
            }
        }
        for (i, a) in self.attempts.iter().enumerate() {
            if a.index as usize != i + 1 {
                return Err(format!("attempt index {} at position {}", a.index, i));
            }
        }
        if let Some(chart) = &self.chart {
            let table = self.table.as_ref().ok_or("chart without table")?;
            for enc in chart.encodings.values() {
                if table.column_index(&enc.field).is_none() {
                    return Err(format!("chart field {} not in table", enc.field));
                }
            }
        }
        Ok(())
    }
}
