//! The query pipeline: generation with bounded retries, then summary and
//! chart generation, plus the manual and instructed SQL edit paths.
//!
//! Every state change is published through an observer callback so that
//! readers always see a whole session, never a partially updated one.

mod extract;
mod session;

use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::chartspec::{self, DEFAULT_CHART_ROW_CAP};
use crate::datasource::{DataSource, DataSourceError, ExecutionError, ResultTable};
use crate::llm_provider::{
    GenerationParams, LlmProvider, ProviderError, ProviderErrorKind, ProviderResponse,
};
use crate::prompting::{
    self, RenderedPrompt, TemplateError, TemplateSet, VisualizationPrompt,
    DEFAULT_PROMPT_ROW_CAP,
};
use crate::sql_guard::{self, ValidationVerdict};

pub use extract::{extract_sql, ExtractionError};
pub use session::{
    ChartAttempt, ChartFailure, EditKind, EditOutcome, EditRecord, GenerationAttempt, PromptLog,
    QuerySession, SessionStatus,
};

pub const EMPTY_RESULT_SUMMARY: &str = "The query returned no rows.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub max_retries: u32,
    pub max_chart_retries: u32,
    /// Parameters of the first generation attempt.
    pub generation: GenerationParams,
    /// Added to the temperature on every retry.
    pub temperature_step: f64,
    pub max_temperature: f64,
    pub summary_temperature: f64,
    pub prompt_row_cap: usize,
    pub chart_row_cap: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            max_chart_retries: 3,
            generation: GenerationParams::default(),
            temperature_step: 0.3,
            max_temperature: 1.0,
            summary_temperature: 0.0,
            prompt_row_cap: DEFAULT_PROMPT_ROW_CAP,
            chart_row_cap: DEFAULT_CHART_ROW_CAP,
        }
    }
}

impl OrchestratorConfig {
    /// Sampling parameters for the 1-based attempt `index`.
    pub fn params_for_attempt(&self, index: u32) -> GenerationParams {
        let steps = index.saturating_sub(1) as f64;
        let t = self.generation.temperature + steps * self.temperature_step;
        self.generation.with_temperature(round6(t.min(self.max_temperature)))
    }

    pub fn summary_params(&self) -> GenerationParams {
        self.generation.with_temperature(self.summary_temperature)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_retries == 0 {
            return Err("max_retries must be at least 1".into());
        }
        if self.max_chart_retries == 0 {
            return Err("max_chart_retries must be at least 1".into());
        }
        if self.prompt_row_cap == 0 || self.chart_row_cap == 0 {
            return Err("row caps must be positive".into());
        }
        self.generation.validate().map_err(|e| e.message)?;
        self.generation
            .with_temperature(self.summary_temperature)
            .validate()
            .map_err(|e| e.message)
    }
}

/// Drops float noise from the temperature schedule (0.2 + 0.3 = 0.5, not
/// 0.5000000000000001).
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("template error: {0}")]
    Template(#[from] TemplateError),
    #[error("cannot read data source metadata: {0}")]
    Metadata(#[from] DataSourceError),
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error(transparent)]
    Provider(ProviderError),
}

#[derive(Debug, thiserror::Error)]
pub enum RerunError {
    #[error("SQL rejected: {}", .0.reason)]
    Rejected(ValidationVerdict),
    #[error(transparent)]
    Execution(ExecutionError),
}

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("session has no SQL to edit")]
    NoSql,
    #[error(transparent)]
    Provider(ProviderError),
}

/// Callback receiving a full snapshot after every state change.
pub type Observer<'a> = &'a mut dyn FnMut(&QuerySession);

pub struct Orchestrator {
    config: OrchestratorConfig,
    provider: Arc<dyn LlmProvider>,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig, provider: Arc<dyn LlmProvider>) -> Self {
        Self { config, provider }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    /// Runs the whole pipeline for a fresh question.
    pub fn run_query(
        &self,
        datasource: &DataSource,
        templates: &TemplateSet,
        question: &str,
    ) -> Result<QuerySession, OrchestratorError> {
        let mut session = QuerySession::new(datasource.id(), question);
        self.run_query_into(&mut session, datasource, templates, &mut |_| {})?;
        Ok(session)
    }

    /// Runs the pipeline on a pending session, publishing each state.
    ///
    /// A non-retryable provider error stops the loop; the session is left
    /// `sql-failed` with the failing attempt recorded, and the error is
    /// returned.
    pub fn run_query_into(
        &self,
        session: &mut QuerySession,
        datasource: &DataSource,
        templates: &TemplateSet,
        observer: Observer<'_>,
    ) -> Result<(), OrchestratorError> {
        if session.question.trim().is_empty() {
            return Err(OrchestratorError::EmptyQuestion);
        }
        let meta = datasource.introspect()?;
        let prompt =
            prompting::render_generation_prompt(&templates.generation, &meta, &session.question)?;
        session.log_prompt(prompt_log(&prompt));
        session.status = SessionStatus::Pending;
        publish(session, observer);

        for index in 1..=self.config.max_retries {
            let params = self.config.params_for_attempt(index);
            let response = self.provider.complete(&prompt, &params);
            let (attempt, table) =
                attempt_from(index, prompt.text_hash(), params, response, datasource);
            let fatal = attempt
                .provider_error
                .as_ref()
                .filter(|e| !e.retryable)
                .cloned();
            let sql = attempt.extracted_sql.clone();
            session.attempts.push(attempt);

            if let Some(table) = table {
                session.final_sql = Some(sql);
                session.table = Some(table);
                session.status = SessionStatus::Succeeded;
                publish(session, observer);
                self.stage_two(session, templates, observer);
                return Ok(());
            }
            if let Some(err) = fatal {
                session.status = SessionStatus::SqlFailed;
                session.notice = Some(format!("generation stopped: {err}"));
                publish(session, observer);
                return Err(OrchestratorError::Provider(err));
            }
            publish(session, observer);
        }

        session.status = SessionStatus::SqlFailed;
        session.notice = Some(format!(
            "no executable SQL after {} attempts",
            session.attempts.len()
        ));
        publish(session, observer);
        Ok(())
    }

    /// Summary and chart generation for a session holding a table.
    pub fn run_stage_two(
        &self,
        session: &mut QuerySession,
        templates: &TemplateSet,
        observer: Observer<'_>,
    ) {
        if session.table.is_none() {
            return;
        }
        self.stage_two(session, templates, observer);
    }

    fn stage_two(&self, session: &mut QuerySession, templates: &TemplateSet, observer: Observer<'_>) {
        session.clear_stage_two();
        session.status = SessionStatus::Summarizing;
        publish(session, observer);

        let table = session.table.clone().expect("stage two requires a table");
        if table.is_empty() {
            session.summary = Some(EMPTY_RESULT_SUMMARY.into());
            session.status = SessionStatus::Complete;
            publish(session, observer);
            return;
        }

        match self.summarize(session, templates, &table) {
            Ok(summary) => session.summary = Some(summary),
            Err(err) => session.summary_error = Some(err),
        }
        publish(session, observer);

        self.chart(session, templates, &table, observer);
        session.status = SessionStatus::Complete;
        publish(session, observer);
    }

    fn summarize(
        &self,
        session: &mut QuerySession,
        templates: &TemplateSet,
        table: &ResultTable,
    ) -> Result<String, ProviderError> {
        let prompt = prompting::render_summarization_prompt(
            &templates.summarization,
            &session.question,
            table,
            self.config.prompt_row_cap,
        )
        .map_err(|e| ProviderError::invalid_input(e.to_string()))?;
        session.log_prompt(prompt_log(&prompt));
        let response = self.provider.complete(&prompt, &self.config.summary_params())?;
        let summary = response.text.trim();
        if summary.is_empty() {
            return Err(ProviderError::new(
                ProviderErrorKind::MalformedResponse,
                "empty summary",
            ));
        }
        Ok(summary.to_owned())
    }

    fn chart(
        &self,
        session: &mut QuerySession,
        templates: &TemplateSet,
        table: &ResultTable,
        observer: Observer<'_>,
    ) {
        let prompt = match prompting::render_visualization_prompt(
            &templates.visualization,
            &session.question,
            table,
            self.config.prompt_row_cap,
        ) {
            Ok(VisualizationPrompt::Prompt(p)) => p,
            Ok(VisualizationPrompt::Skipped) => return,
            Err(e) => {
                session.chart_attempts.push(ChartAttempt {
                    index: 1,
                    raw_output: String::new(),
                    error: Some(ChartFailure::Provider(ProviderError::invalid_input(e.to_string()))),
                    params_used: self.config.params_for_attempt(1),
                });
                return;
            }
        };
        session.log_prompt(prompt_log(&prompt));

        for index in 1..=self.config.max_chart_retries {
            let params = self.config.params_for_attempt(index);
            let (raw_output, outcome) = match self.provider.complete(&prompt, &params) {
                Ok(r) => {
                    let parsed =
                        chartspec::parse_and_validate_with_cap(&r.text, table, self.config.chart_row_cap)
                            .map_err(ChartFailure::Invalid);
                    (r.text, parsed)
                }
                Err(e) => (String::new(), Err(ChartFailure::Provider(e))),
            };
            let stop = matches!(&outcome, Err(ChartFailure::Provider(e)) if !e.retryable);
            match outcome {
                Ok(spec) => {
                    session.chart_attempts.push(ChartAttempt {
                        index,
                        raw_output,
                        error: None,
                        params_used: params,
                    });
                    session.chart = Some(spec);
                    publish(session, observer);
                    return;
                }
                Err(failure) => session.chart_attempts.push(ChartAttempt {
                    index,
                    raw_output,
                    error: Some(failure),
                    params_used: params,
                }),
            }
            publish(session, observer);
            if stop {
                return;
            }
        }
    }

    /// Replaces the session's SQL with user-written SQL. Rejected or failing
    /// SQL leaves the session untouched and is reported verbatim; it is
    /// never retried.
    pub fn rerun_sql(
        &self,
        session: &mut QuerySession,
        datasource: &DataSource,
        templates: &TemplateSet,
        sql: &str,
        observer: Observer<'_>,
    ) -> Result<(), RerunError> {
        let verdict = sql_guard::validate(sql);
        if !verdict.accepted {
            return Err(RerunError::Rejected(verdict));
        }
        let table = datasource.execute(sql).map_err(RerunError::Execution)?;
        session.edits.push(EditRecord {
            kind: EditKind::Manual,
            instruction: None,
            sql_before: session.final_sql.clone(),
            sql_after: Some(sql.to_owned()),
            attempts: Vec::new(),
            outcome: EditOutcome::Applied,
            at: Utc::now(),
        });
        session.final_sql = Some(sql.to_owned());
        session.table = Some(table);
        session.notice = None;
        session.status = SessionStatus::Succeeded;
        publish(session, observer);
        self.stage_two(session, templates, observer);
        Ok(())
    }

    /// Asks the provider to revise the current SQL. Candidates go through
    /// the guard and the engine with up to `max_retries` attempts; when all
    /// fail the previous SQL and table stay in place.
    pub fn edit_with_instruction(
        &self,
        session: &mut QuerySession,
        datasource: &DataSource,
        templates: &TemplateSet,
        instruction: &str,
        observer: Observer<'_>,
    ) -> Result<EditOutcome, EditError> {
        if instruction.trim().is_empty() {
            return Err(EditError::EmptyInstruction);
        }
        let current = session.final_sql.clone().ok_or(EditError::NoSql)?;
        let fingerprint = RenderedPrompt::raw(format!("{current}\n{instruction}"))
            .text_hash();

        let mut attempts = Vec::new();
        let mut fatal = None;
        let mut result = None;
        for index in 1..=self.config.max_retries {
            let params = self.config.params_for_attempt(index);
            let response = self.provider.edit(&current, instruction, &params);
            let (attempt, table) =
                attempt_from(index, fingerprint.clone(), params, response, datasource);
            fatal = attempt.provider_error.as_ref().filter(|e| !e.retryable).cloned();
            let sql = attempt.extracted_sql.clone();
            attempts.push(attempt);
            if let Some(table) = table {
                result = Some((sql, table));
                break;
            }
            if fatal.is_some() {
                break;
            }
        }

        let outcome = if result.is_some() {
            EditOutcome::Applied
        } else {
            EditOutcome::Exhausted
        };
        session.edits.push(EditRecord {
            kind: EditKind::Instruction,
            instruction: Some(instruction.to_owned()),
            sql_before: Some(current),
            sql_after: result.as_ref().map(|(sql, _)| sql.clone()),
            attempts,
            outcome,
            at: Utc::now(),
        });

        match result {
            Some((sql, table)) => {
                session.final_sql = Some(sql);
                session.table = Some(table);
                session.notice = None;
                session.status = SessionStatus::Succeeded;
                publish(session, observer);
                self.stage_two(session, templates, observer);
                Ok(EditOutcome::Applied)
            }
            None => {
                let tries = session.edits.last().map_or(0, |e| e.attempts.len());
                session.notice = Some(format!(
                    "instructed edit failed after {tries} attempts; previous SQL kept"
                ));
                publish(session, observer);
                match fatal {
                    Some(err) => Err(EditError::Provider(err)),
                    None => Ok(EditOutcome::Exhausted),
                }
            }
        }
    }
}

fn publish(session: &mut QuerySession, observer: Observer<'_>) {
    session.touch();
    observer(session);
}

fn prompt_log(prompt: &RenderedPrompt) -> PromptLog {
    PromptLog {
        kind: prompt.kind,
        template_id: prompt.template_id.clone(),
        fingerprint: prompt.text_hash(),
        text: prompt.text.clone(),
    }
}

/// Turns one provider response into an attempt record, executing the SQL
/// when the guard accepts it. Returns the table on success.
fn attempt_from(
    index: u32,
    prompt_fingerprint: String,
    params: GenerationParams,
    response: Result<ProviderResponse, ProviderError>,
    datasource: &DataSource,
) -> (GenerationAttempt, Option<ResultTable>) {
    let mut attempt = GenerationAttempt {
        index,
        prompt_fingerprint,
        raw_output: String::new(),
        extracted_sql: String::new(),
        verdict: None,
        execution_error: None,
        provider_error: None,
        extraction_error: None,
        params_used: params,
    };
    let response = match response {
        Ok(r) => r,
        Err(e) => {
            attempt.provider_error = Some(e);
            return (attempt, None);
        }
    };
    attempt.raw_output = response.text;
    match extract_sql(&attempt.raw_output) {
        Ok(sql) => attempt.extracted_sql = sql,
        Err(e) => {
            attempt.extraction_error = Some(e.to_string());
            attempt.verdict = Some(sql_guard::validate(&attempt.raw_output));
            return (attempt, None);
        }
    }
    let verdict = sql_guard::validate(&attempt.extracted_sql);
    let accepted = verdict.accepted;
    attempt.verdict = Some(verdict);
    if !accepted {
        return (attempt, None);
    }
    match datasource.execute(&attempt.extracted_sql) {
        Ok(table) => (attempt, Some(table)),
        Err(e) => {
            attempt.execution_error = Some(e);
            (attempt, None)
        }
    }
}
