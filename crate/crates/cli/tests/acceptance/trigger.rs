//! Stage two (summary and chart) runs exactly when a result table exists.

use std::sync::Arc;

use mirror_core::llm_provider::{LlmProvider, ProviderErrorKind, ScriptedProvider, TranscriptEntry};
use mirror_core::orchestrator::{Orchestrator, OrchestratorConfig, QuerySession};
use mirror_core::prompting::{TemplateKind, TemplateSet};

use crate::fixture::{ensure, open_sports, sports_db};

const SQL_MARK: &str = "### SQL";
const SUMMARY_MARK: &str = "Answer:";
const CHART_MARK: &str = "Vega-Lite JSON:";

#[derive(Clone, Copy, Debug)]
pub enum Step {
    Rows,
    NoRows,
    Rejected,
    ExecError,
    NoSql,
    Retryable,
    Fatal,
}

pub const STEPS: [Step; 7] = [
    Step::Rows,
    Step::NoRows,
    Step::Rejected,
    Step::ExecError,
    Step::NoSql,
    Step::Retryable,
    Step::Fatal,
];

pub fn generation_entry(step: Step) -> TranscriptEntry {
    let entry = match step {
        Step::Rows => TranscriptEntry::text("SELECT name, ppg FROM players ORDER BY ppg DESC LIMIT 3"),
        Step::NoRows => TranscriptEntry::text("SELECT name FROM players WHERE ppg > 1000"),
        Step::Rejected => TranscriptEntry::text("SELECT 1; DELETE FROM players"),
        Step::ExecError => TranscriptEntry::text("SELECT salary FROM players"),
        Step::NoSql => TranscriptEntry::text("I cannot answer that."),
        Step::Retryable => TranscriptEntry::error(ProviderErrorKind::RateLimit),
        Step::Fatal => TranscriptEntry::error(ProviderErrorKind::Auth),
    };
    entry.when_contains(SQL_MARK)
}

#[derive(Clone, Copy, Debug)]
enum StageTwo {
    AllGood,
    SummaryErrorChartInvalid,
    ChartProviderError,
}

fn stage_two_entries(variant: StageTwo) -> Vec<TranscriptEntry> {
    let chart = r#"{"mark":"bar","encoding":{"x":{"field":"name","type":"nominal"},"y":{"field":"ppg","type":"quantitative"}}}"#;
    match variant {
        StageTwo::AllGood => vec![
            TranscriptEntry::text("Dee Park leads.").when_contains(SUMMARY_MARK),
            TranscriptEntry::text(chart).when_contains(CHART_MARK),
        ],
        StageTwo::SummaryErrorChartInvalid => {
            let mut v = vec![TranscriptEntry::error(ProviderErrorKind::Timeout).when_contains(SUMMARY_MARK)];
            v.extend((0..3).map(|_| TranscriptEntry::text("{\"mark\":\"pie\"}").when_contains(CHART_MARK)));
            v
        }
        StageTwo::ChartProviderError => vec![
            TranscriptEntry::text("Dee Park leads.").when_contains(SUMMARY_MARK),
            TranscriptEntry::error(ProviderErrorKind::Auth).when_contains(CHART_MARK),
        ],
    }
}

pub fn kind_calls(provider: &ScriptedProvider, kind: TemplateKind) -> usize {
    provider.calls().iter().filter(|c| c.prompt_kind == Some(kind)).count()
}

fn check(session: &QuerySession, provider: &ScriptedProvider) -> Result<(), String> {
    let summaries = kind_calls(provider, TemplateKind::Summarization);
    let charts = kind_calls(provider, TemplateKind::Visualization);
    match &session.table {
        None => {
            ensure(summaries == 0 && charts == 0, || {
                format!("{summaries} summary / {charts} chart calls on a failed session")
            })?;
            ensure(
                session.summary.is_none() && session.chart.is_none() && session.chart_attempts.is_empty(),
                || "stage-two output on a failed session".into(),
            )
        }
        Some(table) => {
            ensure(session.summary.is_some() || session.summary_error.is_some(), || {
                "table without a summary outcome".into()
            })?;
            if table.is_empty() {
                ensure(summaries == 0 && charts == 0, || "empty table reached the provider".into())
            } else {
                ensure(summaries == 1 && charts >= 1, || {
                    format!("{summaries} summary / {charts} chart calls with a table")
                })?;
                ensure(session.chart.is_some() || !session.chart_attempts.is_empty(), || {
                    "chart stage did not record anything".into()
                })
            }
        }
    }
}

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let ds = open_sports(&sports_db(dir.path()));
    let templates = TemplateSet::default();
    let mut scripts: Vec<Vec<Step>> = STEPS.iter().map(|s| vec![*s]).collect();
    for len in 2..=3 {
        let prev: Vec<Vec<Step>> = scripts.iter().filter(|s| s.len() == len - 1).cloned().collect();
        for p in prev {
            for s in STEPS {
                let mut next = p.clone();
                next.push(s);
                scripts.push(next);
            }
        }
    }
    let mut runs = 0;
    let mut with_table = 0;
    for script in &scripts {
        for variant in [StageTwo::AllGood, StageTwo::SummaryErrorChartInvalid, StageTwo::ChartProviderError] {
            let mut entries: Vec<TranscriptEntry> = script.iter().map(|s| generation_entry(*s)).collect();
            entries.extend(stage_two_entries(variant));
            let provider = Arc::new(ScriptedProvider::new(entries));
            let orchestrator = Orchestrator::new(
                OrchestratorConfig::default(),
                provider.clone() as Arc<dyn LlmProvider>,
            );
            let mut session = QuerySession::new("sports", "Who scores most?");
            let _ = orchestrator.run_query_into(&mut session, &ds, &templates, &mut |_| {});
            check(&session, &provider).map_err(|e| format!("{script:?} / {variant:?}: {e}"))?;
            session
                .check_invariants()
                .map_err(|e| format!("{script:?} / {variant:?}: {e}"))?;
            runs += 1;
            with_table += usize::from(session.table.is_some());
        }
    }
    Ok(format!(
        "{runs} scripted sessions ({with_table} with a table, {} without); stage two ran iff a table existed",
        runs - with_table
    ))
}
