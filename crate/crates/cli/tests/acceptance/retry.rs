//! Generation retries: one provider call per attempt, at most three
//! attempts, temperature rising 0.2, 0.5, 0.8.

use std::sync::Arc;

use mirror_core::llm_provider::{LlmProvider, ScriptedProvider, TranscriptEntry};
use mirror_core::orchestrator::{Orchestrator, OrchestratorConfig, SessionStatus};
use mirror_core::prompting::{TemplateKind, TemplateSet};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fixture::{ensure, open_sports, sports_db};
use crate::trigger::{generation_entry, kind_calls, Step};

const MAX_RETRIES: usize = 3;
const TEMPERATURES: [f64; 3] = [0.2, 0.5, 0.8];
const FAILURES: [Step; 4] = [Step::Rejected, Step::ExecError, Step::NoSql, Step::Retryable];

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let ds = open_sports(&sports_db(dir.path()));
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cases = 0;
    for len in 1..=5 {
        for prefix in 0..=len {
            for _ in 0..8 {
                // `prefix` failures, then a good reply if any room is left.
                let mut steps: Vec<Step> = (0..prefix).map(|_| *FAILURES.choose(&mut rng).unwrap()).collect();
                if prefix < len {
                    steps.push(Step::Rows);
                    steps.extend((prefix + 1..len).map(|_| *FAILURES.choose(&mut rng).unwrap()));
                }
                let mut entries: Vec<TranscriptEntry> = steps.iter().map(|s| generation_entry(*s)).collect();
                entries.push(TranscriptEntry::text("summary").when_contains("Answer:"));
                entries.push(TranscriptEntry::text("{\"mark\":\"bar\",\"encoding\":{\"y\":{\"field\":\"ppg\"}}}").when_contains("Vega-Lite JSON:"));
                let provider = Arc::new(ScriptedProvider::new(entries));
                let orchestrator =
                    Orchestrator::new(OrchestratorConfig::default(), provider.clone() as Arc<dyn LlmProvider>);
                let session = orchestrator
                    .run_query(&ds, &TemplateSet::default(), "Who scores most?")
                    .map_err(|e| format!("{steps:?}: {e}"))?;

                let label = format!("{steps:?}");
                let calls = kind_calls(&provider, TemplateKind::Generation);
                let succeeds = prefix < len && prefix < MAX_RETRIES;
                // A short script runs dry; unmatched calls fail retryably and
                // still count as attempts.
                let expected = if succeeds { prefix + 1 } else { MAX_RETRIES };
                ensure(session.attempts.len() == calls, || {
                    format!("{label}: {} attempts vs {calls} calls", session.attempts.len())
                })?;
                ensure(session.attempts.len() == expected, || {
                    format!("{label}: {} attempts, expected {expected}", session.attempts.len())
                })?;
                ensure(session.attempts.len() <= MAX_RETRIES, || format!("{label}: over the retry bound"))?;
                let temps: Vec<f64> = session.attempts.iter().map(|a| a.params_used.temperature).collect();
                ensure(temps == TEMPERATURES[..temps.len()], || format!("{label}: temperatures {temps:?}"))?;
                let status_ok = if succeeds {
                    session.status == SessionStatus::Complete
                } else {
                    session.status == SessionStatus::SqlFailed
                };
                ensure(status_ok, || format!("{label}: status {:?}", session.status))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} scripts of length 1..5; attempts == calls <= {MAX_RETRIES}, temperatures {TEMPERATURES:?}"))
}
