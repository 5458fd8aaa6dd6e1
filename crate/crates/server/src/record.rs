use mirror_core::orchestrator::QuerySession;
use mirror_core::prompting::TemplateSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateIds {
    pub generation: String,
    pub summarization: String,
    pub visualization: String,
}

impl TemplateIds {
    pub fn of(set: &TemplateSet) -> Self {
        Self {
            generation: set.generation.id.clone(),
            summarization: set.summarization.id.clone(),
            visualization: set.visualization.id.clone(),
        }
    }
}

/// A session as stored and served: the pipeline state plus the schema and
/// templates it ran against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(flatten)]
    pub session: QuerySession,
    pub schema_fingerprint: String,
    pub template_ids: TemplateIds,
}

impl SessionRecord {
    /// Copy for non-debug responses: rendered prompts and raw model output
    /// removed.
    pub fn redacted(&self) -> SessionRecord {
        let mut out = self.clone();
        out.session.prompts.clear();
        for a in &mut out.session.attempts {
            a.raw_output.clear();
        }
        for a in &mut out.session.chart_attempts {
            a.raw_output.clear();
        }
        for e in &mut out.session.edits {
            for a in &mut e.attempts {
                a.raw_output.clear();
            }
        }
        out
    }
}

/// Short form used by the session list.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub datasource_id: String,
    pub question: String,
    pub status: String,
    pub created_at: String,
}

impl From<&SessionRecord> for SessionSummary {
    fn from(r: &SessionRecord) -> Self {
        Self {
            id: r.session.id.clone(),
            datasource_id: r.session.datasource_id.clone(),
            question: r.session.question.clone(),
            status: r.session.status.as_str().to_owned(),
            created_at: r.session.created_at.to_rfc3339(),
        }
    }
}
