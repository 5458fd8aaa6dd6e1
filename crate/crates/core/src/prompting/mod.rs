//! Prompt construction for the three model calls: SQL generation,
//! result summarization and chart generation.

mod autocomplete;
mod defaults;
mod template;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chartspec::CHART_GRAMMAR;
use crate::datasource::{quote_ident, Cell, ResultTable, SchemaMetadata};

pub use autocomplete::{autocomplete, Suggestion, SuggestionKind, MAX_SUGGESTIONS};
pub use defaults::{
    default_generation_template, default_summarization_template, default_visualization_template,
};
pub use template::{PromptTemplate, TemplateError, TemplateKind};

/// Rows of a result table included in summarization/visualization prompts.
pub const DEFAULT_PROMPT_ROW_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// `ceil(chars / 4)`; advisory only.
    pub token_estimate: usize,
    pub template_id: String,
    pub kind: TemplateKind,
    pub inputs_fingerprint: String,
}

impl RenderedPrompt {
    /// Wraps literal text, e.g. for provider tests that need no template.
    pub fn raw(text: impl Into<String>) -> Self {
        let text = text.into();
        let inputs_fingerprint = fingerprint(&[text.as_str()]);
        Self {
            token_estimate: estimate_tokens(&text),
            text,
            template_id: "raw".into(),
            kind: TemplateKind::Generation,
            inputs_fingerprint,
        }
    }

    /// SHA-256 of the prompt text, used as a transcript match key.
    pub fn text_hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

/// The template used for each prompt kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub generation: PromptTemplate,
    pub summarization: PromptTemplate,
    pub visualization: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            generation: default_generation_template(),
            summarization: default_summarization_template(),
            visualization: default_visualization_template(),
        }
    }
}

impl TemplateSet {
    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        match kind {
            TemplateKind::Generation => &self.generation,
            TemplateKind::Summarization => &self.summarization,
            TemplateKind::Visualization => &self.visualization,
        }
    }

    /// Replaces the template of `template.kind` after validating it.
    pub fn set(&mut self, template: PromptTemplate) -> Result<(), TemplateError> {
        template.validate()?;
        match template.kind {
            TemplateKind::Generation => self.generation = template,
            TemplateKind::Summarization => self.summarization = template,
            TemplateKind::Visualization => self.visualization = template,
        }
        Ok(())
    }
}

/// Outcome of building the chart prompt: empty tables get no chart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VisualizationPrompt {
    Prompt(RenderedPrompt),
    Skipped,
}

/// DDL-style schema text: one `CREATE TABLE` per table in metadata order,
/// keys as trailing constraint clauses.
pub fn serialize_schema(meta: &SchemaMetadata) -> String {
    let mut out = Vec::with_capacity(meta.tables.len());
    for table in &meta.tables {
        let mut parts: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                let mut def = format!("{} {}", quote_ident(&c.name), c.sql_type);
                if !c.nullable {
                    def.push_str(" NOT NULL");
                }
                def
            })
            .collect();
        if !table.primary_key.is_empty() {
            parts.push(format!("PRIMARY KEY ({})", join_idents(&table.primary_key)));
        }
        for fk in &table.foreign_keys {
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {}({})",
                quote_ident(&fk.column),
                quote_ident(&fk.foreign_table),
                quote_ident(&fk.foreign_column)
            ));
        }
        out.push(format!(
            "CREATE TABLE {} ({});",
            quote_ident(&table.name),
            parts.join(", ")
        ));
    }
    out.join("\n")
}

fn join_idents(names: &[String]) -> String {
    names.iter().map(|n| quote_ident(n)).collect::<Vec<_>>().join(", ")
}

pub fn render_generation_prompt(
    template: &PromptTemplate,
    meta: &SchemaMetadata,
    question: &str,
) -> Result<RenderedPrompt, TemplateError> {
    expect_kind(template, TemplateKind::Generation)?;
    let metadata = serialize_schema(meta);
    render(template, &[("metadata", &metadata), ("query", question)])
}

pub fn render_summarization_prompt(
    template: &PromptTemplate,
    question: &str,
    table: &ResultTable,
    row_cap: usize,
) -> Result<RenderedPrompt, TemplateError> {
    expect_kind(template, TemplateKind::Summarization)?;
    let result = render_result_section(table, row_cap);
    render(template, &[("query", question), ("result", &result)])
}

/// Chart prompt. Always carries the chart grammar and the exact column
/// list; when the template body has no `{grammar}` or `{columns}` slot
/// those sections are appended after it.
pub fn render_visualization_prompt(
    template: &PromptTemplate,
    question: &str,
    table: &ResultTable,
    row_cap: usize,
) -> Result<VisualizationPrompt, TemplateError> {
    expect_kind(template, TemplateKind::Visualization)?;
    if table.is_empty() {
        return Ok(VisualizationPrompt::Skipped);
    }
    let result = render_result_section(table, row_cap);
    let columns = render_column_list(table);
    let mut prompt = render(
        template,
        &[
            ("query", question),
            ("result", &result),
            ("columns", &columns),
            ("grammar", CHART_GRAMMAR),
        ],
    )?;
    let mut appended = String::new();
    if !template.has_slot("grammar") {
        appended.push_str("\n\nChart grammar:\n");
        appended.push_str(CHART_GRAMMAR);
    }
    if !template.has_slot("columns") {
        appended.push_str("\n\nColumns:\n");
        appended.push_str(&columns);
    }
    if !appended.is_empty() {
        prompt.text.push_str(&appended);
        prompt.token_estimate = estimate_tokens(&prompt.text);
    }
    Ok(VisualizationPrompt::Prompt(prompt))
}

fn expect_kind(template: &PromptTemplate, kind: TemplateKind) -> Result<(), TemplateError> {
    if template.kind == kind {
        Ok(())
    } else {
        Err(TemplateError::Malformed(format!(
            "template `{}` is a {} template, expected {}",
            template.id, template.kind, kind
        )))
    }
}

fn render(template: &PromptTemplate, values: &[(&str, &str)]) -> Result<RenderedPrompt, TemplateError> {
    let segments = template.segments()?;
    let mut body = String::new();
    for segment in &segments {
        match segment {
            template::Segment::Literal(text) => body.push_str(text),
            template::Segment::Slot(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::UnknownSlot(name.clone()))?;
                body.push_str(value);
            }
        }
    }
    let text = if template.instructions.trim().is_empty() {
        body
    } else {
        format!("{}\n\n{}", template.instructions.trim_end(), body)
    };

    let mut parts: Vec<&str> = vec![
        template.kind.as_str(),
        &template.id,
        &template.instructions,
        &template.body,
    ];
    for (k, v) in values {
        parts.push(k);
        parts.push(v);
    }
    Ok(RenderedPrompt {
        token_estimate: estimate_tokens(&text),
        text,
        template_id: template.id.clone(),
        kind: template.kind,
        inputs_fingerprint: fingerprint(&parts),
    })
}

fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn fingerprint(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Header line plus up to `row_cap` pipe-separated rows, then an omission
/// marker if rows were dropped. An empty table renders as `(no rows)`.
pub fn render_result_section(table: &ResultTable, row_cap: usize) -> String {
    if table.rows.is_empty() {
        return "(no rows)".to_owned();
    }
    let mut lines = Vec::with_capacity(row_cap.min(table.rows.len()) + 2);
    lines.push(
        table
            .columns
            .iter()
            .map(|c| escape_text(&c.name))
            .collect::<Vec<_>>()
            .join(" | "),
    );
    for row in table.rows.iter().take(row_cap) {
        lines.push(row.iter().map(render_cell).collect::<Vec<_>>().join(" | "));
    }
    if table.rows.len() > row_cap {
        lines.push(format!("... ({} more rows omitted)", table.rows.len() - row_cap));
    }
    lines.join("\n")
}

fn render_column_list(table: &ResultTable) -> String {
    table
        .columns
        .iter()
        .map(|c| format!("- {}: {}", c.name, c.sql_type))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_cell(cell: &Cell) -> String {
    match cell {
        Cell::Null => "NULL".to_owned(),
        Cell::Integer(v) => v.to_string(),
        Cell::Real(v) => format_significant(*v, 6),
        Cell::Text(s) => escape_text(s),
        Cell::Blob(b) => format!("<blob {} bytes>", b.hex.len() / 2),
    }
}

// Pipes are escaped so columns stay unambiguous; newlines are escaped so
// each row stays on one line.
fn escape_text(s: &str) -> String {
    s.replace('|', "\\|").replace('\r', "\\r").replace('\n', "\\n")
}

/// `%g`-style formatting with at most `digits` significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return "0".into();
    }
    let precision = digits.saturating_sub(1);
    let sci = format!("{:.*e}", precision, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, v)).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
