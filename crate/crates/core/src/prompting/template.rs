use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Generation,
    Summarization,
    Visualization,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 3] = [
        TemplateKind::Generation,
        TemplateKind::Summarization,
        TemplateKind::Visualization,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::Generation => "generation",
            TemplateKind::Summarization => "summarization",
            TemplateKind::Visualization => "visualization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Slots that must appear exactly once.
    pub fn required_slots(&self) -> &'static [&'static str] {
        match self {
            TemplateKind::Generation => &["metadata", "query"],
            TemplateKind::Summarization | TemplateKind::Visualization => &["query", "result"],
        }
    }

    /// Slots that may appear at most once.
    pub fn optional_slots(&self) -> &'static [&'static str] {
        match self {
            TemplateKind::Visualization => &["columns", "grammar"],
            _ => &[],
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template is missing the `{{{0}}}` slot")]
    MissingSlot(String),
    #[error("slot `{{{0}}}` appears more than once")]
    DuplicateSlot(String),
    #[error("unknown slot `{{{0}}}`")]
    UnknownSlot(String),
    #[error("malformed template: {0}")]
    Malformed(String),
}

impl TemplateError {
    pub fn reason(&self) -> &'static str {
        match self {
            TemplateError::MissingSlot(_) => "missing-slot",
            TemplateError::DuplicateSlot(_) => "duplicate-slot",
            TemplateError::UnknownSlot(_) => "unknown-slot",
            TemplateError::Malformed(_) => "malformed-template",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Segment {
    Literal(String),
    Slot(String),
}

/// Splits a body into literal text and `{name}` slots. `{{` and `}}` are
/// literal braces; any other `{` must open a slot.
pub(crate) fn parse_segments(body: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|(_, n)| *n) == Some('{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek().map(|(_, n)| *n) == Some('}') => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let rest = &body[pos + 1..];
                let end = rest.find('}').ok_or_else(|| {
                    TemplateError::Malformed(format!("unclosed `{{` at byte {pos}"))
                })?;
                let name = &rest[..end];
                let valid = !name.is_empty()
                    && name.chars().all(|ch| ch.is_ascii_lowercase() || ch == '_');
                if !valid {
                    return Err(TemplateError::Malformed(format!(
                        "`{{{name}}}` at byte {pos} is not a slot; write `{{{{` for a literal brace"
                    )));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(name.to_owned()));
                for _ in 0..=name.chars().count() {
                    chars.next();
                }
            }
            other => literal.push(other),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// A user-editable prompt format string with named slots and free-form
/// instructions placed ahead of the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: TemplateKind,
    pub body: String,
    #[serde(default)]
    pub instructions: String,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        kind: TemplateKind,
        body: impl Into<String>,
        instructions: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let template = Self {
            id: id.into(),
            kind,
            body: body.into(),
            instructions: instructions.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        self.segments().map(|_| ())
    }

    /// Parsed body; checks slot names and counts for the template kind.
    pub(crate) fn segments(&self) -> Result<Vec<Segment>, TemplateError> {
        let segments = parse_segments(&self.body)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for segment in &segments {
            if let Segment::Slot(name) = segment {
                *counts.entry(name.as_str()).or_default() += 1;
            }
        }
        let required = self.kind.required_slots();
        let optional = self.kind.optional_slots();
        for (name, count) in &counts {
            if !required.contains(name) && !optional.contains(name) {
                return Err(TemplateError::UnknownSlot((*name).to_owned()));
            }
            if *count > 1 {
                return Err(TemplateError::DuplicateSlot((*name).to_owned()));
            }
        }
        if let Some(missing) = required.iter().find(|name| !counts.contains_key(*name)) {
            return Err(TemplateError::MissingSlot((*missing).to_owned()));
        }
        Ok(segments)
    }

    pub(crate) fn has_slot(&self, name: &str) -> bool {
        parse_segments(&self.body)
            .map(|segs| segs.iter().any(|s| matches!(s, Segment::Slot(n) if n == name)))
            .unwrap_or(false)
    }

    /// Parses the on-disk form: a `---` delimited header with `id`, `kind`
    /// and an optional `instructions` block scalar, followed by the body.
    ///
    /// ```text
    /// ---
    /// id: sports
    /// kind: generation
    /// instructions: |
    ///   Use SQLite syntax.
    ///   "MIA" means the Miami team.
    /// ---
    /// Schema:
    /// {metadata}
    /// Question: {query}
    /// ```
    pub fn parse_file(text: &str) -> Result<Self, TemplateError> {
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| TemplateError::Malformed("missing `---` header".into()))?;
        let (header, body) = match rest.find("\n---\n") {
            Some(i) => (&rest[..i], &rest[i + 5..]),
            None => match rest.strip_suffix("\n---") {
                Some(h) => (h, ""),
                None => return Err(TemplateError::Malformed("unterminated header".into())),
            },
        };

        let mut id = None;
        let mut kind = None;
        let mut instructions = String::new();
        let mut lines = header.lines().peekable();
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| TemplateError::Malformed(format!("bad header line `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "id" => id = Some(value.to_owned()),
                "kind" => {
                    kind = Some(TemplateKind::parse(value).ok_or_else(|| {
                        TemplateError::Malformed(format!("unknown template kind `{value}`"))
                    })?)
                }
                "instructions" if value == "|" => {
                    let mut block = Vec::new();
                    while let Some(next) = lines.peek() {
                        if let Some(stripped) = next.strip_prefix("  ") {
                            block.push(stripped);
                            lines.next();
                        } else if next.is_empty() {
                            block.push("");
                            lines.next();
                        } else {
                            break;
                        }
                    }
                    while block.last() == Some(&"") {
                        block.pop();
                    }
                    instructions = block.join("\n");
                }
                "instructions" if value.starts_with('"') => {
                    instructions = serde_json::from_str(value).map_err(|e| {
                        TemplateError::Malformed(format!("bad quoted instructions: {e}"))
                    })?
                }
                "instructions" => instructions = value.to_owned(),
                other => {
                    return Err(TemplateError::Malformed(format!("unknown header key `{other}`")))
                }
            }
        }
        let id = id.ok_or_else(|| TemplateError::Malformed("header lacks `id`".into()))?;
        let kind = kind.ok_or_else(|| TemplateError::Malformed("header lacks `kind`".into()))?;
        Self::new(id, kind, body, instructions)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("---\nid: {}\nkind: {}\n", self.id, self.kind);
        if self.instructions.ends_with('\n') {
            // Block form drops trailing newlines; quote instead.
            out.push_str("instructions: ");
            out.push_str(&serde_json::to_string(&self.instructions).expect("string serializes"));
            out.push('\n');
        } else if !self.instructions.is_empty() {
            out.push_str("instructions: |\n");
            for line in self.instructions.lines() {
                if line.is_empty() {
                    out.push('\n');
                } else {
                    out.push_str("  ");
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        out.push_str("---\n");
        out.push_str(&self.body);
        out
    }
}
