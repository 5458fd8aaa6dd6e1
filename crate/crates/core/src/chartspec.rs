//! Validation of model-written Vega-Lite chart descriptions.
//!
//! Only a conservative subset is accepted: marks `bar`, `line`, `area`,
//! `point`, `arc` and channels `x`, `y`, `color`, `theta`, each bound to a
//! column of the result table. Any data the model supplies is discarded;
//! the chart's values are always copied from the result table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasource::{Cell, ResultTable, SqlType};

/// Maximum result rows inlined into a chart document.
pub const DEFAULT_CHART_ROW_CAP: usize = 500;

pub const VEGA_LITE_SCHEMA: &str = "https://vega.github.io/schema/vega-lite/v5.json";

/// Grammar description given to the model in chart prompts.
pub const CHART_GRAMMAR: &str = "\
Reply with one JSON object in the Vega-Lite format.
- \"mark\": one of \"bar\", \"line\", \"area\", \"point\", \"arc\".
- \"encoding\": an object whose keys are channels \"x\", \"y\", \"color\" or \"theta\"; \
each channel is {\"field\": <column name>, \"type\": \"quantitative\" | \"nominal\" | \"ordinal\" | \"temporal\"}.
- At least one of \"x\", \"y\" or \"theta\" is required; use \"arc\" with \"theta\" for pie charts.
- \"title\" is optional. Do not include a \"data\" block; the result rows are attached automatically.
- Only use the column names listed below.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Bar,
    Line,
    Area,
    Point,
    Arc,
}

impl Mark {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mark::Bar => "bar",
            Mark::Line => "line",
            Mark::Area => "area",
            Mark::Point => "point",
            Mark::Arc => "arc",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Mark::Bar, Mark::Line, Mark::Area, Mark::Point, Mark::Arc]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
    Color,
    Theta,
}

impl Channel {
    const ALL: [Channel; 4] = [Channel::X, Channel::Y, Channel::Color, Channel::Theta];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Color => "color",
            Channel::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Quantitative,
    Nominal,
    Ordinal,
    Temporal,
}

impl FieldType {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldType::Quantitative => "quantitative",
            FieldType::Nominal => "nominal",
            FieldType::Ordinal => "ordinal",
            FieldType::Temporal => "temporal",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            FieldType::Quantitative,
            FieldType::Nominal,
            FieldType::Ordinal,
            FieldType::Temporal,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }

    fn infer(sql_type: SqlType) -> Self {
        if sql_type.is_numeric() {
            FieldType::Quantitative
        } else {
            FieldType::Nominal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub field: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub mark: Mark,
    pub encodings: BTreeMap<Channel, Encoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub inline_data: Vec<BTreeMap<String, Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VegaInvalidKind {
    NotJson,
    BadMark,
    BadEncoding,
    UnknownField,
    NoEncoding,
}

impl VegaInvalidKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VegaInvalidKind::NotJson => "not-json",
            VegaInvalidKind::BadMark => "bad-mark",
            VegaInvalidKind::BadEncoding => "bad-encoding",
            VegaInvalidKind::UnknownField => "unknown-field",
            VegaInvalidKind::NoEncoding => "no-encoding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct VegaInvalid {
    pub kind: VegaInvalidKind,
    pub message: String,
}

impl fmt::Display for VegaInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

fn invalid(kind: VegaInvalidKind, message: impl Into<String>) -> VegaInvalid {
    VegaInvalid {
        kind,
        message: message.into(),
    }
}

pub fn parse_and_validate(raw: &str, table: &ResultTable) -> Result<ChartSpec, VegaInvalid> {
    parse_and_validate_with_cap(raw, table, DEFAULT_CHART_ROW_CAP)
}

pub fn parse_and_validate_with_cap(
    raw: &str,
    table: &ResultTable,
    row_cap: usize,
) -> Result<ChartSpec, VegaInvalid> {
    let object = extract_json_object(raw)?;

    let mark = match object.get("mark") {
        Some(Value::String(s)) => Mark::parse(s),
        Some(Value::Object(m)) => m.get("type").and_then(Value::as_str).and_then(Mark::parse),
        _ => None,
    }
    .ok_or_else(|| {
        invalid(
            VegaInvalidKind::BadMark,
            format!("mark must be one of bar, line, area, point, arc; got {}", short(object.get("mark"))),
        )
    })?;

    let encoding = object
        .get("encoding")
        .and_then(Value::as_object)
        .ok_or_else(|| invalid(VegaInvalidKind::NoEncoding, "missing `encoding` object"))?;

    let mut encodings = BTreeMap::new();
    for channel in Channel::ALL {
        let Some(entry) = encoding.get(channel.as_str()) else {
            continue;
        };
        let entry = entry.as_object().ok_or_else(|| {
            invalid(VegaInvalidKind::BadEncoding, format!("channel `{}` is not an object", channel.as_str()))
        })?;
        let field = entry.get("field").and_then(Value::as_str).ok_or_else(|| {
            invalid(
                VegaInvalidKind::BadEncoding,
                format!("channel `{}` has no string `field`", channel.as_str()),
            )
        })?;
        let column = table
            .columns
            .iter()
            .find(|c| c.name == field)
            .ok_or_else(|| {
                invalid(
                    VegaInvalidKind::UnknownField,
                    format!("field `{field}` is not a result column"),
                )
            })?;
        let field_type = match entry.get("type") {
            None => FieldType::infer(column.sql_type),
            Some(Value::String(t)) => FieldType::parse(t).ok_or_else(|| {
                invalid(VegaInvalidKind::BadEncoding, format!("unknown encoding type `{t}`"))
            })?,
            Some(other) => {
                return Err(invalid(
                    VegaInvalidKind::BadEncoding,
                    format!("encoding type must be a string, got {other}"),
                ))
            }
        };
        encodings.insert(
            channel,
            Encoding {
                field: field.to_owned(),
                field_type,
            },
        );
    }
    if ![Channel::X, Channel::Y, Channel::Theta]
        .iter()
        .any(|c| encodings.contains_key(c))
    {
        return Err(invalid(
            VegaInvalidKind::NoEncoding,
            "encoding needs at least one of x, y, theta",
        ));
    }

    let title = match object.get("title") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Object(t)) => t.get("text").and_then(Value::as_str).map(str::to_owned),
        _ => None,
    };

    Ok(ChartSpec {
        mark,
        encodings,
        title,
        inline_data: inline_rows(table, row_cap),
    })
}

fn short(value: Option<&Value>) -> String {
    match value {
        None => "nothing".into(),
        Some(v) => {
            let s = v.to_string();
            if s.len() > 40 {
                format!("{}...", &s[..s.floor_char_boundary(40)])
            } else {
                s
            }
        }
    }
}

fn inline_rows(table: &ResultTable, row_cap: usize) -> Vec<BTreeMap<String, Cell>> {
    table
        .rows
        .iter()
        .take(row_cap)
        .map(|row| {
            table
                .columns
                .iter()
                .zip(row)
                .map(|(c, cell)| (c.name.clone(), cell.clone()))
                .collect()
        })
        .collect()
}

/// The whole input if it is a JSON object; otherwise the first fenced
/// block, then the first balanced `{...}` region.
fn extract_json_object(raw: &str) -> Result<serde_json::Map<String, Value>, VegaInvalid> {
    let trimmed = raw.trim();
    let candidates = [
        Some(trimmed),
        fenced_block(trimmed),
        balanced_object(trimmed),
    ];
    for candidate in candidates.into_iter().flatten() {
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(candidate) {
            return Ok(map);
        }
    }
    Err(invalid(VegaInvalidKind::NotJson, "no JSON object found in model output"))
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Serialize)]
struct Document<'a> {
    #[serde(rename = "$schema")]
    schema: &'static str,
    data: DataBlock<'a>,
    encoding: BTreeMap<&'static str, EncodingDoc<'a>>,
    mark: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    title: Option<&'a str>,
}

#[derive(Serialize)]
struct DataBlock<'a> {
    values: &'a [BTreeMap<String, Cell>],
}

#[derive(Serialize)]
struct EncodingDoc<'a> {
    field: &'a str,
    #[serde(rename = "type")]
    field_type: &'static str,
}

/// Serializes to a Vega-Lite document with keys in sorted order, so equal
/// specs always produce identical bytes.
pub fn emit(spec: &ChartSpec) -> String {
    let document = Document {
        schema: VEGA_LITE_SCHEMA,
        data: DataBlock {
            values: &spec.inline_data,
        },
        encoding: spec
            .encodings
            .iter()
            .map(|(channel, enc)| {
                (
                    channel.as_str(),
                    EncodingDoc {
                        field: &enc.field,
                        field_type: enc.field_type.as_str(),
                    },
                )
            })
            .collect(),
        mark: spec.mark.as_str(),
        title: spec.title.as_deref(),
    };
    serde_json::to_string_pretty(&document).expect("chart document serializes")
}
