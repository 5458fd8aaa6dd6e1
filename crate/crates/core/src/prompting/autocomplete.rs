use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasource::SchemaMetadata;

pub const MAX_SUGGESTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuggestionKind {
    Table,
    Column,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub completion: String,
    pub kind: SuggestionKind,
    pub source_table: Option<String>,
}

/// Identifier completions for the word under the cursor.
///
/// Matching is a case-insensitive prefix test against table and column
/// names. Tables come first, then columns, each group sorted by lowercase
/// name. A column name shared by several tables is suggested once, with
/// the lexicographically first table as its source.
pub fn autocomplete(meta: &SchemaMetadata, text_before_cursor: &str) -> Vec<Suggestion> {
    let word_start = text_before_cursor
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphanumeric() || *c == '_')
        .last()
        .map(|(i, _)| i)
        .unwrap_or(text_before_cursor.len());
    let word = text_before_cursor[word_start..].to_lowercase();
    if word.is_empty() {
        return Vec::new();
    }

    let mut tables: Vec<&str> = meta
        .tables
        .iter()
        .map(|t| t.name.as_str())
        .filter(|name| name.to_lowercase().starts_with(&word))
        .collect();
    tables.sort_by_key(|name| (name.to_lowercase(), name.to_string()));

    let mut columns: BTreeMap<(String, String), &str> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut ordered_tables: Vec<_> = meta.tables.iter().collect();
    ordered_tables.sort_by(|a, b| a.name.cmp(&b.name));
    for table in ordered_tables {
        for column in &table.columns {
            if column.name.to_lowercase().starts_with(&word) && seen.insert(column.name.clone()) {
                columns.insert((column.name.to_lowercase(), column.name.clone()), &table.name);
            }
        }
    }

    tables
        .into_iter()
        .map(|name| Suggestion {
            completion: name.to_owned(),
            kind: SuggestionKind::Table,
            source_table: None,
        })
        .chain(columns.into_iter().map(|((_, name), table)| Suggestion {
            completion: name,
            kind: SuggestionKind::Column,
            source_table: Some(table.to_owned()),
        }))
        .take(MAX_SUGGESTIONS)
        .collect()
}
