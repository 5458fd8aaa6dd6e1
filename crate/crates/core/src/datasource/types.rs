use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Default cap on rows returned by `execute`.
pub const DEFAULT_ROW_LIMIT: usize = 1000;
/// Default per-query timeout in milliseconds.
pub const DEFAULT_QUERY_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSourceKind {
    EmbeddedFile,
    NetworkedRelational,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSourceConfig {
    pub id: String,
    pub kind: DataSourceKind,
    /// Connection string for networked sources, file path otherwise.
    pub location: String,
    #[serde(default = "default_true")]
    pub read_only: bool,
    #[serde(default = "default_row_limit")]
    pub row_limit: usize,
    #[serde(default = "default_timeout_ms")]
    pub query_timeout_ms: u64,
}

fn default_true() -> bool {
    true
}

fn default_row_limit() -> usize {
    DEFAULT_ROW_LIMIT
}

fn default_timeout_ms() -> u64 {
    DEFAULT_QUERY_TIMEOUT_MS
}

impl DataSourceConfig {
    pub fn new(id: impl Into<String>, kind: DataSourceKind, location: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            location: location.into(),
            read_only: true,
            row_limit: DEFAULT_ROW_LIMIT,
            query_timeout_ms: DEFAULT_QUERY_TIMEOUT_MS,
        }
    }

    pub fn with_row_limit(mut self, row_limit: usize) -> Self {
        self.row_limit = row_limit;
        self
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.query_timeout_ms = timeout_ms;
        self
    }
}

/// Canonical column type tag, following SQLite affinity names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SqlType {
    Integer,
    Real,
    Text,
    Blob,
    Numeric,
}

impl SqlType {
    pub fn as_str(&self) -> &'static str {
        match self {
            SqlType::Integer => "INTEGER",
            SqlType::Real => "REAL",
            SqlType::Text => "TEXT",
            SqlType::Blob => "BLOB",
            SqlType::Numeric => "NUMERIC",
        }
    }

    /// Maps a declared column type to its canonical tag using SQLite's
    /// affinity rules.
    pub fn from_declared(declared: &str) -> SqlType {
        let upper = declared.to_ascii_uppercase();
        if upper.contains("INT") {
            SqlType::Integer
        } else if upper.contains("CHAR") || upper.contains("CLOB") || upper.contains("TEXT") {
            SqlType::Text
        } else if upper.contains("BLOB") || upper.trim().is_empty() {
            SqlType::Blob
        } else if upper.contains("REAL") || upper.contains("FLOA") || upper.contains("DOUB") {
            SqlType::Real
        } else {
            SqlType::Numeric
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, SqlType::Integer | SqlType::Real | SqlType::Numeric)
    }
}

impl fmt::Display for SqlType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub sql_type: SqlType,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub foreign_table: String,
    pub foreign_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub columns: Vec<ColumnMeta>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMetadata {
    pub tables: Vec<TableMeta>,
    pub fingerprint: String,
}

impl SchemaMetadata {
    /// Builds metadata and computes the fingerprint over the serialized tables.
    pub fn new(tables: Vec<TableMeta>) -> Self {
        let fingerprint = fingerprint_tables(&tables);
        Self {
            tables,
            fingerprint,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn fingerprint_tables(tables: &[TableMeta]) -> String {
    let encoded = serde_json::to_vec(tables).expect("table metadata serializes");
    hex::encode(Sha256::digest(&encoded))
}

/// One cell of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(BlobCell),
}

/// Binary payloads travel as hex inside a tagged object so they cannot be
/// confused with text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobCell {
    #[serde(rename = "$blob")]
    pub hex: String,
}

impl Cell {
    pub fn blob(bytes: &[u8]) -> Self {
        Cell::Blob(BlobCell {
            hex: hex::encode(bytes),
        })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Whether the cell is null or conforms to `ty`.
    pub fn conforms_to(&self, ty: SqlType) -> bool {
        matches!(
            (self, ty),
            (Cell::Null, _)
                | (Cell::Integer(_), SqlType::Integer | SqlType::Numeric)
                | (Cell::Real(_), SqlType::Real | SqlType::Numeric)
                | (Cell::Text(_), SqlType::Text)
                | (Cell::Blob(_), SqlType::Blob)
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("cell serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultColumn {
    pub name: String,
    pub sql_type: SqlType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<ResultColumn>,
    pub rows: Vec<Vec<Cell>>,
    pub truncated: bool,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Checks row arity and cell/type conformance.
    pub fn is_well_formed(&self) -> bool {
        self.rows.iter().all(|row| {
            row.len() == self.columns.len()
                && row
                    .iter()
                    .zip(&self.columns)
                    .all(|(cell, col)| cell.conforms_to(col.sql_type))
        })
    }
}
