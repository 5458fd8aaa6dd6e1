//! Data source registration, CSV ingestion, schema introspection and
//! read-only execution.
//!
//! Every query runs on a fresh connection opened with SQLite's read-only
//! flag and `query_only` set, independent of the statement allowlist in
//! [`crate::sql_guard`].

mod csv_ingest;
mod error;
mod introspect;
mod types;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

pub use csv_ingest::{
    infer_column_type, ingest_csv, is_decimal_float, is_decimal_integer, sanitize_identifier,
    EmbeddedInstance,
};
pub use error::{DataSourceError, ExecutionError, ExecutionErrorKind};
pub use types::{
    BlobCell, Cell, ColumnMeta, DataSourceConfig, DataSourceKind, ForeignKey, ResultColumn,
    ResultTable, SchemaMetadata, SqlType, TableMeta, DEFAULT_QUERY_TIMEOUT_MS, DEFAULT_ROW_LIMIT,
};

/// A registered, queryable data source.
#[derive(Debug)]
pub struct DataSource {
    config: DataSourceConfig,
    db_path: PathBuf,
    // Keeps the temporary database alive for CSV sources.
    embedded: Option<EmbeddedInstance>,
    csv_table: Option<String>,
}

impl DataSource {
    /// Validates `config` and opens the source. CSV sources are converted
    /// into a temporary embedded database with one table named after the
    /// file stem.
    pub fn open(config: DataSourceConfig) -> Result<Self, DataSourceError> {
        if config.id.trim().is_empty() {
            return Err(DataSourceError::InvalidConfig("id must not be empty".into()));
        }
        if !config.read_only {
            return Err(DataSourceError::InvalidConfig(
                "read_only must be true; write access is not supported".into(),
            ));
        }
        if config.row_limit == 0 {
            return Err(DataSourceError::InvalidConfig("row_limit must be positive".into()));
        }
        match config.kind {
            DataSourceKind::EmbeddedFile => {
                let path = PathBuf::from(&config.location);
                if !path.is_file() {
                    return Err(DataSourceError::Unreachable(format!(
                        "{} is not a readable file",
                        path.display()
                    )));
                }
                let source = Self {
                    config,
                    db_path: path,
                    embedded: None,
                    csv_table: None,
                };
                // Touch the schema so corrupt or non-database files fail now.
                source
                    .connect()?
                    .query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
                    .map_err(|e| DataSourceError::ParseFailure(e.to_string()))?;
                Ok(source)
            }
            DataSourceKind::Csv => {
                let path = Path::new(&config.location);
                if !path.is_file() {
                    return Err(DataSourceError::Unreachable(format!(
                        "{} is not a readable file",
                        path.display()
                    )));
                }
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let (instance, table) = ingest_csv(path, &stem)?;
                Ok(Self {
                    db_path: instance.db_path().to_path_buf(),
                    config,
                    embedded: Some(instance),
                    csv_table: Some(table),
                })
            }
            DataSourceKind::NetworkedRelational => Err(DataSourceError::UnsupportedKind(format!(
                "networked source `{}`; only embedded SQLite files and CSV are built in",
                config.location
            ))),
        }
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &DataSourceConfig {
        &self.config
    }

    /// Path of the database file queries run against.
    pub fn db_path(&self) -> &Path {
        &self.db_path
    }

    /// Table created from the CSV file, for CSV sources.
    pub fn csv_table(&self) -> Option<&str> {
        self.csv_table.as_deref()
    }

    pub fn is_embedded_copy(&self) -> bool {
        self.embedded.is_some()
    }

    fn connect(&self) -> Result<Connection, DataSourceError> {
        let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX;
        let conn = Connection::open_with_flags(&self.db_path, flags)
            .map_err(|e| DataSourceError::Unreachable(e.to_string()))?;
        conn.pragma_update(None, "query_only", true)?;
        Ok(conn)
    }

    pub fn introspect(&self) -> Result<SchemaMetadata, DataSourceError> {
        let conn = self.connect()?;
        introspect::read_schema(&conn)
    }

    /// Runs a validated statement and returns at most `row_limit` rows.
    pub fn execute(&self, sql: &str) -> Result<ResultTable, ExecutionError> {
        let conn = self
            .connect()
            .map_err(|e| ExecutionError::new(ExecutionErrorKind::Other, e.to_string()))?;
        let deadline = Instant::now() + Duration::from_millis(self.config.query_timeout_ms);
        conn.progress_handler(1_000, Some(move || Instant::now() >= deadline))
            .map_err(|e| ExecutionError::from_engine(&e))?;
        run_query(&conn, sql, self.config.row_limit)
    }
}

fn run_query(conn: &Connection, sql: &str, row_limit: usize) -> Result<ResultTable, ExecutionError> {
    let engine = |e: rusqlite::Error| ExecutionError::from_engine(&e);
    let mut stmt = conn.prepare(sql).map_err(engine)?;
    let declared: Vec<(String, Option<SqlType>)> = stmt
        .columns()
        .iter()
        .map(|c| (c.name().to_owned(), c.decl_type().map(SqlType::from_declared)))
        .collect();
    let width = declared.len();

    let mut rows = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.query([]).map_err(engine)?;
    while let Some(row) = cursor.next().map_err(engine)? {
        if rows.len() == row_limit {
            truncated = true;
            break;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match row.get_ref(i).map_err(engine)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Integer(v),
                ValueRef::Real(v) => Cell::Real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::blob(b),
            });
        }
        rows.push(cells);
    }

    let mut columns = Vec::with_capacity(width);
    for (i, (name, decl)) in declared.into_iter().enumerate() {
        let sql_type = unify_column(&mut rows, i, decl);
        columns.push(ResultColumn { name, sql_type });
    }
    Ok(ResultTable {
        columns,
        rows,
        truncated,
    })
}

/// Picks the column's type tag from the values actually returned (falling
/// back to the declared type for all-null columns) and coerces cells so
/// every one conforms to it.
fn unify_column(rows: &mut [Vec<Cell>], col: usize, declared: Option<SqlType>) -> SqlType {
    let (mut ints, mut reals, mut texts, mut blobs) = (false, false, false, false);
    for row in rows.iter() {
        match &row[col] {
            Cell::Null => {}
            Cell::Integer(_) => ints = true,
            Cell::Real(_) => reals = true,
            Cell::Text(_) => texts = true,
            Cell::Blob(_) => blobs = true,
        }
    }
    let ty = match (ints, reals, texts, blobs) {
        (false, false, false, false) => declared.unwrap_or(SqlType::Text),
        (true, false, false, false) => SqlType::Integer,
        (_, true, false, false) => SqlType::Real,
        (false, false, true, false) => SqlType::Text,
        (false, false, false, true) => SqlType::Blob,
        _ => SqlType::Text,
    };
    for row in rows.iter_mut() {
        let cell = &mut row[col];
        let coerced = match (&*cell, ty) {
            (Cell::Integer(v), SqlType::Real) => Some(Cell::Real(*v as f64)),
            (Cell::Integer(v), SqlType::Text) => Some(Cell::Text(v.to_string())),
            (Cell::Real(v), SqlType::Text) => Some(Cell::Text(v.to_string())),
            (Cell::Blob(b), SqlType::Text) => Some(Cell::Text(b.hex.clone())),
            _ => None,
        };
        if let Some(c) = coerced {
            *cell = c;
        }
    }
    ty
}

const RESERVED: &[&str] = &[
    "add", "all", "alter", "and", "as", "asc", "between", "by", "case", "check", "collate",
    "column", "constraint", "create", "cross", "default", "delete", "desc", "distinct", "drop",
    "else", "end", "escape", "except", "exists", "foreign", "from", "full", "group", "having",
    "in", "index", "inner", "insert", "intersect", "into", "is", "join", "key", "left", "like",
    "limit", "natural", "not", "null", "offset", "on", "or", "order", "outer", "primary",
    "references", "right", "select", "set", "table", "then", "to", "union", "unique", "update",
    "using", "values", "when", "where", "with",
];

/// Quotes an identifier for SQLite unless it is a plain, non-reserved word.
pub fn quote_ident(name: &str) -> String {
    let simple = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !RESERVED.contains(&name.to_ascii_lowercase().as_str());
    if simple {
        name.to_owned()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Registered sources keyed by id. Registration is serialized by the write
/// lock; handles are shared for concurrent reads.
#[derive(Debug, Default)]
pub struct DataSourceRegistry {
    sources: RwLock<BTreeMap<String, Arc<DataSource>>>,
}

impl DataSourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, config: DataSourceConfig) -> Result<Arc<DataSource>, DataSourceError> {
        let mut sources = self.sources.write().expect("registry lock poisoned");
        if sources.contains_key(&config.id) {
            return Err(DataSourceError::DuplicateId(config.id));
        }
        let source = Arc::new(DataSource::open(config)?);
        sources.insert(source.id().to_owned(), Arc::clone(&source));
        tracing::info!(id = source.id(), kind = ?source.config().kind, "registered data source");
        Ok(source)
    }

    pub fn get(&self, id: &str) -> Result<Arc<DataSource>, DataSourceError> {
        self.sources
            .read()
            .expect("registry lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| DataSourceError::UnknownId(id.to_owned()))
    }

    pub fn configs(&self) -> Vec<DataSourceConfig> {
        self.sources
            .read()
            .expect("registry lock poisoned")
            .values()
            .map(|s| s.config().clone())
            .collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sources.read().expect("registry lock poisoned").contains_key(id)
    }
}
