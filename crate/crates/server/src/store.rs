//! On-disk persistence: one SQLite file holding data source configs,
//! template overrides and session records as JSON documents.

use std::path::Path;
use std::sync::Mutex;

use mirror_core::datasource::DataSourceConfig;
use mirror_core::prompting::PromptTemplate;
use rusqlite::{params, Connection, OptionalExtension};

use crate::record::SessionRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("corrupt stored document: {0}")]
    Json(#[from] serde_json::Error),
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS datasources (
    id TEXT PRIMARY KEY,
    seq INTEGER NOT NULL,
    config TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS templates (
    datasource_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    template TEXT NOT NULL,
    PRIMARY KEY (datasource_id, kind)
);
CREATE TABLE IF NOT EXISTS sessions (
    id TEXT PRIMARY KEY,
    created_at TEXT NOT NULL,
    record TEXT NOT NULL
);
";

pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().expect("store lock poisoned")
    }

    pub fn put_datasource(&self, config: &DataSourceConfig) -> Result<(), StoreError> {
        let json = serde_json::to_string(config)?;
        self.conn().execute(
            "INSERT INTO datasources (id, seq, config)
             VALUES (?1, (SELECT COALESCE(MAX(seq), 0) + 1 FROM datasources), ?2)
             ON CONFLICT(id) DO UPDATE SET config = excluded.config",
            params![config.id, json],
        )?;
        Ok(())
    }

    pub fn datasources(&self) -> Result<Vec<DataSourceConfig>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT config FROM datasources ORDER BY seq")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for row in rows {
            out.push(serde_json::from_str(&row?)?);
        }
        Ok(out)
    }

    pub fn put_template(&self, datasource_id: &str, template: &PromptTemplate) -> Result<(), StoreError> {
        let json = serde_json::to_string(template)?;
        self.conn().execute(
            "INSERT INTO templates (datasource_id, kind, template) VALUES (?1, ?2, ?3)
             ON CONFLICT(datasource_id, kind) DO UPDATE SET template = excluded.template",
            params![datasource_id, template.kind.as_str(), json],
        )?;
        Ok(())
    }

    pub fn templates(&self) -> Result<Vec<(String, PromptTemplate)>, StoreError> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare("SELECT datasource_id, template FROM templates ORDER BY datasource_id, kind")?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        let mut out = Vec::new();
        for row in rows {
            let (id, json) = row?;
            out.push((id, serde_json::from_str(&json)?));
        }
        Ok(out)
    }

    pub fn put_session(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let json = serde_json::to_string(record)?;
        self.conn().execute(
            "INSERT INTO sessions (id, created_at, record) VALUES (?1, ?2, ?3)
             ON CONFLICT(id) DO UPDATE SET record = excluded.record",
            params![record.session.id, record.session.created_at.to_rfc3339(), json],
        )?;
        Ok(())
    }

    /// All readable session records. Rows that no longer deserialize are
    /// logged and skipped.
    pub fn sessions(&self) -> Result<Vec<SessionRecord>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT id, record FROM sessions ORDER BY created_at, id")?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        let mut out = Vec::new();
        for row in rows {
            let (id, json) = row?;
            match serde_json::from_str(&json) {
                Ok(record) => out.push(record),
                Err(e) => tracing::warn!(%id, error = %e, "skipping unreadable session"),
            }
        }
        Ok(out)
    }

    /// The stored JSON text of one session, exactly as written.
    pub fn session_json(&self, id: &str) -> Result<Option<String>, StoreError> {
        Ok(self
            .conn()
            .query_row("SELECT record FROM sessions WHERE id = ?1", [id], |r| r.get(0))
            .optional()?)
    }
}
