#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mirror_core::datasource::{DataSource, DataSourceConfig, DataSourceKind};
use sha2::{Digest, Sha256};

pub fn sports_sql() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sports.sql");
    std::fs::read_to_string(path).expect("sports fixture")
}

/// The `CREATE TABLE` lines of the fixture, in file order.
pub fn sports_ddl() -> String {
    sports_sql()
        .lines()
        .filter(|l| l.starts_with("CREATE TABLE"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub path: PathBuf,
}

impl Fixture {
    pub fn sports() -> Self {
        Self::from_sql(&sports_sql())
    }

    pub fn from_sql(sql: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.db");
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch(sql).unwrap();
        drop(conn);
        Self { dir, path }
    }

    pub fn open(&self) -> DataSource {
        self.open_with(|c| c)
    }

    pub fn open_with(&self, f: impl FnOnce(DataSourceConfig) -> DataSourceConfig) -> DataSource {
        let config = DataSourceConfig::new(
            "sports",
            DataSourceKind::EmbeddedFile,
            self.path.to_string_lossy(),
        );
        DataSource::open(f(config)).unwrap()
    }

    pub fn hash(&self) -> String {
        file_hash(&self.path)
    }
}

pub fn file_hash(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}
