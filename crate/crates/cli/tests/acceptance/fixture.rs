use std::path::{Path, PathBuf};

use mirror_core::datasource::{DataSource, DataSourceConfig, DataSourceKind};
use sha2::{Digest, Sha256};

pub fn workspace(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn sports_sql() -> String {
    std::fs::read_to_string(workspace("fixtures/sports.sql")).expect("sports fixture")
}

/// Writes the sports fixture into `dir` and returns the database path.
pub fn sports_db(dir: &Path) -> PathBuf {
    let path = dir.join("sports.db");
    rusqlite::Connection::open(&path)
        .unwrap()
        .execute_batch(&sports_sql())
        .unwrap();
    path
}

pub fn open_sports(path: &Path) -> DataSource {
    DataSource::open(DataSourceConfig::new(
        "sports",
        DataSourceKind::EmbeddedFile,
        path.to_string_lossy(),
    ))
    .unwrap()
}

pub fn file_hash(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// Fails the criterion with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
