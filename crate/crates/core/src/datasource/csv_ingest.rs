//! CSV to embedded SQLite conversion.
//!
//! Type inference per column: INTEGER when every non-empty cell is a decimal
//! integer that fits in 64 bits, else REAL when every non-empty cell is a
//! decimal float, else TEXT. Empty cells load as NULL. A column with no
//! non-empty cells is TEXT.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use rusqlite::{params_from_iter, Connection};
use tempfile::TempDir;

use super::error::DataSourceError;
use super::types::SqlType;
use super::quote_ident;

/// A temporary on-disk SQLite database holding ingested CSV tables. The
/// directory is removed when the instance is dropped.
#[derive(Debug)]
pub struct EmbeddedInstance {
    dir: TempDir,
    db_path: PathBuf,
    tables: BTreeSet<String>,
}

impl EmbeddedInstance {
    pub fn create() -> Result<Self, DataSourceError> {
        let dir = tempfile::Builder::new()
            .prefix("mirror-csv-")
            .tempdir()
            .map_err(|e| DataSourceError::Unreachable(format!("cannot create temp dir: {e}")))?;
        let db_path = dir.path().join("ingested.db");
        // Create the file so read-only connections can open it even before
        // the first ingest.
        Connection::open(&db_path)?;
        Ok(Self {
            dir,
            db_path,
            tables: BTreeSet::new(),
        })
    }

    pub fn db_path(&self) -> &Path {
        &self.db_path
    }

    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(String::as_str)
    }

    /// Loads `path` into a new table. `table_name` is sanitized and suffixed
    /// `_2`, `_3`, ... on collision; the final name is returned.
    pub fn ingest(&mut self, path: &Path, table_name: &str) -> Result<String, DataSourceError> {
        let parsed = read_csv(path)?;
        let base = sanitize_identifier(table_name);
        let name = unique_name(&base, &self.tables);

        let mut conn = Connection::open(&self.db_path)?;
        let column_defs: Vec<String> = parsed
            .columns
            .iter()
            .zip(&parsed.types)
            .map(|(col, ty)| format!("{} {}", quote_ident(col), ty.as_str()))
            .collect();
        conn.execute_batch(&format!(
            "CREATE TABLE {} ({});",
            quote_ident(&name),
            column_defs.join(", ")
        ))?;

        let tx = conn.transaction()?;
        {
            let placeholders = vec!["?"; parsed.columns.len()].join(", ");
            let mut insert = tx.prepare(&format!(
                "INSERT INTO {} VALUES ({placeholders})",
                quote_ident(&name)
            ))?;
            for record in &parsed.rows {
                let values = record
                    .iter()
                    .zip(&parsed.types)
                    .map(|(cell, ty)| typed_value(cell, *ty));
                insert.execute(params_from_iter(values))?;
            }
        }
        tx.commit()?;
        tracing::debug!(table = %name, rows = parsed.rows.len(), "ingested csv");
        self.tables.insert(name.clone());
        Ok(name)
    }
}

/// Creates a fresh embedded instance containing one table loaded from `path`.
pub fn ingest_csv(path: &Path, table_name: &str) -> Result<(EmbeddedInstance, String), DataSourceError> {
    let mut instance = EmbeddedInstance::create()?;
    let name = instance.ingest(path, table_name)?;
    Ok((instance, name))
}

struct ParsedCsv {
    columns: Vec<String>,
    types: Vec<SqlType>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<ParsedCsv, DataSourceError> {
    let file = File::open(path)
        .map_err(|e| DataSourceError::Unreachable(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let header = reader.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataSourceError::EmptyFile);
    }
    let columns = dedupe_columns(header.iter());

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        rows.push(record.iter().map(str::to_owned).collect::<Vec<_>>());
    }

    let types = (0..columns.len())
        .map(|i| infer_column_type(rows.iter().map(|r| r[i].as_str())))
        .collect();

    Ok(ParsedCsv {
        columns,
        types,
        rows,
    })
}

fn csv_error(err: csv::Error) -> DataSourceError {
    match err.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => DataSourceError::RaggedRows {
            row: pos.as_ref().map(|p| p.line()).unwrap_or(0),
            expected: *expected_len as usize,
            found: *len as usize,
        },
        csv::ErrorKind::Io(e) => DataSourceError::Unreachable(e.to_string()),
        _ => DataSourceError::ParseFailure(err.to_string()),
    }
}

fn dedupe_columns<'a>(header: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    header
        .enumerate()
        .map(|(i, raw)| {
            let base = if raw.trim().is_empty() {
                format!("column_{}", i + 1)
            } else {
                raw.to_owned()
            };
            let name = unique_name(&base, &seen);
            seen.insert(name.clone());
            name
        })
        .collect()
}

fn unique_name(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_owned();
    }
    (2..)
        .map(|n| format!("{base}_{n}"))
        .find(|candidate| !taken.contains(candidate))
        .expect("unbounded suffix search")
}

/// Reduces a file stem to `[A-Za-z_][A-Za-z0-9_]*`.
pub fn sanitize_identifier(stem: &str) -> String {
    let mut out: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if out.is_empty() {
        out.push_str("table");
    } else if out.as_bytes()[0].is_ascii_digit() {
        out.insert(0, '_');
    }
    out
}

pub fn infer_column_type<'a>(cells: impl Iterator<Item = &'a str>) -> SqlType {
    let mut all_int = true;
    let mut all_real = true;
    let mut any = false;
    for cell in cells.filter(|c| !c.is_empty()) {
        any = true;
        if all_int && !is_decimal_integer(cell) {
            all_int = false;
        }
        if !is_decimal_float(cell) {
            all_real = false;
            break;
        }
    }
    match (any, all_int, all_real) {
        (false, _, _) => SqlType::Text,
        (true, true, _) => SqlType::Integer,
        (true, false, true) => SqlType::Real,
        _ => SqlType::Text,
    }
}

pub fn is_decimal_integer(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && s.parse::<i64>().is_ok()
}

/// `[+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?`
pub fn is_decimal_float(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (mantissa, None),
    };
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = all_digits(int_part)
        && frac_part.is_none_or(all_digits)
        && (!int_part.is_empty() || frac_part.is_some_and(|f| !f.is_empty()));
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && all_digits(e)
    });
    mantissa_ok && exponent_ok && body.parse::<f64>().is_ok_and(f64::is_finite)
}

fn typed_value(cell: &str, ty: SqlType) -> rusqlite::types::Value {
    use rusqlite::types::Value;
    if cell.is_empty() {
        return Value::Null;
    }
    match ty {
        SqlType::Integer => Value::Integer(cell.parse().expect("inferred integer")),
        SqlType::Real => Value::Real(cell.parse().expect("inferred real")),
        _ => Value::Text(cell.to_owned()),
    }
}
