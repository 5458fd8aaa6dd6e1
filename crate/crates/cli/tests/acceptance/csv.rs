//! Generated CSV files read back through `SELECT *` must equal an
//! independent re-read of the file under the typing rules: a column is
//! INTEGER when every non-empty cell is an integer, REAL when every one is
//! numeric, TEXT otherwise; empty cells are NULL.

use std::path::Path;

use mirror_core::datasource::{Cell, DataSource, DataSourceConfig, DataSourceKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixture::ensure;

const FILES: u64 = 20;

/// Minimal RFC 4180 reader: quoted fields may hold commas, doubled quotes
/// and line breaks.
fn read_records(text: &str) -> Vec<Vec<String>> {
    let mut records = Vec::new();
    let (mut record, mut field) = (Vec::new(), String::new());
    let (mut quoted, mut pending) = (false, false);
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        pending = true;
        match (quoted, c) {
            (true, '"') if chars.peek() == Some(&'"') => {
                chars.next();
                field.push('"');
            }
            (true, '"') => quoted = false,
            (true, _) => field.push(c),
            (false, '"') => quoted = true,
            (false, ',') => record.push(std::mem::take(&mut field)),
            (false, '\r') => {}
            (false, '\n') => {
                record.push(std::mem::take(&mut field));
                records.push(std::mem::take(&mut record));
                pending = false;
            }
            (false, _) => field.push(c),
        }
    }
    if pending {
        record.push(field);
        records.push(record);
    }
    records
}

fn is_integer(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && s.parse::<i64>().is_ok()
}

fn is_real(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    let has_digit = s.bytes().any(|b| b.is_ascii_digit());
    let plain = s.bytes().all(|b| b.is_ascii_digit() || b".+-eE".contains(&b));
    has_digit && plain && !lower.contains("inf") && s.parse::<f64>().is_ok_and(f64::is_finite)
}

enum Col {
    Int,
    Real,
    Text,
}

fn column_cells(cells: &[&str]) -> Vec<Cell> {
    let present: Vec<&&str> = cells.iter().filter(|c| !c.is_empty()).collect();
    let col = if present.is_empty() {
        Col::Text
    } else if present.iter().all(|c| is_integer(c)) {
        Col::Int
    } else if present.iter().all(|c| is_real(c)) {
        Col::Real
    } else {
        Col::Text
    };
    cells
        .iter()
        .map(|c| match (c.is_empty(), &col) {
            (true, _) => Cell::Null,
            (false, Col::Int) => Cell::Integer(c.parse().unwrap()),
            (false, Col::Real) => Cell::Real(c.parse().unwrap()),
            (false, Col::Text) => Cell::Text(c.to_string()),
        })
        .collect()
}

fn cell_text(rng: &mut ChaCha8Rng, kind: u8) -> String {
    if rng.random_bool(0.1) {
        return String::new();
    }
    match kind {
        0 => rng.random_range(-10_000i64..10_000).to_string(),
        1 => format!("{:.4}", rng.random_range(-500.0..500.0)),
        2 => ["north", "south, east", "say \"hi\"", "two\nlines", "Zoë", "42abc", "007"]
            .choose(rng)
            .unwrap()
            .to_string(),
        _ => match rng.random_range(0..3) {
            0 => rng.random_range(0..9).to_string(),
            1 => format!("{}.5", rng.random_range(0..9)),
            _ => "none".into(),
        },
    }
}

fn encode(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

fn generate(dir: &Path, seed: u64) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let kinds: Vec<u8> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..4)).collect();
    let mut text = kinds.iter().enumerate().map(|(i, _)| format!("col_{i}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for _ in 0..rng.random_range(1..40) {
        let mut row: Vec<String> = kinds.iter().map(|k| encode(&cell_text(&mut rng, *k))).collect();
        if row.len() == 1 && row[0].is_empty() {
            row[0] = "\"\"".into();
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join(format!("sheet_{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut total_rows = 0;
    for seed in 0..FILES {
        let path = generate(dir.path(), seed);
        let records = read_records(&std::fs::read_to_string(&path).unwrap());
        let (header, rows) = records.split_first().unwrap();
        let columns: Vec<Vec<Cell>> = (0..header.len())
            .map(|i| column_cells(&rows.iter().map(|r| r[i].as_str()).collect::<Vec<_>>()))
            .collect();

        let config = DataSourceConfig::new("sheet", DataSourceKind::Csv, path.to_string_lossy()).with_row_limit(100_000);
        let ds = DataSource::open(config).map_err(|e| format!("file {seed}: {e}"))?;
        let got = ds
            .execute(&format!("SELECT * FROM sheet_{seed}"))
            .map_err(|e| format!("file {seed}: {e}"))?;
        let names: Vec<&str> = got.column_names().collect();
        ensure(names == header.iter().map(String::as_str).collect::<Vec<_>>(), || {
            format!("file {seed}: columns {names:?}")
        })?;
        ensure(got.rows.len() == rows.len(), || format!("file {seed}: {} rows", got.rows.len()))?;
        for (r, row) in got.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                ensure(*cell == columns[c][r], || {
                    format!("file {seed} row {r} col {c}: {cell:?} != {:?}", columns[c][r])
                })?;
            }
        }
        total_rows += rows.len();
    }
    Ok(format!("{FILES} generated files ({total_rows} rows) match an independent re-read"))
}
