//! `mirror query` over the sports fixture with a scripted transcript.

use std::process::Command;
use std::time::{Duration, Instant};

use mirror_core::chartspec::parse_and_validate;
use mirror_core::datasource::{Cell, ResultTable};
use serde_json::Value;

use crate::fixture::{ensure, sports_db, workspace};

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let db = sports_db(dir.path());
    let transcript = workspace("fixtures/transcripts/top_scorers.json");
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(["query", "--ds"])
        .arg(&db)
        .args(["--question", "Who are the top three scorers?", "--provider"])
        .arg(format!("scripted:{}", transcript.display()))
        .current_dir(dir.path())
        .env_remove("MIRROR_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.code() == Some(0), || {
        format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;

    let sql = stdout
        .strip_prefix("SQL:\n")
        .and_then(|s| s.split("\n\n").next())
        .ok_or("no SQL section")?;
    ensure(sql.contains("SELECT"), || format!("SQL section: {sql}"))?;
    ensure(stdout.contains("(3 rows)"), || "no three-row table".into())?;
    let summary = stdout.split("Summary:\n").nth(1).and_then(|s| s.lines().next()).unwrap_or("");
    ensure(!summary.trim().is_empty(), || "empty summary".into())?;

    // The chart document must validate against the table the SQL yields.
    let conn = rusqlite::Connection::open(&db).unwrap();
    let mut stmt = conn.prepare(sql).map_err(|e| e.to_string())?;
    let names: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let rows: Vec<Vec<Cell>> = stmt
        .query_map([], |r| {
            Ok((0..names.len())
                .map(|i| match r.get_ref(i).unwrap() {
                    rusqlite::types::ValueRef::Integer(v) => Cell::Integer(v),
                    rusqlite::types::ValueRef::Real(v) => Cell::Real(v),
                    rusqlite::types::ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into()),
                    _ => Cell::Null,
                })
                .collect())
        })
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let doc = std::fs::read_to_string(dir.path().join("chart.vl.json")).map_err(|e| e.to_string())?;
    let value: Value = serde_json::from_str(&doc).map_err(|e| e.to_string())?;
    let table: ResultTable = serde_json::from_value(serde_json::json!({
        "columns": names.iter().zip(&rows[0]).map(|(n, c)| serde_json::json!({
            "name": n,
            "sql_type": if matches!(c, Cell::Real(_)) { "REAL" } else { "TEXT" },
        })).collect::<Vec<_>>(),
        "rows": rows,
        "truncated": false,
    }))
    .map_err(|e| e.to_string())?;
    parse_and_validate(&doc, &table).map_err(|e| format!("chart document: {e}"))?;
    ensure(value["data"]["values"].as_array().map(Vec::len) == Some(rows.len()), || {
        "chart data does not match the table".into()
    })?;
    Ok(format!("exit 0 in {:.2}s with SQL, 3-row table, summary and chart", elapsed.as_secs_f64()))
}
