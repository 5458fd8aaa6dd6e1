//! The chart corpus is classified exactly; accepted specs only reference
//! result columns, carry exactly the table rows and survive emit/parse.

use std::collections::{BTreeMap, BTreeSet};

use mirror_core::chartspec::{emit, parse_and_validate};
use mirror_core::datasource::{Cell, ResultColumn, ResultTable, SqlType};
use serde_json::Value;

use crate::fixture::{ensure, workspace};

fn load() -> (ResultTable, Vec<(String, String)>) {
    let text = std::fs::read_to_string(workspace("fixtures/chart_corpus.json")).unwrap();
    let corpus: Value = serde_json::from_str(&text).unwrap();
    let columns = corpus["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| ResultColumn {
            name: c["name"].as_str().unwrap().to_owned(),
            sql_type: serde_json::from_value::<SqlType>(c["type"].clone()).unwrap(),
        })
        .collect();
    let rows: Vec<Vec<Cell>> = serde_json::from_value(corpus["rows"].clone()).unwrap();
    let cases = corpus["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["expect"].as_str().unwrap().to_owned(), c["raw"].as_str().unwrap().to_owned()))
        .collect();
    (ResultTable { columns, rows, truncated: false }, cases)
}

/// Row records built straight from the table cells.
fn records(table: &ResultTable) -> Vec<Value> {
    table
        .rows
        .iter()
        .map(|row| {
            let map: serde_json::Map<String, Value> = table
                .columns
                .iter()
                .zip(row)
                .map(|(col, cell)| (col.name.clone(), cell.to_json()))
                .collect();
            Value::Object(map)
        })
        .collect()
}

pub fn run() -> Result<String, String> {
    let (table, cases) = load();
    ensure(cases.len() == 30, || format!("corpus has {} cases", cases.len()))?;
    let columns: BTreeSet<&str> = table.column_names().collect();
    let expected_values = records(&table);
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for (i, (expect, raw)) in cases.iter().enumerate() {
        let got = match parse_and_validate(raw, &table) {
            Ok(spec) => {
                let doc = emit(&spec);
                let value: Value = serde_json::from_str(&doc).map_err(|e| format!("case {i}: {e}"))?;
                for enc in value["encoding"].as_object().into_iter().flat_map(|m| m.values()) {
                    let field = enc["field"].as_str().unwrap_or_default();
                    ensure(columns.contains(field), || format!("case {i}: field {field} not in the table"))?;
                }
                ensure(value["data"]["values"].as_array() == Some(&expected_values), || {
                    format!("case {i}: inline data differs from the table")
                })?;
                let again = parse_and_validate(&doc, &table).map_err(|e| format!("case {i}: re-parse {e}"))?;
                ensure(emit(&again) == doc, || format!("case {i}: emit/parse is not a fixed point"))?;
                "ok".to_owned()
            }
            Err(e) => e.kind.as_str().to_owned(),
        };
        ensure(&got == expect, || format!("case {i}: got {got}, expected {expect}: {raw}"))?;
        *tally.entry(got).or_default() += 1;
    }
    let summary: Vec<String> = tally.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok(format!("30 cases classified exactly ({})", summary.join(", ")))
}
