use rusqlite::Connection;

use super::error::DataSourceError;
use super::quote_ident;
use super::types::{ColumnMeta, ForeignKey, SchemaMetadata, SqlType, TableMeta};

/// Reads user tables and views, sorted by name, columns in declaration order.
pub(super) fn read_schema(conn: &Connection) -> Result<SchemaMetadata, DataSourceError> {
    let mut names: Vec<String> = conn
        .prepare(
            "SELECT name FROM sqlite_master \
             WHERE type IN ('table', 'view') AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\'",
        )?
        .query_map([], |row| row.get(0))?
        .collect::<Result<_, _>>()?;
    names.sort();

    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        tables.push(read_table(conn, name)?);
    }
    // Foreign keys declared without a target column reference the target's
    // primary key.
    let resolved: Vec<TableMeta> = tables
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for fk in &mut t.foreign_keys {
                if fk.foreign_column.is_empty() {
                    if let Some(pk) = tables
                        .iter()
                        .find(|o| o.name == fk.foreign_table)
                        .and_then(|o| o.primary_key.first())
                    {
                        fk.foreign_column = pk.clone();
                    }
                }
            }
            t
        })
        .collect();
    Ok(SchemaMetadata::new(resolved))
}

fn read_table(conn: &Connection, name: &str) -> Result<TableMeta, DataSourceError> {
    let quoted = quote_ident(name);
    let mut pk: Vec<(i64, String)> = Vec::new();
    let columns = conn
        .prepare(&format!("PRAGMA table_info({quoted})"))?
        .query_map([], |row| {
            let name: String = row.get(1)?;
            let declared: Option<String> = row.get(2)?;
            let notnull: i64 = row.get(3)?;
            let pk_index: i64 = row.get(5)?;
            Ok((name, declared.unwrap_or_default(), notnull, pk_index))
        })?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|(name, declared, notnull, pk_index)| {
            if pk_index > 0 {
                pk.push((pk_index, name.clone()));
            }
            ColumnMeta {
                name,
                sql_type: SqlType::from_declared(&declared),
                nullable: notnull == 0,
            }
        })
        .collect();
    pk.sort();

    let mut fk_rows: Vec<(i64, i64, ForeignKey)> = conn
        .prepare(&format!("PRAGMA foreign_key_list({quoted})"))?
        .query_map([], |row| {
            let id: i64 = row.get(0)?;
            let seq: i64 = row.get(1)?;
            let table: String = row.get(2)?;
            let from: String = row.get(3)?;
            let to: Option<String> = row.get(4)?;
            Ok((
                id,
                seq,
                ForeignKey {
                    column: from,
                    foreign_table: table,
                    foreign_column: to.unwrap_or_default(),
                },
            ))
        })?
        .collect::<Result<_, _>>()?;
    // PRAGMA lists constraints in reverse declaration order.
    fk_rows.sort_by_key(|(id, seq, _)| (std::cmp::Reverse(*id), *seq));

    Ok(TableMeta {
        name: name.to_owned(),
        columns,
        primary_key: pk.into_iter().map(|(_, n)| n).collect(),
        foreign_keys: fk_rows.into_iter().map(|(_, _, fk)| fk).collect(),
    })
}
