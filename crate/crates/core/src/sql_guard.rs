//! Read-only statement allowlist.
//!
//! A statement is accepted only when it is a single query whose root body is
//! a `SELECT` (or a set operation over selects, optionally behind `WITH`)
//! and nothing inside it, CTEs and subqueries included, is a data-modifying,
//! DDL, or administrative construct. Lexing follows SQLite's rules so the
//! statement boundaries seen here match what the engine sees.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, ObjectName, ObjectNamePart, Query, Select, SetExpr, Statement, TableFactor, Visit,
    Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictReason {
    Ok,
    NotASelect,
    MultipleStatements,
    Unparseable,
    ForbiddenConstruct,
}

impl VerdictReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictReason::Ok => "ok",
            VerdictReason::NotASelect => "not-a-select",
            VerdictReason::MultipleStatements => "multiple-statements",
            VerdictReason::Unparseable => "unparseable",
            VerdictReason::ForbiddenConstruct => "forbidden-construct",
        }
    }
}

impl fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    /// Tables named in FROM/JOIN positions, CTE names excluded. Empty when
    /// the input did not parse.
    pub referenced_tables: BTreeSet<String>,
    /// Human-readable explanation for rejections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ValidationVerdict {
    fn reject(reason: VerdictReason, detail: impl Into<String>) -> Self {
        Self {
            accepted: false,
            reason,
            referenced_tables: BTreeSet::new(),
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse SQL: {0}")]
pub struct ParseError(pub String);

/// Scalar functions with side effects outside the query.
const FORBIDDEN_FUNCTIONS: &[&str] = &[
    "load_extension",
    "readfile",
    "writefile",
    "edit",
    "fts3_tokenizer",
    "sqlite_dbpage",
];

/// Table-valued functions rejected by name prefix.
const FORBIDDEN_TABLE_PREFIXES: &[&str] = &["pragma_", "sqlite_dbpage", "fts3_tokenizer"];

pub fn validate(sql: &str) -> ValidationVerdict {
    let dialect = SQLiteDialect {};
    let tokens = match Tokenizer::new(&dialect, sql).tokenize() {
        Ok(tokens) => tokens,
        Err(e) => return ValidationVerdict::reject(VerdictReason::Unparseable, e.to_string()),
    };
    match count_statements(&tokens) {
        None => return ValidationVerdict::reject(VerdictReason::Unparseable, "empty statement"),
        Some(0) => return ValidationVerdict::reject(VerdictReason::Unparseable, "empty input"),
        Some(1) => {}
        Some(n) => {
            return ValidationVerdict::reject(
                VerdictReason::MultipleStatements,
                format!("found {n} statements; exactly one is allowed"),
            )
        }
    }

    let mut statements = match Parser::parse_sql(&dialect, sql) {
        Ok(statements) => statements,
        Err(e) => return ValidationVerdict::reject(VerdictReason::Unparseable, e.to_string()),
    };
    if statements.len() != 1 {
        return ValidationVerdict::reject(
            VerdictReason::MultipleStatements,
            format!("found {} statements; exactly one is allowed", statements.len()),
        );
    }
    let statement = statements.remove(0);
    let referenced_tables = collect_tables(&statement);

    let query = match &statement {
        Statement::Query(query) => query,
        other => {
            let mut verdict =
                ValidationVerdict::reject(VerdictReason::NotASelect, statement_kind(other));
            verdict.referenced_tables = referenced_tables;
            return verdict;
        }
    };
    if !is_select_body(&query.body) {
        let mut verdict = ValidationVerdict::reject(
            VerdictReason::NotASelect,
            "query body is not a SELECT",
        );
        verdict.referenced_tables = referenced_tables;
        return verdict;
    }

    let mut checker = ForbiddenFinder;
    if let ControlFlow::Break(detail) = query.visit(&mut checker) {
        let mut verdict = ValidationVerdict::reject(VerdictReason::ForbiddenConstruct, detail);
        verdict.referenced_tables = referenced_tables;
        return verdict;
    }

    ValidationVerdict {
        accepted: true,
        reason: VerdictReason::Ok,
        referenced_tables,
        detail: None,
    }
}

/// Every table named in FROM/JOIN clauses, with CTE names removed.
pub fn referenced_identifiers(sql: &str) -> Result<BTreeSet<String>, ParseError> {
    let statements =
        Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| ParseError(e.to_string()))?;
    if statements.is_empty() {
        return Err(ParseError("empty input".into()));
    }
    Ok(statements.iter().flat_map(collect_tables).collect())
}

/// Counts `;`-separated segments that hold anything besides whitespace and
/// comments. `None` when a semicolon terminates an empty segment.
fn count_statements(tokens: &[Token]) -> Option<usize> {
    let mut count = 0;
    let mut segment_has_content = false;
    for token in tokens {
        match token {
            Token::SemiColon => {
                if !segment_has_content {
                    return None;
                }
                count += 1;
                segment_has_content = false;
            }
            Token::Whitespace(_) | Token::EOF => {}
            _ => segment_has_content = true,
        }
    }
    if segment_has_content {
        count += 1;
    }
    Some(count)
}

fn is_select_body(body: &SetExpr) -> bool {
    match body {
        SetExpr::Select(_) => true,
        SetExpr::Query(q) => is_select_body(&q.body),
        SetExpr::SetOperation { left, right, .. } => is_select_body(left) && is_select_body(right),
        _ => false,
    }
}

fn statement_kind(statement: &Statement) -> String {
    let text = statement.to_string();
    let head: Vec<&str> = text.split_whitespace().take(2).collect();
    format!("{} statement is not allowed", head.join(" "))
}

fn object_name(name: &ObjectName) -> String {
    name.0
        .iter()
        .map(|part| match part {
            ObjectNamePart::Identifier(ident) => ident.value.clone(),
            ObjectNamePart::Function(f) => f.name.value.clone(),
        })
        .collect::<Vec<_>>()
        .join(".")
}

fn last_part(name: &ObjectName) -> String {
    match name.0.last() {
        Some(ObjectNamePart::Identifier(ident)) => ident.value.to_ascii_lowercase(),
        Some(ObjectNamePart::Function(f)) => f.name.value.to_ascii_lowercase(),
        None => String::new(),
    }
}

#[derive(Default)]
struct TableCollector {
    relations: BTreeSet<String>,
    cte_names: BTreeSet<String>,
}

impl Visitor for TableCollector {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                self.cte_names.insert(cte.alias.name.value.to_ascii_lowercase());
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_relation(&mut self, relation: &ObjectName) -> ControlFlow<()> {
        self.relations.insert(object_name(relation));
        ControlFlow::Continue(())
    }
}

fn collect_tables(statement: &Statement) -> BTreeSet<String> {
    let mut collector = TableCollector::default();
    let _ = statement.visit(&mut collector);
    let TableCollector {
        relations,
        cte_names,
    } = collector;
    relations
        .into_iter()
        .filter(|name| name.contains('.') || !cte_names.contains(&name.to_ascii_lowercase()))
        .collect()
}

/// Breaks with a description at the first forbidden construct.
struct ForbiddenFinder;

impl Visitor for ForbiddenFinder {
    type Break = String;

    fn pre_visit_statement(&mut self, statement: &Statement) -> ControlFlow<String> {
        // The root query is visited as a `Query`, so any statement reached
        // here is nested (e.g. a data-modifying CTE).
        ControlFlow::Break(format!("nested {}", statement_kind(statement)))
    }

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<String> {
        if !query.locks.is_empty() {
            return ControlFlow::Break("locking clause is not allowed".into());
        }
        if query.for_clause.is_some()
            || query.settings.is_some()
            || query.format_clause.is_some()
            || !query.pipe_operators.is_empty()
        {
            return ControlFlow::Break("dialect-specific query clause is not allowed".into());
        }
        match &*query.body {
            SetExpr::Insert(_) | SetExpr::Update(_) | SetExpr::Delete(_) | SetExpr::Merge(_) => {
                ControlFlow::Break("data-modifying query body".into())
            }
            _ => ControlFlow::Continue(()),
        }
    }

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<String> {
        if select.into.is_some() {
            return ControlFlow::Break("SELECT INTO is not allowed".into());
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<String> {
        if let TableFactor::Table { name, .. } = factor {
            let last = last_part(name);
            if FORBIDDEN_TABLE_PREFIXES.iter().any(|p| last.starts_with(p)) {
                return ControlFlow::Break(format!("table-valued function `{last}` is not allowed"));
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<String> {
        if let Expr::Function(function) = expr {
            let last = last_part(&function.name);
            if FORBIDDEN_FUNCTIONS.contains(&last.as_str()) {
                return ControlFlow::Break(format!("function `{last}` is not allowed"));
            }
        }
        ControlFlow::Continue(())
    }
}
