use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("no SELECT or WITH statement found in model output")]
pub struct ExtractionError;

/// Statement-leading keywords. Text after a top-level `;` that starts with
/// one of these is another statement, not commentary.
const STATEMENT_KEYWORDS: &[&str] = &[
    "SELECT", "WITH", "VALUES", "INSERT", "UPDATE", "DELETE", "REPLACE", "UPSERT", "MERGE",
    "DROP", "CREATE", "ALTER", "ATTACH", "DETACH", "PRAGMA", "VACUUM", "REINDEX", "ANALYZE",
    "BEGIN", "COMMIT", "END", "ROLLBACK", "SAVEPOINT", "RELEASE", "EXPLAIN", "TRUNCATE", "GRANT",
];

/// Words that may start a continuation line of a query.
const CLAUSE_KEYWORDS: &[&str] = &[
    "SELECT", "WITH", "FROM", "WHERE", "GROUP", "ORDER", "HAVING", "LIMIT", "OFFSET", "JOIN",
    "LEFT", "RIGHT", "INNER", "OUTER", "CROSS", "FULL", "NATURAL", "ON", "USING", "AND", "OR",
    "NOT", "UNION", "INTERSECT", "EXCEPT", "AS", "CASE", "WHEN", "THEN", "ELSE", "END", "WINDOW",
    "VALUES", "DISTINCT", "ALL", "IN", "IS", "BETWEEN", "LIKE", "EXISTS",
];

/// Pulls the SQL statement out of raw model output.
///
/// Code fences are stripped, leading prose before the first line starting
/// with SELECT/WITH is dropped, and anything after the statement's
/// terminating semicolon is dropped unless it is itself another statement
/// (which is kept so that the guard sees and rejects it).
pub fn extract_sql(raw: &str) -> Result<String, ExtractionError> {
    let body = fenced_block(raw).unwrap_or(raw);
    let start = statement_start(body).ok_or(ExtractionError)?;
    let candidate = &body[start..];
    let end = statement_end(candidate);
    let sql = candidate[..end].trim();
    if sql.is_empty() {
        return Err(ExtractionError);
    }
    Ok(sql.to_owned())
}

/// Content of the first ``` block that contains a SELECT/WITH keyword.
fn fenced_block(raw: &str) -> Option<&str> {
    let mut rest = raw;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after_ticks = offset + open + 3;
        let line_end = raw[after_ticks..]
            .find('\n')
            .map(|i| after_ticks + i + 1)
            .unwrap_or(raw.len());
        let close = raw[line_end..].find("```").map(|i| line_end + i);
        let inner = &raw[line_end..close.unwrap_or(raw.len())];
        if find_keyword(inner, &["SELECT", "WITH"]).is_some() {
            return Some(inner);
        }
        match close {
            Some(c) => {
                offset = c + 3;
                rest = &raw[offset..];
            }
            None => break,
        }
    }
    None
}

fn statement_start(text: &str) -> Option<usize> {
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        if starts_with_word(trimmed, "SELECT") || starts_with_word(trimmed, "WITH") {
            return Some(pos + indent);
        }
        pos += line.len();
    }
    find_keyword(text, &["SELECT", "WITH"])
}

/// Byte offset of the first whole-word, case-insensitive occurrence of any
/// keyword.
fn find_keyword(text: &str, keywords: &[&str]) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if is_word_byte(c) {
            let begin = i;
            while i < bytes.len() && is_word_byte(bytes[i]) {
                i += 1;
            }
            let word = &text[begin..i];
            if keywords.iter().any(|k| word.eq_ignore_ascii_case(k)) {
                return Some(begin);
            }
        } else {
            i += 1;
        }
    }
    None
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

fn starts_with_word(text: &str, word: &str) -> bool {
    text.len() >= word.len()
        && text[..word.len()].eq_ignore_ascii_case(word)
        && !text[word.len()..].bytes().next().is_some_and(is_word_byte)
}

fn first_word(text: &str) -> &str {
    let t = text.trim_start();
    let end = t.bytes().position(|b| !is_word_byte(b)).unwrap_or(t.len());
    &t[..end]
}

fn is_keyword(word: &str, set: &[&str]) -> bool {
    set.iter().any(|k| word.eq_ignore_ascii_case(k))
}

/// `WITH` followed by `name AS` or `name(`, as opposed to prose.
fn looks_like_cte(text: &str) -> bool {
    let t = text.trim_start();
    let rest = t[4.min(t.len())..].trim_start();
    let rest = if starts_with_word(rest, "RECURSIVE") {
        rest[9..].trim_start()
    } else {
        rest
    };
    let name = first_word(rest);
    if name.is_empty() {
        return false;
    }
    let after = rest[name.len()..].trim_start();
    after.starts_with('(') || starts_with_word(after, "AS")
}

fn is_statement_start(text: &str) -> bool {
    let word = first_word(text);
    if word.eq_ignore_ascii_case("WITH") {
        return looks_like_cte(text);
    }
    is_keyword(word, STATEMENT_KEYWORDS)
}

/// Prose-like line: capitalized word that is not a SQL keyword.
fn is_prose_line(line: &str) -> bool {
    let word = first_word(line);
    let mut chars = word.chars();
    matches!(
        (chars.next(), chars.next()),
        (Some(a), Some(b)) if a.is_uppercase() && b.is_lowercase()
    ) && !is_keyword(word, CLAUSE_KEYWORDS)
}

/// End offset of the candidate statement, scanning outside quotes and
/// comments for terminators.
fn statement_end(text: &str) -> usize {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut line_start = true;
    let mut blank_run = false;
    while i < bytes.len() {
        if line_start {
            let line_end = text[i..].find('\n').map(|n| i + n).unwrap_or(text.len());
            let line = &text[i..line_end];
            let trimmed = line.trim_start();
            if i > 0 && (trimmed.starts_with("###") || trimmed.starts_with("```")) {
                return i;
            }
            if blank_run && !trimmed.is_empty() && is_prose_line(trimmed) {
                return i;
            }
            blank_run = trimmed.is_empty();
            line_start = false;
        }
        match bytes[i] {
            b'\n' => {
                line_start = true;
                i += 1;
            }
            quote @ (b'\'' | b'"' | b'`') => i = skip_quoted(bytes, i, quote),
            b'[' => {
                i = bytes[i + 1..]
                    .iter()
                    .position(|&b| b == b']')
                    .map(|p| i + p + 2)
                    .unwrap_or(bytes.len());
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                i = bytes[i..].iter().position(|&b| b == b'\n').map(|p| i + p).unwrap_or(bytes.len());
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i = text[i + 2..].find("*/").map(|p| i + p + 4).unwrap_or(bytes.len());
            }
            b';' => {
                let remainder = &text[i + 1..];
                if !is_statement_start(remainder) {
                    return i + 1;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    text.len()
}

/// Index just past the closing quote; doubled quotes are escapes.
fn skip_quoted(bytes: &[u8], open: usize, quote: u8) -> usize {
    let mut i = open + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}
