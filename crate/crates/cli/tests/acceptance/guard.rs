//! Mutated SQL fuzzing. Every string the guard accepts is executed on a
//! writable connection; the database file must not change.

use std::time::{Duration, Instant};

use mirror_core::sql_guard::validate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixture::{ensure, file_hash, sports_db};

const CASES: usize = 12_000;

const BASES: &[&str] = &[
    "SELECT name FROM players WHERE ppg > 20",
    "SELECT * FROM teams",
    "SELECT t.name, COUNT(*) FROM teams t JOIN players p ON p.team_id = t.team_id GROUP BY t.name",
    "WITH top AS (SELECT * FROM players ORDER BY ppg DESC LIMIT 3) SELECT name FROM top",
    "SELECT name FROM players UNION SELECT name FROM teams",
    "SELECT 1",
    "SELECT (SELECT MAX(ppg) FROM players) AS best",
];

const PAYLOADS: &[&str] = &[
    "INSERT INTO teams VALUES (99, 'Ghosts', 'Nowhere', 1900)",
    "INSERT INTO players (name) SELECT name FROM teams",
    "UPDATE players SET ppg = 0",
    "UPDATE teams SET name = 'x' WHERE team_id = 1",
    "DELETE FROM players",
    "DELETE FROM teams WHERE 1",
    "DROP TABLE players",
    "DROP TABLE IF EXISTS teams",
    "ALTER TABLE players ADD COLUMN z INTEGER",
    "ALTER TABLE teams RENAME TO t2",
    "CREATE TABLE pwned (x)",
    "PRAGMA user_version = 7",
    "VACUUM",
    "REPLACE INTO teams VALUES (1, 'x', 'y', 2)",
];

fn splice(rng: &mut ChaCha8Rng) -> String {
    let base = *BASES.choose(rng).unwrap();
    let payload = *PAYLOADS.choose(rng).unwrap();
    let mut sql = match rng.random_range(0..10) {
        0 => format!("{base}; {payload}"),
        1 => format!("{payload}; {base}"),
        2 => format!("{base};{payload};"),
        3 => format!("{base} /* ; */ ; {payload}"),
        4 => format!("{base} -- x\n; {payload}"),
        5 => format!("WITH x AS ({payload} RETURNING *) {base}"),
        6 => format!("{base} WHERE 1 = ({payload})"),
        7 => {
            // Payload cut into the base at a random token boundary.
            let words: Vec<&str> = base.split(' ').collect();
            let at = rng.random_range(0..=words.len());
            let mut out = words[..at].join(" ");
            out.push_str(&format!(" ; {payload} ; "));
            out.push_str(&words[at..].join(" "));
            out
        }
        8 => format!("{base} /* {payload} */"),
        _ => format!("SELECT '{}' AS s", payload.replace('\'', "''")),
    };
    if rng.random_bool(0.3) {
        sql = sql
            .chars()
            .map(|c| if rng.random_bool(0.5) { c.to_ascii_lowercase() } else { c.to_ascii_uppercase() })
            .collect();
    }
    if rng.random_bool(0.2) {
        sql = sql.replace(' ', "\n\t ");
    }
    if rng.random_bool(0.1) {
        sql.push(';');
    }
    sql
}

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let db = sports_db(dir.path());
    let before = file_hash(&db);
    let conn = rusqlite::Connection::open(&db).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let started = Instant::now();
    let (mut accepted, mut executed) = (0usize, 0usize);
    for _ in 0..CASES {
        let sql = splice(&mut rng);
        if validate(&sql).accepted {
            accepted += 1;
            if conn.execute_batch(&sql).is_ok() {
                executed += 1;
            }
        }
    }
    drop(conn);
    let elapsed = started.elapsed();
    ensure(file_hash(&db) == before, || {
        format!("database changed after {accepted} accepted statements")
    })?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{CASES} mutated strings, {accepted} accepted ({executed} executed on a writable connection), hash unchanged"
    ))
}
