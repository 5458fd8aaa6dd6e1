//! Rendering is a pure function of (template, schema or table, question),
//! and the shipped defaults match their golden files.

use mirror_core::datasource::{Cell, ColumnMeta, ResultColumn, ResultTable, SchemaMetadata, SqlType, TableMeta};
use mirror_core::prompting::{
    render_generation_prompt, render_summarization_prompt, render_visualization_prompt, serialize_schema,
    PromptTemplate, RenderedPrompt, TemplateKind, TemplateSet, VisualizationPrompt, DEFAULT_PROMPT_ROW_CAP,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixture::{ensure, open_sports, sports_db, workspace};

const TYPES: [SqlType; 4] = [SqlType::Integer, SqlType::Real, SqlType::Text, SqlType::Blob];

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..8);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

fn literal(rng: &mut ChaCha8Rng) -> String {
    let pieces = ["", "\n", "### ", "Q: ", "  ", "Schema:\n", "-- ", "é"];
    (0..rng.random_range(0..4)).map(|_| *pieces.choose(rng).unwrap()).collect()
}

fn template(rng: &mut ChaCha8Rng, kind: TemplateKind) -> PromptTemplate {
    let mut slots: Vec<&str> = kind.required_slots().to_vec();
    for slot in kind.optional_slots() {
        if rng.random_bool(0.5) {
            slots.push(slot);
        }
    }
    let mut body = literal(rng);
    for slot in slots {
        body.push('{');
        body.push_str(slot);
        body.push('}');
        body.push_str(&literal(rng));
    }
    let instructions = if rng.random_bool(0.5) { format!("Be brief {}.\n", word(rng)) } else { String::new() };
    PromptTemplate::new(format!("t-{}", word(rng)), kind, body, instructions).unwrap()
}

fn schema(rng: &mut ChaCha8Rng) -> SchemaMetadata {
    let tables = (0..rng.random_range(0..4))
        .map(|i| TableMeta {
            name: format!("{}_{i}", word(rng)),
            columns: (0..rng.random_range(1..5))
                .map(|j| ColumnMeta {
                    name: format!("{}{j}", word(rng)),
                    sql_type: *TYPES.choose(rng).unwrap(),
                    nullable: rng.random_bool(0.5),
                })
                .collect(),
            primary_key: vec![],
            foreign_keys: vec![],
        })
        .collect();
    SchemaMetadata::new(tables)
}

fn table(rng: &mut ChaCha8Rng) -> ResultTable {
    let columns: Vec<ResultColumn> = (0..rng.random_range(1..4))
        .map(|j| ResultColumn { name: format!("{}{j}", word(rng)), sql_type: SqlType::Integer })
        .collect();
    let rows = (0..rng.random_range(1..30))
        .map(|_| columns.iter().map(|_| Cell::Integer(rng.random_range(-99..99))).collect())
        .collect();
    ResultTable { columns, rows, truncated: false }
}

fn render(kind: TemplateKind, t: &PromptTemplate, meta: &SchemaMetadata, table: &ResultTable, q: &str) -> RenderedPrompt {
    match kind {
        TemplateKind::Generation => render_generation_prompt(t, meta, q).unwrap(),
        TemplateKind::Summarization => render_summarization_prompt(t, q, table, DEFAULT_PROMPT_ROW_CAP).unwrap(),
        TemplateKind::Visualization => match render_visualization_prompt(t, q, table, DEFAULT_PROMPT_ROW_CAP).unwrap() {
            VisualizationPrompt::Prompt(p) => p,
            VisualizationPrompt::Skipped => panic!("non-empty table skipped"),
        },
    }
}

/// Expected generation text built by plain string replacement.
fn expected_generation(t: &PromptTemplate, meta: &SchemaMetadata, q: &str) -> String {
    let body = t.body.replace("{metadata}", &serialize_schema(meta)).replace("{query}", q);
    if t.instructions.trim().is_empty() {
        body
    } else {
        format!("{}\n\n{body}", t.instructions.trim_end())
    }
}

fn goldens() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let ds = open_sports(&sports_db(dir.path()));
    let meta = ds.introspect().unwrap();
    let top = ds.execute("SELECT name, ppg, team_id FROM players ORDER BY ppg DESC LIMIT 3").unwrap();
    let defaults = TemplateSet::default();
    let question = "Who are the top three scorers?";
    let cases = [
        ("default-generation.txt", render(TemplateKind::Generation, &defaults.generation, &meta, &top, question)),
        ("default-summarization.txt", render(TemplateKind::Summarization, &defaults.summarization, &meta, &top, question)),
        ("default-visualization.txt", render(TemplateKind::Visualization, &defaults.visualization, &meta, &top, question)),
    ];
    for (file, prompt) in cases {
        let golden = std::fs::read_to_string(workspace("crates/core/tests/golden").join(file))
            .map_err(|e| format!("{file}: {e}"))?;
        ensure(prompt.text == golden, || format!("{file} differs from the rendered default"))?;
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100 {
        let kind = *TemplateKind::ALL.choose(&mut rng).unwrap();
        let t = template(&mut rng, kind);
        let meta = schema(&mut rng);
        let tab = table(&mut rng);
        let q = format!("{} {}?", word(&mut rng), word(&mut rng));
        let a = render(kind, &t, &meta, &tab, &q);
        let b = render(kind, &t.clone(), &meta.clone(), &tab.clone(), &q.clone());
        ensure(a.text.as_bytes() == b.text.as_bytes() && a == b, || format!("triple {i} rendered differently"))?;
        if kind == TemplateKind::Generation {
            ensure(a.text == expected_generation(&t, &meta, &q), || format!("triple {i}: not pure substitution"))?;
        }
    }
    goldens()?;
    Ok("100 random triples byte-identical across renders; 3 default templates match golden files".into())
}
