use super::template::{PromptTemplate, TemplateKind};

const GENERATION_INSTRUCTIONS: &str = "\
Translate the question into SQLite SQL for the database below.
Answer with exactly one read-only SELECT statement and no explanation.";

const GENERATION_BODY: &str = "\
### Database schema
{metadata}

### Question
{query}

### SQL
";

const SUMMARIZATION_INSTRUCTIONS: &str = "\
You are a data analyst. Answer the question in a few plain sentences,
using only the facts in the result table.";

const SUMMARIZATION_BODY: &str = "\
Question: {query}

Result table:
{result}

Answer:";

const VISUALIZATION_INSTRUCTIONS: &str = "\
You design charts. Reply with a single Vega-Lite JSON object that best
visualizes the result table for the question.";

const VISUALIZATION_BODY: &str = "\
Question: {query}

Chart grammar:
{grammar}

Columns:
{columns}

Result table:
{result}

Vega-Lite JSON:";

pub fn default_generation_template() -> PromptTemplate {
    PromptTemplate::new(
        "default-generation",
        TemplateKind::Generation,
        GENERATION_BODY,
        GENERATION_INSTRUCTIONS,
    )
    .expect("built-in generation template is valid")
}

pub fn default_summarization_template() -> PromptTemplate {
    PromptTemplate::new(
        "default-summarization",
        TemplateKind::Summarization,
        SUMMARIZATION_BODY,
        SUMMARIZATION_INSTRUCTIONS,
    )
    .expect("built-in summarization template is valid")
}

pub fn default_visualization_template() -> PromptTemplate {
    PromptTemplate::new(
        "default-visualization",
        TemplateKind::Visualization,
        VISUALIZATION_BODY,
        VISUALIZATION_INSTRUCTIONS,
    )
    .expect("built-in visualization template is valid")
}
